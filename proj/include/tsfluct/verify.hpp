#pragma once

#include "tsfluct/common.hpp"
#include "tsfluct/engine.hpp"
#include "tsfluct/fluct.hpp"
#include "tsfluct/limit.hpp"
#include "tsfluct/markov.hpp"
#include "tsfluct/model.hpp"
#include "tsfluct/schedules.hpp"
#include "tsfluct/stats.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace tsfluct {

struct Tolerances {
    double rel_frobenius = 0.15;  // covariance error cap at the window end
    double mean_sigmas = 3.0;     // ensemble mean must sit this close to zero
    double mc_sigmas = 3.0;       // multiplier on the Monte Carlo floor
    double kurtosis_band = 0.3;
    double noise_floor = 1e-6;    // absolute fallback when the law is degenerate
};

struct VerifyConfig {
    std::vector<index_t> anchors;
    double T = 4.0;
    index_t trajectories = 1000;
    std::uint64_t seed = 1;
    int grid_points = 64;
    // Comparison-ODE RK4 substeps per knot interval for the path-level ops;
    // the streaming runner instead advances the comparison lazily with steps
    // capped at T/2048, which keeps its error far below the Monte Carlo
    // floor at any knot density.
    int substeps = 16;
    // Skip the slow windows and report the w block as identically zero.
    // Only sound for decoupled configurations (g == 0 with frozen slow
    // iterates), where w vanishes exactly.
    bool u_only = false;
    InitialCondition init;
    index_t n_start = 0;
    std::vector<index_t> clt_indices;
    std::optional<Vec> y_star;
    std::vector<index_t> checkpoints;
    int threads = 0;  // 0 = hardware concurrency
    Tolerances tol;
    double plateau_T = 20.0;   // eta target: fast Lyapunov value out here
    int dt_divisor = 4096;     // limit integrations use dt = T / dt_divisor
    index_t validate_horizon = 10000;
    index_t phi_horizon = 1000000;
};

// ---------------------------------------------------------------------------
// Report types. Every pass flag is a pure function of the stored statistics
// and the tolerances, so reports can be re-evaluated under looser tolerances
// without touching the samples.

struct GridComparison {
    double t = 0.0;
    Vec emp_mean;
    Mat emp_cov;
    Mat th_cov;
};

struct AnchorReport {
    index_t anchor = 0;
    std::vector<GridComparison> curve;
    double rel_err_at_T = 0.0;
    double mc_floor_rel = 0.0;  // mc_sigmas * se_F / |th|_F
    double th_norm_at_T = 0.0;
    bool cov_pass = false;
    bool mean_pass = false;
    double w_sq_at_T = 0.0;  // ensemble E |w(T)|^2
    GaussianityStats normality;  // joint components at T
};

struct CltIndexRecord {
    index_t n = 0;
    Vec eta_mean;
    Mat eta_cov;
    double upsilon_sq = 0.0;  // E |upsilon_n|^2
};

struct CltReport {
    std::vector<CltIndexRecord> records;
    Mat eta_th;  // fast Lyapunov plateau
    double eta_rel_err = 0.0;
    double eta_mc_floor_rel = 0.0;
    bool eta_cov_pass = false;
    bool upsilon_decreasing = false;
    GaussianityStats eta_normality;
    bool kurtosis_pass = false;

    bool pass() const { return eta_cov_pass && upsilon_decreasing && kurtosis_pass; }
};

struct VerificationReport {
    std::string experiment;  // "fclt" | "theorem3" | "clt"
    std::string problem;
    index_t trajectories = 0;
    double T = 0.0;
    std::uint64_t seed = 0;
    Tolerances tol;
    ScheduleDiagnostics schedule;
    double phi_used = 0.0;
    bool theorem3_regime = false;
    Vec y_star_used;  // median anchor iterate (or configured equilibrium)

    std::vector<AnchorReport> anchors;
    bool bias_decay_ok = true;     // error at the last anchor <= first anchor
    bool w_decreasing = true;      // E|w(T)|^2 falls across anchors (theorem 3)
    std::optional<MomentDiagnostics> moments;
    std::optional<CltReport> clt;

    bool overall_pass = false;
};

// ---------------------------------------------------------------------------
// Streaming ensemble runner. Each trajectory walks the recursion once and
// deposits compact observables into its own preallocated slot; reductions
// then run in trajectory order, which keeps every emitted statistic
// independent of the thread count.

namespace verify_detail {

struct WindowPlan {
    index_t anchor = 0;
    index_t u_end = 0;  // fast-clock window end m^f(anchor)
    index_t w_end = 0;  // w-window end on its own clock
    // w-knots adjacent to an output grid time; only these are evaluated,
    // which leaves the piecewise-linear grid values untouched while the
    // comparison ODE advances lazily in between
    std::vector<index_t> w_needed;
};

struct StreamPlan {
    std::vector<WindowPlan> windows;  // sorted by anchor
    std::vector<index_t> clt_indices;
    std::vector<index_t> checkpoints;
    std::vector<double> grid;  // offsets in [0, T]
    Clock w_variant = Clock::Slow;
    double cmp_step_cap = 1e-2;  // comparison integrator step bound
    index_t n_start = 0;
    index_t horizon = 0;  // last index whose iterate is consumed
};

// the two knots bracketing every grid offset, per window
inline void fill_needed_knots(WindowPlan& w, const ClockTable& clock,
                              const std::vector<double>& grid) {
    w.w_needed.clear();
    const double t0 = clock.at(w.anchor);
    for (double g : grid) {
        const double target = t0 + g;
        auto it = std::upper_bound(clock.times.begin() + w.anchor,
                                   clock.times.begin() + w.w_end + 1, target);
        index_t j_lo = static_cast<index_t>(it - clock.times.begin()) - 1;
        j_lo = std::max(j_lo, w.anchor);
        w.w_needed.push_back(j_lo);
        if (j_lo + 1 <= w.w_end) w.w_needed.push_back(j_lo + 1);
    }
    w.w_needed.push_back(w.anchor);
    std::sort(w.w_needed.begin(), w.w_needed.end());
    w.w_needed.erase(std::unique(w.w_needed.begin(), w.w_needed.end()), w.w_needed.end());
}

struct TrajRecord {
    bool ok = true;
    std::string error;
    index_t failed_at = -1;
    std::vector<double> u_grid;    // [window][grid][component]
    std::vector<double> w_grid;    // [window][grid][component]
    std::vector<double> anchor_y;  // [window][component]
    std::vector<double> eta;       // [clt index][component]
    std::vector<double> upsilon;   // [clt index][component]
    std::vector<double> u4;        // [checkpoint]
    std::vector<double> x4;        // [checkpoint]
};

// Emits uniform-grid values of a piecewise-linear path as its knots stream by.
class GridCursor {
public:
    void reset(const std::vector<double>& grid, double* out, int dim) {
        grid_ = &grid;
        out_ = out;
        dim_ = dim;
        next_ = 0;
        has_prev_ = false;
        prev_off_ = 0.0;
    }

    void knot(double off, const double* value) {
        while (next_ < grid_->size() && (*grid_)[next_] <= off + 1e-12) {
            const double g = (*grid_)[next_];
            double* slot = out_ + next_ * static_cast<std::size_t>(dim_);
            if (!has_prev_ || off <= prev_off_) {
                for (int c = 0; c < dim_; ++c) slot[c] = value[c];
            } else {
                const double th = std::clamp((g - prev_off_) / (off - prev_off_), 0.0, 1.0);
                for (int c = 0; c < dim_; ++c)
                    slot[c] = (1.0 - th) * prev_[c] + th * value[c];
            }
            ++next_;
        }
        prev_off_ = off;
        for (int c = 0; c < dim_; ++c) prev_[c] = value[c];
        has_prev_ = true;
    }

private:
    const std::vector<double>* grid_ = nullptr;
    double* out_ = nullptr;
    int dim_ = 0;
    std::size_t next_ = 0;
    double prev_off_ = 0.0;
    double prev_[kMaxDim] = {};
    bool has_prev_ = false;
};

struct WindowCursor {
    GridCursor u_cursor;
    GridCursor w_cursor;
    Vec cmp_state;                       // comparison ODE state at offset cmp_t
    double cmp_t = 0.0;
    std::size_t needed_ptr = 0;          // position in WindowPlan::w_needed
    std::function<Vec(const Vec&)> rhs;  // comparison field for this window
};

inline void run_one_trajectory(const ProblemSpec& spec, const SchedulePair& pair,
                               const StepPlan& step_plan, const AveragedFields& af,
                               const Clocks& clocks, const StreamPlan& plan,
                               const Vec* x_star, const Vec* y_star,
                               const InitialCondition& init, std::uint64_t seed,
                               index_t traj_index, TrajRecord& rec) {
    const int d1 = spec.d1, d2 = spec.d2;
    const std::size_t g_count = plan.grid.size();
    rec.u_grid.assign(plan.windows.size() * g_count * static_cast<std::size_t>(d1), 0.0);
    rec.w_grid.assign(plan.windows.size() * g_count * static_cast<std::size_t>(d2), 0.0);
    rec.anchor_y.assign(plan.windows.size() * static_cast<std::size_t>(d2), 0.0);
    rec.eta.assign(plan.clt_indices.size() * static_cast<std::size_t>(d1), 0.0);
    rec.upsilon.assign(plan.clt_indices.size() * static_cast<std::size_t>(d2), 0.0);
    rec.u4.assign(plan.checkpoints.size(), 0.0);
    rec.x4.assign(plan.checkpoints.size(), 0.0);

    const ClockTable& w_clock = (plan.w_variant == Clock::Slow) ? clocks.slow : clocks.fast;
    const std::vector<double>& tf = clocks.fast.times;
    const std::vector<double>& tw = w_clock.times;

    SAState st;
    st.n = plan.n_start;
    st.x = init.x0;
    st.y = init.y0;
    st.Y = init.Y0;
    st.rng = RngStream::substream(seed, static_cast<std::uint64_t>(traj_index));

    std::vector<WindowCursor> cursors(plan.windows.size());
    std::size_t clt_next = 0;
    std::size_t cp_next = 0;
    std::size_t win_lo = 0;

    double ubuf[kMaxDim];
    double wbuf[kMaxDim];

    try {
        for (index_t n = plan.n_start; n <= plan.horizon; ++n) {
            // window observables at the current iterate
            for (std::size_t k = win_lo; k < plan.windows.size(); ++k) {
                const WindowPlan& w = plan.windows[k];
                if (n < w.anchor) break;
                if (n > w.u_end && n > w.w_end) {
                    if (k == win_lo) ++win_lo;
                    continue;
                }
                WindowCursor& cur = cursors[k];
                if (n == w.anchor) {
                    for (int c = 0; c < d2; ++c)
                        rec.anchor_y[k * static_cast<std::size_t>(d2) +
                                     static_cast<std::size_t>(c)] = st.y[c];
                    cur.u_cursor.reset(plan.grid,
                                       rec.u_grid.data() +
                                           k * g_count * static_cast<std::size_t>(d1),
                                       d1);
                    cur.w_cursor.reset(plan.grid,
                                       rec.w_grid.data() +
                                           k * g_count * static_cast<std::size_t>(d2),
                                       d2);
                    cur.cmp_state = st.y;
                    cur.cmp_t = 0.0;
                    cur.needed_ptr = 0;
                    if (plan.w_variant == Clock::Slow) {
                        cur.rhs = af.fbar;
                    } else {
                        const double eps = pair.epsilon(w.anchor);
                        cur.rhs = [fbar = af.fbar, eps](const Vec& y) {
                            return Vec(eps * fbar(y));
                        };
                    }
                }
                if (n <= w.u_end) {
                    const double off = tf[static_cast<std::size_t>(n)] -
                                       tf[static_cast<std::size_t>(w.anchor)];
                    const double root_a = std::sqrt(pair.fast.value(n));
                    const Vec lam = spec.lambda(st.y);
                    for (int c = 0; c < d1; ++c) ubuf[c] = (lam[c] - st.x[c]) / root_a;
                    cur.u_cursor.knot(off, ubuf);
                }
                if (cur.needed_ptr < w.w_needed.size() && n == w.w_needed[cur.needed_ptr]) {
                    const double off = tw[static_cast<std::size_t>(n)] -
                                       tw[static_cast<std::size_t>(w.anchor)];
                    // lazy comparison advance; the bound keeps the RK4 error
                    // far below the Monte Carlo floor
                    while (cur.cmp_t < off - 1e-15) {
                        const double h = std::min(plan.cmp_step_cap, off - cur.cmp_t);
                        cur.cmp_state =
                            rk4_step(cur.cmp_state, cur.cmp_t, h,
                                     [&](double, const Vec& v) { return cur.rhs(v); });
                        cur.cmp_t += h;
                    }
                    cur.cmp_t = off;
                    const double root_a = std::sqrt(pair.fast.value(n));
                    for (int c = 0; c < d2; ++c)
                        wbuf[c] = (st.y[c] - cur.cmp_state[c]) / root_a;
                    cur.w_cursor.knot(off, wbuf);
                    ++cur.needed_ptr;
                }
            }
            if (clt_next < plan.clt_indices.size() && n == plan.clt_indices[clt_next]) {
                const double root_a = std::sqrt(pair.fast.value(n));
                for (int c = 0; c < d1; ++c)
                    rec.eta[clt_next * static_cast<std::size_t>(d1) +
                            static_cast<std::size_t>(c)] = ((*x_star)[c] - st.x[c]) / root_a;
                for (int c = 0; c < d2; ++c)
                    rec.upsilon[clt_next * static_cast<std::size_t>(d2) +
                                static_cast<std::size_t>(c)] =
                        (st.y[c] - (*y_star)[c]) / root_a;
                ++clt_next;
            }
            if (cp_next < plan.checkpoints.size() && n == plan.checkpoints[cp_next]) {
                const double a = pair.fast.value(n);
                const double un = (spec.lambda(st.y) - st.x).norm() / std::sqrt(a);
                const double xn = st.x.norm();
                rec.u4[cp_next] = un * un * un * un;
                rec.x4[cp_next] = xn * xn * xn * xn;
                ++cp_next;
            }
            if (n < plan.horizon) step_inplace(st, step_plan);
        }
    } catch (const DivergenceError& e) {
        rec.ok = false;
        rec.error = e.what();
        rec.failed_at = e.at_index;
    } catch (const std::exception& e) {
        rec.ok = false;
        rec.error = e.what();
    }
}

inline std::vector<TrajRecord> run_ensemble(const ProblemSpec& spec, const SchedulePair& pair,
                                            const Clocks& clocks, const StreamPlan& plan,
                                            const InitialCondition& init,
                                            index_t trajectories, std::uint64_t seed,
                                            int threads, const Vec* x_star,
                                            const Vec* y_star) {
    std::vector<TrajRecord> records(static_cast<std::size_t>(trajectories));
    StepPlan step_plan(spec, pair);
    // hoist the schedule evaluations; identical values, evaluated once
    std::vector<double> a_steps(static_cast<std::size_t>(plan.horizon) + 1);
    std::vector<double> b_steps(static_cast<std::size_t>(plan.horizon) + 1);
    for (index_t n = 0; n <= plan.horizon; ++n) {
        a_steps[static_cast<std::size_t>(n)] = pair.fast.value(n);
        b_steps[static_cast<std::size_t>(n)] = pair.slow.value(n);
    }
    step_plan.attach_tables(a_steps, b_steps);
    const AveragedFields af = averaged_fields(spec);
    if ((plan.w_variant == Clock::Slow || plan.w_variant == Clock::Fast) &&
        !plan.windows.empty() && !af.fbar)
        throw ConfigError("windowed experiments need lambda to form fbar");

    int n_threads = threads > 0 ? threads
                                : static_cast<int>(std::thread::hardware_concurrency());
    if (n_threads < 1) n_threads = 1;
    n_threads = static_cast<int>(
        std::min<index_t>(n_threads, std::max<index_t>(1, trajectories)));

    std::atomic<index_t> cursor{0};
    auto worker = [&] {
        for (;;) {
            const index_t i = cursor.fetch_add(1);
            if (i >= trajectories) return;
            run_one_trajectory(spec, pair, step_plan, af, clocks, plan, x_star, y_star,
                               init, seed, i, records[static_cast<std::size_t>(i)]);
        }
    };
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(n_threads));
        for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    // deterministic failure propagation: first failing trajectory wins
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (!records[i].ok)
            throw DivergenceError("trajectory " + std::to_string(i) + ": " + records[i].error,
                                  records[i].failed_at);
    }
    return records;
}

// Per-component median across trajectories of the anchor iterate. For even
// counts this takes the mean of the two central order statistics.
inline Vec median_anchor_y(const std::vector<TrajRecord>& records, std::size_t window,
                           int d2) {
    Vec med(d2);
    std::vector<double> comp(records.size());
    for (int c = 0; c < d2; ++c) {
        for (std::size_t i = 0; i < records.size(); ++i)
            comp[i] = records[i].anchor_y[window * static_cast<std::size_t>(d2) +
                                          static_cast<std::size_t>(c)];
        std::sort(comp.begin(), comp.end());
        const std::size_t n = comp.size();
        med[c] = (n % 2 == 1) ? comp[n / 2] : 0.5 * (comp[n / 2 - 1] + comp[n / 2]);
    }
    return med;
}

inline std::vector<Vec> joint_samples_at(const std::vector<TrajRecord>& records,
                                         std::size_t window, std::size_t g_index,
                                         std::size_t g_count, int d1, int d2) {
    std::vector<Vec> z(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        Vec v(d1 + d2);
        const double* u = records[i].u_grid.data() +
                          (window * g_count + g_index) * static_cast<std::size_t>(d1);
        const double* w = records[i].w_grid.data() +
                          (window * g_count + g_index) * static_cast<std::size_t>(d2);
        for (int c = 0; c < d1; ++c) v[c] = u[c];
        for (int c = 0; c < d2; ++c) v[d1 + c] = w[c];
        z[i] = v;
    }
    return z;
}

struct CovCheck {
    double rel_err = 0.0;
    double mc_floor_rel = 0.0;
    bool pass = false;
};

inline CovCheck covariance_check(const Mat& emp, const Mat& th, index_t n,
                                 const Tolerances& tol) {
    CovCheck c;
    const double th_norm = th.norm();
    if (th_norm <= 1e-12) {
        c.rel_err = emp.norm();
        c.mc_floor_rel = 0.0;
        c.pass = emp.norm() <= tol.noise_floor;
        return c;
    }
    c.rel_err = (emp - th).norm() / th_norm;
    c.mc_floor_rel = tol.mc_sigmas * mc_se_frobenius(th, n) / th_norm;
    c.pass = c.rel_err <= std::max(tol.rel_frobenius, c.mc_floor_rel);
    return c;
}

}  // namespace verify_detail

// ---------------------------------------------------------------------------
// Experiments

enum class ExperimentKind { Fclt, Theorem3, Clt };

namespace verify_detail {

inline double resolve_phi(const ScheduleDiagnostics& diag) {
    // Sub-threshold estimates are treated as the exact zero of the phi = 0
    // regime; otherwise the estimated limit feeds the drift correction.
    return (diag.phi.converged && std::abs(diag.phi.value) > 1e-3) ? diag.phi.value : 0.0;
}

inline ScheduleDiagnostics schedule_diagnostics(const SchedulePair& pair,
                                                const VerifyConfig& cfg) {
    index_t n_validate = cfg.validate_horizon;
    index_t n_phi = cfg.phi_horizon;
    if (pair.fast.kind() == StepSchedule::Kind::Tabulated)
        n_phi = std::min(n_phi, pair.fast.table_size() - 1);
    if (pair.slow.kind() == StepSchedule::Kind::Tabulated)
        n_phi = std::min(n_phi, pair.slow.table_size() - 1);
    ScheduleDiagnostics diag = validate_pair(pair, n_validate);
    diag.phi = phi_limit(pair.fast, std::max<index_t>(n_phi, 100));
    diag.vartheta = phi_limit(pair.slow, std::max<index_t>(n_phi, 100));
    return diag;
}

// Builds the limit law for the configured experiment. Theorem-3 windows are
// checked against a law with a frozen slow trajectory whose slow block is
// w' = (phi/2) w with zero initial data and no fast coupling.
inline GaussMarkovSpec law_for(const ProblemSpec& spec, ExperimentKind kind,
                               const Vec& y_star0, double phi, double horizon,
                               int path_steps) {
    GaussMarkovSpec gm = make_gauss_markov(spec, y_star0, phi, horizon, path_steps);
    if (kind == ExperimentKind::Theorem3) {
        const int d2 = spec.d2;
        gm.y_star = DensePath::constant(y_star0, horizon);
        gm.B_of_y = [d2, d1 = spec.d1](const Vec&) { return Mat(Mat::Zero(d2, d1)); };
        gm.C_of_y = [d2, phi](const Vec&) {
            return Mat(0.5 * phi * Mat::Identity(d2, d2));
        };
    }
    return gm;
}

}  // namespace verify_detail

inline VerificationReport run_windowed_experiment(const ProblemSpec& spec,
                                                  const SchedulePair& pair,
                                                  const VerifyConfig& cfg,
                                                  ExperimentKind kind) {
    using namespace verify_detail;
    if (cfg.anchors.empty()) throw ConfigError("experiment needs at least one anchor");
    if (cfg.trajectories < 500)
        throw ConfigError("windowed experiments need at least 500 trajectories");

    VerificationReport rep;
    rep.experiment = (kind == ExperimentKind::Theorem3) ? "theorem3" : "fclt";
    rep.problem = spec.name;
    rep.trajectories = cfg.trajectories;
    rep.T = cfg.T;
    rep.seed = cfg.seed;
    rep.tol = cfg.tol;
    rep.schedule = schedule_diagnostics(pair, cfg);
    rep.phi_used = resolve_phi(rep.schedule);
    rep.theorem3_regime = rep.schedule.theorem3_regime();

    StreamPlan plan;
    plan.w_variant = (kind == ExperimentKind::Theorem3) ? Clock::Fast : Clock::Slow;
    plan.cmp_step_cap = cfg.T / 2048.0;
    plan.n_start = cfg.n_start;
    plan.grid = uniform_grid(cfg.T, cfg.grid_points);
    plan.checkpoints = cfg.checkpoints;
    std::sort(plan.checkpoints.begin(), plan.checkpoints.end());

    std::vector<index_t> anchors = cfg.anchors;
    std::sort(anchors.begin(), anchors.end());

    // clock horizon: grow until every window closes
    index_t clock_len = 2 * anchors.back() + 16;
    Clocks clocks;
    for (;;) {
        clocks = make_clocks(pair, clock_len);
        try {
            plan.windows.clear();
            for (index_t a : anchors) {
                WindowPlan w;
                w.anchor = a;
                w.u_end = window_end(clocks.fast, a, cfg.T);
                const ClockTable& w_clock =
                    plan.w_variant == Clock::Slow ? clocks.slow : clocks.fast;
                w.w_end = cfg.u_only ? a : window_end(w_clock, a, cfg.T);
                fill_needed_knots(w, w_clock, plan.grid);
                plan.windows.push_back(w);
            }
            break;
        } catch (const HorizonError&) {
            clock_len *= 2;
            if (clock_len > (index_t(1) << 33))
                throw HorizonError("window horizon beyond 2^33 steps; T too large");
        }
    }
    plan.horizon = 0;
    for (const auto& w : plan.windows)
        plan.horizon = std::max({plan.horizon, w.u_end, w.w_end});
    for (index_t cp : plan.checkpoints) plan.horizon = std::max(plan.horizon, cp);

    const auto records = run_ensemble(spec, pair, clocks, plan, cfg.init, cfg.trajectories,
                                      cfg.seed, cfg.threads, nullptr, nullptr);

    const int d1 = spec.d1, d2 = spec.d2;
    const std::size_t g_count = plan.grid.size();
    const double dt = cfg.T / cfg.dt_divisor;

    for (std::size_t k = 0; k < plan.windows.size(); ++k) {
        AnchorReport ar;
        ar.anchor = plan.windows[k].anchor;
        const Vec y_med = median_anchor_y(records, k, d2);
        if (k == plan.windows.size() - 1) rep.y_star_used = y_med;
        const GaussMarkovSpec gm =
            law_for(spec, kind, y_med, rep.phi_used, cfg.T, cfg.dt_divisor);
        const CovarianceCurve curve = lyapunov_covariance(gm, cfg.T, dt);

        for (std::size_t g = 0; g < g_count; ++g) {
            const auto z = joint_samples_at(records, k, g, g_count, d1, d2);
            const MeanCov mc = mean_cov(z);
            GridComparison rec;
            rec.t = plan.grid[g];
            rec.emp_mean = mc.mean;
            rec.emp_cov = mc.cov;
            rec.th_cov = curve.eval(plan.grid[g]);
            ar.curve.push_back(std::move(rec));
            if (g + 1 == g_count) {
                const CovCheck cc =
                    covariance_check(mc.cov, ar.curve.back().th_cov, mc.count, cfg.tol);
                ar.rel_err_at_T = cc.rel_err;
                ar.mc_floor_rel = cc.mc_floor_rel;
                ar.th_norm_at_T = ar.curve.back().th_cov.norm();
                ar.cov_pass = cc.pass;
                ar.mean_pass =
                    mean_within_sigmas(mc.mean, mc.cov, mc.count, cfg.tol.mean_sigmas);
                ar.normality = gaussianity_stats(z, 500);
                double wsq = 0.0;
                for (const Vec& v : z) wsq += v.tail(d2).squaredNorm();
                ar.w_sq_at_T = wsq / static_cast<double>(z.size());
            }
        }
        rep.anchors.push_back(std::move(ar));
    }

    rep.bias_decay_ok = true;
    if (rep.anchors.size() >= 2)
        rep.bias_decay_ok = rep.anchors.back().rel_err_at_T <= rep.anchors.front().rel_err_at_T;
    rep.w_decreasing = true;
    for (std::size_t k = 1; k < rep.anchors.size(); ++k)
        if (rep.anchors[k].w_sq_at_T >= rep.anchors[k - 1].w_sq_at_T)
            rep.w_decreasing = false;

    if (!plan.checkpoints.empty()) {
        std::vector<std::vector<double>> u4(records.size()), x4(records.size());
        for (std::size_t i = 0; i < records.size(); ++i) {
            u4[i] = records[i].u4;
            x4[i] = records[i].x4;
        }
        rep.moments = moment_diagnostics_from_samples(plan.checkpoints, u4, x4);
    }

    bool pass = true;
    for (const auto& ar : rep.anchors) pass = pass && ar.cov_pass && ar.mean_pass;
    if (kind == ExperimentKind::Fclt && rep.anchors.size() >= 2) pass = pass && rep.bias_decay_ok;
    if (kind == ExperimentKind::Theorem3 && rep.anchors.size() >= 2)
        pass = pass && rep.w_decreasing;
    if (rep.moments) pass = pass && rep.moments->bounded();
    rep.overall_pass = pass;
    return rep;
}

inline VerificationReport run_fclt_experiment(const ProblemSpec& spec, const SchedulePair& pair,
                                              const VerifyConfig& cfg) {
    return run_windowed_experiment(spec, pair, cfg, ExperimentKind::Fclt);
}

inline VerificationReport run_theorem3_experiment(const ProblemSpec& spec,
                                                  const SchedulePair& pair,
                                                  const VerifyConfig& cfg) {
    return run_windowed_experiment(spec, pair, cfg, ExperimentKind::Theorem3);
}

// eta/upsilon ensemble statistics against the stationary fast law at the
// supplied equilibrium y*.
inline VerificationReport run_clt_experiment(const ProblemSpec& spec, const SchedulePair& pair,
                                             const VerifyConfig& cfg) {
    using namespace verify_detail;
    if (!cfg.y_star) throw ConfigError("clt experiment needs y_star");
    if (cfg.clt_indices.empty()) throw ConfigError("clt experiment needs indices");
    if (cfg.trajectories < 500) throw ConfigError("clt experiment needs >= 500 trajectories");

    VerificationReport rep;
    rep.experiment = "clt";
    rep.problem = spec.name;
    rep.trajectories = cfg.trajectories;
    rep.T = cfg.T;
    rep.seed = cfg.seed;
    rep.tol = cfg.tol;
    rep.schedule = schedule_diagnostics(pair, cfg);
    rep.phi_used = resolve_phi(rep.schedule);
    rep.theorem3_regime = rep.schedule.theorem3_regime();
    rep.y_star_used = *cfg.y_star;

    StreamPlan plan;
    plan.w_variant = Clock::Fast;
    plan.n_start = cfg.n_start;
    plan.grid = {};  // no windows
    plan.clt_indices = cfg.clt_indices;
    std::sort(plan.clt_indices.begin(), plan.clt_indices.end());
    plan.checkpoints = cfg.checkpoints;
    std::sort(plan.checkpoints.begin(), plan.checkpoints.end());
    plan.horizon = plan.clt_indices.back();
    for (index_t cp : plan.checkpoints) plan.horizon = std::max(plan.horizon, cp);

    const Clocks clocks = make_clocks(pair, plan.horizon + 2);
    const Vec y_star = *cfg.y_star;
    const Vec x_star = spec.lambda(y_star);
    {
        const AveragedFields af = averaged_fields(spec);
        if (af.fbar && af.fbar(y_star).norm() > 1e-6)
            throw ConfigError("y_star is not an equilibrium of the averaged slow field");
    }

    const auto records = run_ensemble(spec, pair, clocks, plan, cfg.init, cfg.trajectories,
                                      cfg.seed, cfg.threads, &x_star, &y_star);

    const int d1 = spec.d1, d2 = spec.d2;
    CltReport clt;
    std::vector<Vec> eta_last;
    for (std::size_t j = 0; j < plan.clt_indices.size(); ++j) {
        std::vector<Vec> eta(records.size());
        double ups_sq = 0.0;
        for (std::size_t i = 0; i < records.size(); ++i) {
            Vec e(d1);
            for (int c = 0; c < d1; ++c)
                e[c] = records[i].eta[j * static_cast<std::size_t>(d1) +
                                      static_cast<std::size_t>(c)];
            eta[i] = e;
            double s = 0.0;
            for (int c = 0; c < d2; ++c) {
                const double v = records[i].upsilon[j * static_cast<std::size_t>(d2) +
                                                    static_cast<std::size_t>(c)];
                s += v * v;
            }
            ups_sq += s;
        }
        const MeanCov mc = mean_cov(eta);
        CltIndexRecord rec;
        rec.n = plan.clt_indices[j];
        rec.eta_mean = mc.mean;
        rec.eta_cov = mc.cov;
        rec.upsilon_sq = ups_sq / static_cast<double>(records.size());
        clt.records.push_back(rec);
        if (j + 1 == plan.clt_indices.size()) eta_last = std::move(eta);
    }

    // stationary fast variance: Lyapunov value far out on the plateau
    const GaussMarkovSpec gm = make_gauss_markov(spec, y_star, rep.phi_used, cfg.plateau_T,
                                                 cfg.dt_divisor);
    const CovarianceCurve curve =
        lyapunov_covariance(gm, cfg.plateau_T, cfg.plateau_T / cfg.dt_divisor);
    clt.eta_th = curve.sigmas.back().topLeftCorner(d1, d1);

    const CovCheck cc = covariance_check(clt.records.back().eta_cov, clt.eta_th,
                                         static_cast<index_t>(records.size()), cfg.tol);
    clt.eta_rel_err = cc.rel_err;
    clt.eta_mc_floor_rel = cc.mc_floor_rel;
    clt.eta_cov_pass = cc.pass;
    clt.upsilon_decreasing = true;
    for (std::size_t j = 1; j < clt.records.size(); ++j)
        if (clt.records[j].upsilon_sq >= clt.records[j - 1].upsilon_sq)
            clt.upsilon_decreasing = false;
    clt.eta_normality = gaussianity_stats(eta_last, 500);
    clt.kurtosis_pass = clt.eta_normality.max_abs_kurtosis() <= cfg.tol.kurtosis_band;

    if (!plan.checkpoints.empty()) {
        std::vector<std::vector<double>> u4(records.size()), x4(records.size());
        for (std::size_t i = 0; i < records.size(); ++i) {
            u4[i] = records[i].u4;
            x4[i] = records[i].x4;
        }
        rep.moments = moment_diagnostics_from_samples(plan.checkpoints, u4, x4);
    }

    rep.clt = std::move(clt);
    rep.overall_pass = rep.clt->pass() && (!rep.moments || rep.moments->bounded());
    return rep;
}

// Feeds the exact law's own sampler through the comparison pipeline; a
// failure here points at the statistics machinery rather than simulation
// bias.
struct SelfTestResult {
    double rel_err_at_T = 0.0;
    double mc_floor_rel = 0.0;
    bool pass = false;
};

inline SelfTestResult pipeline_selftest(const ProblemSpec& spec, const Vec& y_star0,
                                        double phi, double T, index_t n_paths,
                                        std::uint64_t seed, const Tolerances& tol,
                                        int dt_divisor = 4096, int grid_points = 64) {
    const GaussMarkovSpec gm = make_gauss_markov(spec, y_star0, phi, T, dt_divisor);
    const CovarianceCurve curve = lyapunov_covariance(gm, T, T / dt_divisor);
    const LimitPathEnsemble ens =
        sample_limit_paths(gm, n_paths, T, T / dt_divisor, seed, grid_points);
    std::vector<Vec> at_T(ens.paths.size());
    for (std::size_t i = 0; i < ens.paths.size(); ++i) at_T[i] = ens.paths[i].back();
    const MeanCov mc = mean_cov(at_T);
    const verify_detail::CovCheck cc =
        verify_detail::covariance_check(mc.cov, curve.sigmas.back(), mc.count, tol);
    return SelfTestResult{cc.rel_err, cc.mc_floor_rel, cc.pass};
}

}  // namespace tsfluct
