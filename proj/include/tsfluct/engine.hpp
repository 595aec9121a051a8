#pragma once

#include "tsfluct/common.hpp"
#include "tsfluct/limit.hpp"
#include "tsfluct/markov.hpp"
#include "tsfluct/model.hpp"
#include "tsfluct/rng.hpp"
#include "tsfluct/schedules.hpp"

#include <cmath>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

namespace tsfluct {

inline constexpr double kDivergenceBound = 1e12;

// Mean-zero Gaussian draw with covariance Q, via the symmetric PSD root.
inline Vec martingale_draw(const Mat& q, RngStream& rng) {
    const Mat g = sqrt_psd(q);
    return g * rng.normal_vec(static_cast<int>(g.rows()));
}

struct SAState {
    index_t n = 0;
    Vec x;
    Vec y;
    int Y = 0;
    RngStream rng{0};
};

// Per-run constants hoisted out of the step loop. Valid only while the
// ProblemSpec (and any step tables) outlive it.
struct StepPlan {
    const ProblemSpec* spec = nullptr;
    const SchedulePair* pair = nullptr;
    bool cached_roots = false;
    Mat gf, gs;  // cached square roots when covariances are constant
    // optional precomputed step sizes a(n), b(n) for n < tab_len; the values
    // come from the same schedule evaluation, just hoisted
    const double* a_tab = nullptr;
    const double* b_tab = nullptr;
    index_t tab_len = 0;
    // the scalar path mirrors the generic arithmetic operation for operation;
    // exposed so tests can pin the bitwise equivalence
    bool scalar_path = false;

    StepPlan(const ProblemSpec& s, const SchedulePair& p) : spec(&s), pair(&p) {
        if (s.constant_covariances) {
            Vec x0 = Vec::Zero(s.d1), y0 = Vec::Zero(s.d2);
            gf = sqrt_psd(s.Qf(x0, y0));
            gs = sqrt_psd(s.Qs(x0, y0));
            cached_roots = true;
        }
        scalar_path = cached_roots && s.d1 == 1 && s.d2 == 1;
    }

    void attach_tables(const std::vector<double>& a_steps,
                       const std::vector<double>& b_steps) {
        a_tab = a_steps.data();
        b_tab = b_steps.data();
        tab_len = static_cast<index_t>(std::min(a_steps.size(), b_steps.size()));
    }
};

// One update of the coupled recursion. RNG consumption per step is fixed:
// the fast draw, then the slow draw, then one uniform for the chain move
// (consumed even when S = 1). Drifts, covariances and the kernel are all
// evaluated at the pre-update iterates.
inline void step_inplace(SAState& st, const StepPlan& plan,
                         Vec* mf_out = nullptr, Vec* ms_out = nullptr) {
    const ProblemSpec& spec = *plan.spec;
    const bool tab = plan.a_tab && st.n < plan.tab_len;
    const double a = tab ? plan.a_tab[st.n] : plan.pair->fast.value(st.n);
    const double b = tab ? plan.b_tab[st.n] : plan.pair->slow.value(st.n);

    if (plan.scalar_path && !mf_out && !ms_out) {
        double z0, z1, z2, z3;
        st.rng.normal_pair(z0, z1);  // fast draw consumes one pair
        st.rng.normal_pair(z2, z3);  // slow draw consumes the next
        const double mf = plan.gf(0, 0) * z0;
        const double ms = plan.gs(0, 0) * z2;
        const double u = st.rng.uniform();
        const double xn = st.x[0] + a * (spec.h(st.x, st.y, st.Y)[0] + mf);
        const double yn = st.y[0] + b * (spec.g(st.x, st.y, st.Y)[0] + ms);
        int ynext = 0;
        if (spec.S > 1) {
            const KernelMatrix k = spec.kernel_at(st.x, st.y);
            ynext = sample_next(k, st.Y, u);
        }
        if (!std::isfinite(xn) || !std::isfinite(yn) || std::abs(xn) > kDivergenceBound ||
            std::abs(yn) > kDivergenceBound)
            throw DivergenceError("iterate diverged at step " + std::to_string(st.n), st.n);
        st.x[0] = xn;
        st.y[0] = yn;
        st.Y = ynext;
        st.n += 1;
        return;
    }

    const Vec mf = plan.cached_roots ? Vec(plan.gf * st.rng.normal_vec(spec.d1))
                                     : martingale_draw(spec.Qf(st.x, st.y), st.rng);
    const Vec ms = plan.cached_roots ? Vec(plan.gs * st.rng.normal_vec(spec.d2))
                                     : martingale_draw(spec.Qs(st.x, st.y), st.rng);
    const double u = st.rng.uniform();

    const Vec xn = st.x + a * (spec.h(st.x, st.y, st.Y) + mf);
    const Vec yn = st.y + b * (spec.g(st.x, st.y, st.Y) + ms);
    int ynext = 0;
    if (spec.S > 1) {
        const KernelMatrix k = spec.kernel_at(st.x, st.y);
        ynext = sample_next(k, st.Y, u);
    }
    if (!xn.allFinite() || !yn.allFinite() ||
        xn.lpNorm<Eigen::Infinity>() > kDivergenceBound ||
        yn.lpNorm<Eigen::Infinity>() > kDivergenceBound)
        throw DivergenceError("iterate diverged at step " + std::to_string(st.n), st.n);

    if (mf_out) *mf_out = mf;
    if (ms_out) *ms_out = ms;
    st.x = xn;
    st.y = yn;
    st.Y = ynext;
    st.n += 1;
}

inline SAState step(const SAState& st, const ProblemSpec& spec, const SchedulePair& pair) {
    StepPlan plan(spec, pair);
    SAState next = st;
    step_inplace(next, plan);
    return next;
}

// Realized iterates over [n_start, n_end), with the noise draws kept only
// when asked for (decomposition diagnostics want them; long runs do not).
struct Trajectory {
    index_t n_start = 0;
    index_t n_end = 0;
    std::vector<Vec> xs;
    std::vector<Vec> ys;
    std::vector<int> Ys;
    std::vector<Vec> mf;  // noise applied moving k -> k+1; size count-1 when recorded
    std::vector<Vec> ms;
    bool has_noise = false;

    index_t count() const { return n_end - n_start; }
    std::size_t offset(index_t n) const {
        if (n < n_start || n >= n_end) throw Error("trajectory index out of range");
        return static_cast<std::size_t>(n - n_start);
    }
    const Vec& x(index_t n) const { return xs[offset(n)]; }
    const Vec& y(index_t n) const { return ys[offset(n)]; }
    int markov_state(index_t n) const { return Ys[offset(n)]; }
};

struct InitialCondition {
    Vec x0;
    Vec y0;
    int Y0 = 0;
};

inline Trajectory simulate(const ProblemSpec& spec, const SchedulePair& pair, index_t n_start,
                           index_t n_end, const InitialCondition& init, std::uint64_t seed,
                           bool record_noise = false, std::uint64_t stream_index = 0) {
    if (n_end <= n_start) throw Error("simulate needs n_end > n_start");
    StepPlan plan(spec, pair);
    SAState st;
    st.n = n_start;
    st.x = init.x0;
    st.y = init.y0;
    st.Y = init.Y0;
    st.rng = RngStream::substream(seed, stream_index);

    Trajectory traj;
    traj.n_start = n_start;
    traj.n_end = n_end;
    traj.has_noise = record_noise;
    const auto count = static_cast<std::size_t>(n_end - n_start);
    traj.xs.reserve(count);
    traj.ys.reserve(count);
    traj.Ys.reserve(count);
    if (record_noise) {
        traj.mf.reserve(count - 1);
        traj.ms.reserve(count - 1);
    }
    for (index_t n = n_start; n < n_end; ++n) {
        traj.xs.push_back(st.x);
        traj.ys.push_back(st.y);
        traj.Ys.push_back(st.Y);
        if (n + 1 == n_end) break;
        Vec mf, ms;
        step_inplace(st, plan, record_noise ? &mf : nullptr, record_noise ? &ms : nullptr);
        if (record_noise) {
            traj.mf.push_back(std::move(mf));
            traj.ms.push_back(std::move(ms));
        }
    }
    return traj;
}

// Delete-1 jackknife standard error of the sample mean.
inline double jackknife_se(std::span<const double> values) {
    const std::size_t n = values.size();
    if (n < 2) return 0.0;
    double total = 0.0;
    for (double v : values) total += v;
    const double full_mean = total / static_cast<double>(n);
    double ss = 0.0;
    for (double v : values) {
        const double loo = (total - v) / static_cast<double>(n - 1);
        ss += (loo - full_mean) * (loo - full_mean);
    }
    return std::sqrt(ss * static_cast<double>(n - 1) / static_cast<double>(n));
}

// Fourth-moment growth check: an estimate may not exceed the running
// maximum of the earlier checkpoints by more than two standard errors.
struct MomentDiagnostics {
    std::vector<index_t> checkpoints;
    std::vector<double> u4;  // E ||u_n||^4
    std::vector<double> u4_se;
    std::vector<double> x4;  // E ||x_n||^4
    std::vector<double> x4_se;
    bool u4_bounded = true;
    bool x4_bounded = true;

    bool bounded() const { return u4_bounded && x4_bounded; }
};

inline bool running_max_ok(const std::vector<double>& est, const std::vector<double>& se) {
    double runmax = est.empty() ? 0.0 : est.front();
    for (std::size_t k = 1; k < est.size(); ++k) {
        if (est[k] > runmax + 2.0 * se[k]) return false;
        runmax = std::max(runmax, est[k]);
    }
    return true;
}

// samples[i] holds one trajectory's ||u||^4 (resp. ||x||^4) at each checkpoint.
inline MomentDiagnostics moment_diagnostics_from_samples(
    std::vector<index_t> checkpoints, const std::vector<std::vector<double>>& u4_samples,
    const std::vector<std::vector<double>>& x4_samples) {
    if (u4_samples.size() < 100)
        throw Error("moment diagnostics need at least 100 trajectories");
    MomentDiagnostics d;
    d.checkpoints = std::move(checkpoints);
    const std::size_t n_traj = u4_samples.size();
    for (std::size_t k = 0; k < d.checkpoints.size(); ++k) {
        std::vector<double> u(n_traj), x(n_traj);
        for (std::size_t i = 0; i < n_traj; ++i) {
            u[i] = u4_samples[i][k];
            x[i] = x4_samples[i][k];
        }
        double um = 0.0, xm = 0.0;
        for (std::size_t i = 0; i < n_traj; ++i) {
            um += u[i];
            xm += x[i];
        }
        d.u4.push_back(um / static_cast<double>(n_traj));
        d.x4.push_back(xm / static_cast<double>(n_traj));
        d.u4_se.push_back(jackknife_se(u));
        d.x4_se.push_back(jackknife_se(x));
    }
    d.u4_bounded = running_max_ok(d.u4, d.u4_se);
    d.x4_bounded = running_max_ok(d.x4, d.x4_se);
    return d;
}

inline MomentDiagnostics moment_diagnostics(std::span<const Trajectory> ensemble,
                                            const ProblemSpec& spec, const SchedulePair& pair,
                                            const std::vector<index_t>& checkpoints) {
    std::vector<std::vector<double>> u4(ensemble.size()), x4(ensemble.size());
    for (std::size_t i = 0; i < ensemble.size(); ++i) {
        for (index_t n : checkpoints) {
            const Vec& x = ensemble[i].x(n);
            const Vec& y = ensemble[i].y(n);
            const double a = pair.fast.value(n);
            const double un = (spec.lambda(y) - x).norm() / std::sqrt(a);
            u4[i].push_back(un * un * un * un);
            const double xn = x.norm();
            x4[i].push_back(xn * xn * xn * xn);
        }
    }
    return moment_diagnostics_from_samples(checkpoints, u4, x4);
}

}  // namespace tsfluct
