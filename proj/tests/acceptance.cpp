// Acceptance suite: exercises every end-to-end requirement at desk scale and
// prints one pass/fail line per criterion. Exits nonzero if any line fails.

#include "tsfluct/engine.hpp"
#include "tsfluct/fluct.hpp"
#include "tsfluct/io.hpp"
#include "tsfluct/limit.hpp"
#include "tsfluct/markov.hpp"
#include "tsfluct/model.hpp"
#include "tsfluct/rng.hpp"
#include "tsfluct/schedules.hpp"
#include "tsfluct/verify.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace tsfluct;

namespace {

int g_failures = 0;

struct Criterion {
    int id;
    const char* label;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    bool ok = true;
    std::string detail;

    Criterion(int i, const char* l) : id(i), label(l) {}

    void expect(bool cond, const std::string& what) {
        if (!cond) {
            ok = false;
            if (!detail.empty()) detail += "; ";
            detail += what;
        }
    }

    void finish() {
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::printf("[%s] criterion %2d (%.1fs): %s%s%s\n", ok ? "PASS" : "FAIL", id, secs,
                    label, detail.empty() ? "" : " -- ", detail.c_str());
        std::fflush(stdout);
        if (!ok) ++g_failures;
    }
};

Vec scalar(double v) {
    Vec x(1);
    x[0] = v;
    return x;
}

SchedulePair remark_pair() {
    return SchedulePair{StepSchedule::power_law(0.9, 0.6), StepSchedule::power_law(0.8, 0.95),
                        0};
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

// ---------------------------------------------------------------------------

void criterion1_markov_algebra() {
    Criterion c(1, "markov algebra: stationary and Poisson residuals");
    RngStream rng(101);
    for (int trial = 0; trial < 100; ++trial) {
        const int s = 2 + static_cast<int>(rng.uniform() * 7.0);
        KernelMatrix k;
        k.P = Mat(s, s);
        for (int i = 0; i < s; ++i) {
            double row = 0.0;
            for (int j = 0; j < s; ++j) {
                k.P(i, j) = 0.02 + rng.uniform();
                row += k.P(i, j);
            }
            for (int j = 0; j < s; ++j) k.P(i, j) /= row;
        }
        const Vec pi = stationary(k);
        c.expect((k.P.transpose() * pi - pi).lpNorm<Eigen::Infinity>() <= 1e-12,
                 "stationary residual above 1e-12");
        Mat reward(s, 1);
        for (int i = 0; i < s; ++i) reward(i, 0) = 2.0 * rng.uniform() - 1.0;
        const PoissonSolution sol = poisson_solve(k, reward, 0);
        for (int i = 0; i < s; ++i) {
            const double resid = (sol.V.row(i) - reward.row(i) + sol.rbar.transpose() -
                                  k.P.row(i) * sol.V)
                                     .lpNorm<Eigen::Infinity>();
            c.expect(resid <= 1e-10, "poisson residual above 1e-10");
        }
    }
    KernelMatrix wk;
    wk.P = Mat(2, 2);
    wk.P << 0.7, 0.3, 0.6, 0.4;
    const Vec pi = stationary(wk);
    c.expect(std::abs(pi[0] - 2.0 / 3.0) < 1e-13 && std::abs(pi[1] - 1.0 / 3.0) < 1e-13,
             "worked stationary example");
    Mat reward(2, 1);
    reward << 1.0, 0.0;
    const PoissonSolution sol = poisson_solve(wk, reward, 0);
    c.expect(std::abs(sol.V(0, 0)) < 1e-13 && std::abs(sol.V(1, 0) + 10.0 / 9.0) < 1e-12,
             "worked poisson example");
    c.finish();
}

void criterion2_decomposition() {
    Criterion c(2, "zeta/tau/e decomposition reconstructs the Markov deviation");
    const ProblemSpec p2 = make_problem("P2");
    const SchedulePair pair = remark_pair();
    const AveragedFields af = averaged_fields(p2);
    double worst_recon = 0.0, worst_mean = 0.0;
    for (int traj_i = 0; traj_i < 50; ++traj_i) {
        const index_t steps = 1000;
        const Trajectory traj =
            simulate(p2, pair, 0, steps + 1, {scalar(1.0), scalar(1.0), 0}, 4011, false,
                     static_cast<std::uint64_t>(traj_i));
        const Vec y_frozen = traj.y(0);
        std::vector<PoissonSolution> sols;
        std::vector<KernelMatrix> kernels;
        std::vector<int> states;
        std::vector<Vec> deltas;
        for (index_t n = 0; n <= steps; ++n) {
            const KernelMatrix k = p2.kernel_at(traj.x(n), y_frozen);
            Mat reward(p2.S, p2.d1);
            for (int i = 0; i < p2.S; ++i)
                reward.row(i) = p2.h(traj.x(n), y_frozen, i).transpose();
            sols.push_back(poisson_solve(k, reward, 0));
            kernels.push_back(k);
            states.push_back(traj.markov_state(n));
            if (n < steps) {
                deltas.push_back(p2.h(traj.x(n), y_frozen, traj.markov_state(n)) -
                                 af.hbar(traj.x(n), y_frozen));
            }
        }
        const NoiseDecomposition dec = decompose_noise(sols, kernels, states, deltas);
        for (index_t n = 0; n < steps; ++n) {
            worst_recon = std::max(
                worst_recon,
                (dec.reconstruct(static_cast<std::size_t>(n)) -
                 deltas[static_cast<std::size_t>(n)])
                    .lpNorm<Eigen::Infinity>());
        }
        // conditional mean zero of zeta per state, algebraically
        for (int i = 0; i < p2.S; ++i) {
            const auto& sol = sols[0];
            const auto& k = kernels[0];
            Vec mean = sol.V.transpose() * k.P.row(i).transpose();
            Vec acc = Vec::Zero(p2.d1);
            for (int j = 0; j < p2.S; ++j)
                acc += k.P(i, j) * (sol.V.row(j).transpose() - mean);
            worst_mean = std::max(worst_mean, acc.lpNorm<Eigen::Infinity>());
        }
    }
    c.expect(worst_recon <= 1e-10, "reconstruction residual " + fmt(worst_recon));
    c.expect(worst_mean <= 1e-12, "zeta conditional mean " + fmt(worst_mean));
    c.finish();
}

void criterion3_limit_numerics() {
    Criterion c(3, "limit-law numerics: OU value, semigroup, sampler");
    const ProblemSpec p1f = make_problem("P1-fast");
    const GaussMarkovSpec gm = make_gauss_markov(p1f, scalar(0.0), 0.0, 1.0, 4096);
    const CovarianceCurve curve = lyapunov_covariance(gm, 1.0, 1.0 / 4096);
    const double ou_target = 0.43233235838169365;  // (1 - e^-2)/2
    c.expect(std::abs(curve.sigmas.back()(0, 0) - ou_target) <= 1e-8,
             "lyapunov OU value off by " + fmt(curve.sigmas.back()(0, 0) - ou_target));

    auto field = [](double t) {
        Mat m(2, 2);
        m << -1.0, 0.4 * std::sin(t), 0.2 * std::cos(t), -1.5 + 0.2 * std::sin(2.0 * t);
        return m;
    };
    const Mat full = fundamental_matrix(field, 0.1, 1.9, 1e-3);
    const Mat split =
        fundamental_matrix(field, 1.0, 1.9, 1e-3) * fundamental_matrix(field, 0.1, 1.0, 1e-3);
    c.expect((full - split).norm() <= 1e-8, "semigroup defect " + fmt((full - split).norm()));

    const index_t n_paths = 100000;
    const LimitMoments mom = sample_limit_moments(gm, n_paths, 1.0, 1.0 / 4096, 33, 16);
    const double se = std::sqrt(2.0 / static_cast<double>(n_paths)) * ou_target;
    const double got = mom.cov.back()(0, 0);
    c.expect(std::abs(got - ou_target) <= 3.0 * se,
             "sampler variance " + fmt(got) + " vs " + fmt(ou_target));
    c.finish();
}

void criterion4_single_timescale() {
    Criterion c(4, "single-timescale regression: Var(u(T)) on the frozen-slow problem");
    const ProblemSpec spec = make_problem("P1-fast");
    VerifyConfig cfg;
    cfg.anchors = {100000};
    cfg.T = 4.0;
    cfg.trajectories = 4000;
    cfg.seed = 42;
    cfg.substeps = 1;
    cfg.u_only = true;  // w vanishes identically in this decoupled setup
    cfg.init.x0 = scalar(1.0);
    cfg.init.y0 = scalar(1.0);
    cfg.tol.rel_frobenius = 0.10;
    const VerificationReport rep = run_fclt_experiment(spec, remark_pair(), cfg);
    const double target = 0.4998322686860487;  // (1 - e^-8)/2
    const double got = rep.anchors[0].curve.back().emp_cov(0, 0);
    const double mc_se = std::sqrt(2.0 / 4000.0) * target;
    c.expect(std::abs(got - target) <= std::max(0.10 * target, 3.0 * mc_se),
             "Var(u(T)) = " + fmt(got) + " vs " + fmt(target));
    c.expect(rep.anchors[0].cov_pass, "report covariance flag");
    c.expect(rep.anchors[0].mean_pass, "mean within 3 s.e. of zero");
    c.finish();
}

void criterion5_two_timescale() {
    Criterion c(5, "two-timescale joint law at anchors 1e4 and 1e5");
    const ProblemSpec spec = make_problem("P1");
    VerifyConfig cfg;
    cfg.anchors = {10000, 100000};
    cfg.T = 4.0;
    cfg.trajectories = 4000;
    cfg.seed = 42;
    cfg.substeps = 1;
    cfg.init.x0 = scalar(1.0);
    cfg.init.y0 = scalar(1.0);
    cfg.tol.rel_frobenius = 0.15;
    const VerificationReport rep = run_fclt_experiment(spec, remark_pair(), cfg);
    for (const auto& ar : rep.anchors) {
        c.expect(ar.mean_pass,
                 "mean at anchor " + std::to_string(ar.anchor) + " within 3 s.e.");
        c.expect(ar.cov_pass, "joint covariance at anchor " + std::to_string(ar.anchor) +
                                  " rel err " + fmt(ar.rel_err_at_T));
    }
    c.expect(rep.bias_decay_ok,
             "error decays across anchors: " + fmt(rep.anchors.front().rel_err_at_T) +
                 " -> " + fmt(rep.anchors.back().rel_err_at_T));
    c.finish();
}

void criterion6_markov_inflation() {
    Criterion c(6, "Markov noise inflates the fast diffusion by (Qf+Cov_zeta)/Qf");
    VerifyConfig cfg;
    cfg.anchors = {100000};
    cfg.T = 4.0;
    cfg.trajectories = 2000;
    cfg.seed = 4242;
    cfg.substeps = 1;
    cfg.u_only = true;  // the check reads the fast variances only
    cfg.init.x0 = scalar(1.0);
    cfg.init.y0 = scalar(1.0);
    const ProblemSpec p1 = make_problem("P1");
    const ProblemSpec p2 = make_problem("P2");
    const VerificationReport r1 = run_fclt_experiment(p1, remark_pair(), cfg);
    const VerificationReport r2 = run_fclt_experiment(p2, remark_pair(), cfg);
    const double v1 = r1.anchors[0].curve.back().emp_cov(0, 0);
    const double v2 = r2.anchors[0].curve.back().emp_cov(0, 0);
    const double qf = p1.Qf(scalar(0.0), scalar(0.0))(0, 0);
    const double qeff =
        effective_noise_covariance(p2, scalar(0.0), scalar(0.0), Timescale::Fast)(0, 0);
    const double predicted = qeff / qf;
    const double got = v2 / v1;
    c.expect(std::abs(got - predicted) <= 0.15 * predicted,
             "variance ratio " + fmt(got) + " vs " + fmt(predicted));
    c.finish();
}

void criterion7_theorem3_and_clt() {
    Criterion c(7, "phi = 0 slow fluctuations shrink; eta matches the stationary law");
    const ProblemSpec p1 = make_problem("P1");
    {
        VerifyConfig cfg;
        cfg.anchors = {1000, 10000, 100000};
        cfg.T = 4.0;
        cfg.trajectories = 1000;
        cfg.seed = 7;
        cfg.substeps = 1;
        cfg.init.x0 = scalar(1.0);
        cfg.init.y0 = scalar(1.0);
        const VerificationReport rep = run_theorem3_experiment(p1, remark_pair(), cfg);
        c.expect(rep.w_decreasing,
                 "E|w(T)|^2 across anchors: " + fmt(rep.anchors[0].w_sq_at_T) + ", " +
                     fmt(rep.anchors[1].w_sq_at_T) + ", " + fmt(rep.anchors[2].w_sq_at_T));
    }
    {
        VerifyConfig cfg;
        cfg.clt_indices = {1000, 10000, 100000};
        cfg.y_star = scalar(0.0);
        cfg.trajectories = 4000;
        cfg.seed = 7;
        cfg.init.x0 = scalar(1.0);
        cfg.init.y0 = scalar(1.0);
        cfg.tol.rel_frobenius = 0.10;
        cfg.plateau_T = 20.0;
        const VerificationReport rep = run_clt_experiment(p1, remark_pair(), cfg);
        const double got = rep.clt->records.back().eta_cov(0, 0);
        c.expect(rep.clt->eta_cov_pass,
                 "Var(eta) = " + fmt(got) + " vs 0.5 within max(10%, 3 MC s.e.)");
        c.expect(rep.clt->upsilon_decreasing, "E|upsilon|^2 decreasing toward zero");
        c.expect(rep.clt->kurtosis_pass,
                 "eta excess kurtosis " + fmt(rep.clt->eta_normality.max_abs_kurtosis()));
    }
    c.finish();
}

void criterion8_moment_boundedness() {
    Criterion c(8, "fourth-moment diagnostics stay bounded on P1 and P2");
    for (const char* name : {"P1", "P2"}) {
        VerifyConfig cfg;
        cfg.clt_indices = {100000};
        cfg.y_star = scalar(0.0);
        cfg.checkpoints = {1000, 10000, 100000};
        cfg.trajectories = 4000;
        cfg.seed = 808;
        cfg.init.x0 = scalar(1.0);
        cfg.init.y0 = scalar(1.0);
        const VerificationReport rep =
            run_clt_experiment(make_problem(name), remark_pair(), cfg);
        c.expect(rep.moments.has_value() && rep.moments->u4_bounded,
                 std::string(name) + " E|u|^4 bounded: " + fmt(rep.moments->u4[0]) + ", " +
                     fmt(rep.moments->u4[1]) + ", " + fmt(rep.moments->u4[2]));
        c.expect(rep.moments.has_value() && rep.moments->x4_bounded,
                 std::string(name) + " E|x|^4 bounded");
    }
    c.finish();
}

void criterion9_schedule_validator() {
    Criterion c(9, "schedule validator: reference pair passes, violations flagged");
    ScheduleDiagnostics diag = validate_pair(remark_pair(), 10000);
    zeta_diagnostic(remark_pair(), {2.0, 4.0, 8.0}, 100000, diag);
    diag.phi = phi_limit(remark_pair().fast, 1000000);
    c.expect(diag.all_pass(), "reference pair all assumption flags");

    const SchedulePair same{StepSchedule::power_law(0.5, 0.6),
                            StepSchedule::power_law(0.5, 0.6), 0};
    c.expect(!validate_pair(same, 10000).ordering_ok, "a = b must fail the ordering");

    const SchedulePair harmonic{StepSchedule::power_law(0.5, 1.0),
                                StepSchedule::power_law(0.4, 1.5), 0};
    const ScheduleDiagnostics hd = validate_pair(harmonic, 10000);
    c.expect(std::abs(hd.phi.value - 2.0) <= 1e-3,
             "phi = 1/C estimate " + fmt(hd.phi.value));
    c.expect(hd.theorem3_regime(), "phi != 0 triggers the theorem-3 code path");
    c.finish();
}

void criterion10_determinism() {
    Criterion c(10, "reruns with identical seed are byte-identical across thread counts");
    const ProblemSpec p1 = make_problem("P1");
    VerifyConfig cfg;
    cfg.anchors = {500};
    cfg.T = 2.0;
    cfg.trajectories = 600;
    cfg.seed = 99;
    cfg.substeps = 1;
    cfg.grid_points = 16;
    cfg.init.x0 = scalar(1.0);
    cfg.init.y0 = scalar(1.0);
    std::string csv[2];
    for (int pass = 0; pass < 2; ++pass) {
        cfg.threads = pass == 0 ? 1 : 2;
        const VerificationReport rep = run_fclt_experiment(p1, remark_pair(), cfg);
        std::ostringstream out;
        for (const auto& ar : rep.anchors)
            for (const auto& g : ar.curve)
                for (int r = 0; r < g.emp_cov.rows(); ++r)
                    for (int col = 0; col < g.emp_cov.cols(); ++col) {
                        char buf[40];
                        std::snprintf(buf, sizeof(buf), "%.17g,", g.emp_cov(r, col));
                        out << buf;
                    }
        csv[pass] = out.str();
    }
    c.expect(!csv[0].empty() && csv[0] == csv[1], "thread-count invariance of the statistics");
    c.finish();
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
    auto want = [&](int id) { return only.empty() || only.count(id); };

    if (want(1)) criterion1_markov_algebra();
    if (want(2)) criterion2_decomposition();
    if (want(3)) criterion3_limit_numerics();
    if (want(4)) criterion4_single_timescale();
    if (want(5)) criterion5_two_timescale();
    if (want(6)) criterion6_markov_inflation();
    if (want(7)) criterion7_theorem3_and_clt();
    if (want(8)) criterion8_moment_boundedness();
    if (want(9)) criterion9_schedule_validator();
    if (want(10)) criterion10_determinism();

    if (g_failures == 0)
        std::printf("acceptance: all criteria passed\n");
    else
        std::printf("acceptance: %d criterion(s) FAILED\n", g_failures);
    return g_failures == 0 ? 0 : 1;
}
