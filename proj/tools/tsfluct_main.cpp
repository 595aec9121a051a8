// Command-line front end: config ingestion, experiment orchestration and
// artifact emission. Exit codes: 0 success, 1 validation/tolerance failure
// or runtime divergence, 2 malformed configuration.

#include "tsfluct/config.hpp"
#include "tsfluct/engine.hpp"
#include "tsfluct/fluct.hpp"
#include "tsfluct/io.hpp"
#include "tsfluct/limit.hpp"
#include "tsfluct/model.hpp"
#include "tsfluct/schedules.hpp"
#include "tsfluct/verify.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

using namespace tsfluct;

std::string timestamp_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm_utc{};
    gmtime_r(&t, &tm_utc);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

struct CliOptions {
    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
};

ExperimentConfig load(const CliOptions& opt) {
    if (opt.config_path.empty()) throw ConfigError("--config is required");
    ExperimentConfig cfg = load_config(opt.config_path);
    if (!opt.out_dir.empty()) cfg.output.dir = opt.out_dir;
    if (opt.seed) {
        cfg.engine.seed = *opt.seed;
        cfg.verify.seed = *opt.seed;
    }
    if (opt.threads) cfg.verify.threads = *opt.threads;
    return cfg;
}

std::filesystem::path ensure_out_dir(const ExperimentConfig& cfg) {
    std::filesystem::path dir(cfg.output.dir);
    std::filesystem::create_directories(dir);
    return dir;
}

const char* flag(bool b) { return b ? "pass" : "FAIL"; }

int cmd_validate_schedule(const CliOptions& opt) {
    ExperimentConfig cfg = load(opt);
    ScheduleDiagnostics diag = validate_pair(cfg.pair, cfg.verify.validate_horizon);
    index_t n_phi = cfg.verify.phi_horizon;
    if (cfg.pair.fast.kind() == StepSchedule::Kind::Tabulated)
        n_phi = std::min(n_phi, cfg.pair.fast.table_size() - 1);
    if (cfg.pair.slow.kind() == StepSchedule::Kind::Tabulated)
        n_phi = std::min(n_phi, cfg.pair.slow.table_size() - 1);
    diag.phi = phi_limit(cfg.pair.fast, std::max<index_t>(n_phi, 100));
    diag.vartheta = phi_limit(cfg.pair.slow, std::max<index_t>(n_phi, 100));
    zeta_diagnostic(cfg.pair, {2.0, 4.0, 8.0},
                    std::min<index_t>(cfg.verify.validate_horizon * 10, 200000), diag);

    std::printf("check                                 result\n");
    std::printf("------------------------------------- ------\n");
    std::printf("ordering 0 < b <= a^(3/2) < a < 1     %s\n", flag(diag.ordering_ok));
    std::printf("a(n) strictly decreasing              %s\n", flag(diag.fast_monotone_ok));
    std::printf("b/a^(3/2) decreasing (deciles)        %s   first %.6g last %.6g\n",
                flag(diag.ratio_check.decile_decreasing), diag.ratio_check.first_decile_mean,
                diag.ratio_check.last_decile_mean);
    std::printf("phi estimate                          %s   phi = %.6g\n",
                flag(diag.phi.converged), diag.phi.value);
    std::printf("vartheta estimate (reported only)     %s   vartheta = %.6g\n",
                diag.vartheta.converged ? "conv" : "open", diag.vartheta.value);
    std::printf("(a/b)(1/a' - 1/a) decreasing          %s   first %.6g last %.6g\n",
                flag(diag.bn_omega_check.decile_decreasing),
                diag.bn_omega_check.first_decile_mean, diag.bn_omega_check.last_decile_mean);
    std::printf("zeta profile decreasing in T          %s\n", flag(diag.zeta_decreasing));
    for (const auto& [t, v] : diag.zeta_profile)
        std::printf("  T = %-5.2f sup a(m-)/(a(n)e^T) = %.6g\n", t, v);
    std::printf("assumption flags: A1 %s  A2 %s  A3 %s  A4 %s  A5 %s\n", flag(diag.pass_a1()),
                flag(diag.pass_a2()), flag(diag.pass_a3()), flag(diag.pass_a4()),
                flag(diag.pass_a5()));
    std::printf("regime: %s\n", diag.theorem3_regime() ? "theorem3 (phi != 0)" : "phi = 0");

    const auto dir = ensure_out_dir(cfg);
    std::ofstream out(dir / "schedule.json", std::ios::binary);
    out << to_json(diag).dump(2) << '\n';
    return diag.all_pass() ? 0 : 1;
}

int cmd_simulate(const CliOptions& opt) {
    ExperimentConfig cfg = load(opt);
    const ProblemSpec spec = cfg.problem();
    validate_problem(spec, cfg.engine.init.x0, cfg.engine.init.y0);
    const Trajectory traj =
        simulate(spec, cfg.pair, cfg.engine.n_start, cfg.engine.n_end, cfg.engine.init,
                 cfg.engine.seed, cfg.engine.record_noise);
    const auto dir = ensure_out_dir(cfg);
    write_trajectory_csv((dir / "trajectory.csv").string(), traj);
    std::printf("wrote %s (%lld iterates)\n", (dir / "trajectory.csv").c_str(),
                static_cast<long long>(traj.count()));
    return 0;
}

int cmd_fluct(const CliOptions& opt) {
    ExperimentConfig cfg = load(opt);
    const ProblemSpec spec = cfg.problem();
    validate_problem(spec, cfg.engine.init.x0, cfg.engine.init.y0);
    if (cfg.verify.anchors.empty()) throw ConfigError("fluct needs fluct.anchors");
    const Trajectory traj =
        simulate(spec, cfg.pair, cfg.engine.n_start, cfg.engine.n_end, cfg.engine.init,
                 cfg.engine.seed, false);
    const Clocks clocks = make_clocks(cfg.pair, cfg.engine.n_end);
    std::vector<FluctuationPath> paths;
    for (index_t anchor : cfg.verify.anchors) {
        paths.push_back(fast_fluctuation(traj, spec, cfg.pair, clocks, anchor, cfg.verify.T));
        paths.push_back(slow_fluctuation(traj, spec, cfg.pair, clocks, anchor, cfg.verify.T,
                                         Clock::Slow, cfg.verify.substeps));
    }
    const auto dir = ensure_out_dir(cfg);
    write_paths_csv((dir / "paths.csv").string(), paths);
    std::printf("wrote %s (%zu paths)\n", (dir / "paths.csv").c_str(), paths.size());
    return 0;
}

int cmd_limit_cov(const CliOptions& opt) {
    ExperimentConfig cfg = load(opt);
    const ProblemSpec spec = cfg.problem();
    double phi = 0.0;
    if (cfg.limit.phi) {
        phi = *cfg.limit.phi;
    } else {
        const PhiEstimate est = phi_limit(cfg.pair.fast, cfg.verify.phi_horizon);
        phi = (est.converged && std::abs(est.value) > 1e-3) ? est.value : 0.0;
    }
    const GaussMarkovSpec gm =
        make_gauss_markov(spec, cfg.limit.y0, phi, cfg.limit.T, cfg.limit.dt_divisor);
    const CovarianceCurve curve =
        lyapunov_covariance(gm, cfg.limit.T, cfg.limit.T / cfg.limit.dt_divisor);
    const auto dir = ensure_out_dir(cfg);
    write_covariance_csv((dir / "covariance.csv").string(), curve);
    std::printf("wrote %s; Sigma(T) fast block [0,0] = %.9g\n",
                (dir / "covariance.csv").c_str(), curve.sigmas.back()(0, 0));
    return 0;
}

int cmd_verify(const CliOptions& opt) {
    ExperimentConfig cfg = load(opt);
    const ProblemSpec spec = cfg.problem();
    validate_problem(spec, cfg.engine.init.x0, cfg.engine.init.y0);
    VerificationReport rep;
    if (cfg.experiment == "fclt")
        rep = run_fclt_experiment(spec, cfg.pair, cfg.verify);
    else if (cfg.experiment == "theorem3")
        rep = run_theorem3_experiment(spec, cfg.pair, cfg.verify);
    else
        rep = run_clt_experiment(spec, cfg.pair, cfg.verify);

    const auto dir = ensure_out_dir(cfg);
    {
        std::ofstream out(dir / "report.json", std::ios::binary);
        out << to_json(rep, cfg.echo, timestamp_now()).dump(2) << '\n';
    }
    if (!rep.anchors.empty()) {
        write_comparison_csv((dir / "comparison.csv").string(), rep);
        if (cfg.output.svg) write_variance_svg((dir / "variance.svg").string(), rep);
    }
    for (const auto& ar : rep.anchors)
        std::printf("anchor %lld: rel err %.4f (floor %.4f) cov %s mean %s\n",
                    static_cast<long long>(ar.anchor), ar.rel_err_at_T, ar.mc_floor_rel,
                    flag(ar.cov_pass), flag(ar.mean_pass));
    if (rep.clt)
        std::printf("clt: eta rel err %.4f %s, upsilon decreasing %s, kurtosis %s\n",
                    rep.clt->eta_rel_err, flag(rep.clt->eta_cov_pass),
                    flag(rep.clt->upsilon_decreasing), flag(rep.clt->kurtosis_pass));
    if (rep.moments)
        std::printf("moments bounded: u4 %s x4 %s\n", flag(rep.moments->u4_bounded),
                    flag(rep.moments->x4_bounded));
    std::printf("overall: %s\n", flag(rep.overall_pass));
    return rep.overall_pass ? 0 : 1;
}

int cmd_selftest(std::uint64_t seed) {
    int failures = 0;
    auto check = [&](const char* name, bool ok) {
        std::printf("[%s] %s\n", ok ? "PASS" : "FAIL", name);
        if (!ok) ++failures;
    };

    // scalar OU closed form through the Lyapunov integrator
    {
        const ProblemSpec p1f = make_problem("P1-fast");
        const GaussMarkovSpec gm = make_gauss_markov(p1f, Vec::Zero(1), 0.0, 1.0, 4096);
        const CovarianceCurve curve = lyapunov_covariance(gm, 1.0, 1.0 / 4096);
        const double target = (1.0 - std::exp(-2.0)) / 2.0;
        check("lyapunov reproduces the scalar OU variance",
              std::abs(curve.sigmas.back()(0, 0) - target) < 1e-8);
    }
    // stationary distribution and Poisson worked example
    {
        KernelMatrix k;
        k.P = Mat(2, 2);
        k.P << 0.7, 0.3, 0.6, 0.4;
        const Vec pi = stationary(k);
        Mat reward(2, 1);
        reward << 1.0, 0.0;
        const PoissonSolution sol = poisson_solve(k, reward, 0);
        check("two-state stationary distribution",
              std::abs(pi[0] - 2.0 / 3.0) < 1e-12 && std::abs(pi[1] - 1.0 / 3.0) < 1e-12);
        check("two-state Poisson solution",
              std::abs(sol.V(0, 0)) < 1e-12 && std::abs(sol.V(1, 0) + 10.0 / 9.0) < 1e-10);
    }
    // sampler vs curve on the joint P1 law
    {
        const ProblemSpec p1 = make_problem("P1");
        Tolerances tol;
        const SelfTestResult r =
            pipeline_selftest(p1, Vec::Zero(1), 0.0, 2.0, 4000, seed, tol);
        std::printf("       sampler-vs-curve rel err %.4f (floor %.4f)\n", r.rel_err_at_T,
                    r.mc_floor_rel);
        check("limit sampler matches the Lyapunov curve", r.pass);
    }
    // schedule validator on the reference pair
    {
        SchedulePair pair{StepSchedule::power_law(0.9, 0.6), StepSchedule::power_law(0.8, 0.95),
                          0};
        ScheduleDiagnostics diag = validate_pair(pair, 10000);
        zeta_diagnostic(pair, {2.0, 4.0, 8.0}, 100000, diag);
        check("reference schedule pair satisfies the assumption checks", diag.all_pass());
    }
    std::printf("%s\n", failures == 0 ? "selftest: all checks passed"
                                      : "selftest: FAILURES present");
    return failures == 0 ? 0 : 1;
}

int dispatch(int argc, char** argv) {
    CLI::App app{"two-timescale stochastic approximation fluctuation harness"};
    app.require_subcommand(1);

    CliOptions opt;
    std::uint64_t selftest_seed = 20240817;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", opt.config_path, "experiment config JSON");
        cmd->add_option("--out", opt.out_dir, "output directory override");
        cmd->add_option_function<std::uint64_t>(
            "--seed", [&](std::uint64_t s) { opt.seed = s; }, "seed override");
        cmd->add_option_function<int>(
            "--threads", [&](int t) { opt.threads = t; }, "worker thread count");
    };

    CLI::App* validate = app.add_subcommand("validate-schedule", "run the assumption checks");
    CLI::App* simulate_cmd = app.add_subcommand("simulate", "write a trajectory CSV");
    CLI::App* fluct_cmd = app.add_subcommand("fluct", "write fluctuation path CSVs");
    CLI::App* limit_cmd = app.add_subcommand("limit-cov", "write the limit covariance curve");
    CLI::App* verify_cmd = app.add_subcommand("verify", "run the Monte Carlo verification");
    CLI::App* selftest_cmd = app.add_subcommand("selftest", "run the analytic oracle suite");
    for (CLI::App* c : {validate, simulate_cmd, fluct_cmd, limit_cmd, verify_cmd}) add_common(c);
    selftest_cmd->add_option("--seed", selftest_seed, "seed for the sampler check");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (validate->parsed()) return cmd_validate_schedule(opt);
        if (simulate_cmd->parsed()) return cmd_simulate(opt);
        if (fluct_cmd->parsed()) return cmd_fluct(opt);
        if (limit_cmd->parsed()) return cmd_limit_cov(opt);
        if (verify_cmd->parsed()) return cmd_verify(opt);
        if (selftest_cmd->parsed()) return cmd_selftest(selftest_seed);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const DivergenceError& e) {
        std::fprintf(stderr, "runtime divergence: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}

}  // namespace

int main(int argc, char** argv) { return dispatch(argc, argv); }
