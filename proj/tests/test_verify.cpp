#include "tsfluct/model.hpp"
#include "tsfluct/rng.hpp"
#include "tsfluct/verify.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

using namespace tsfluct;

namespace {

Vec scalar(double v) {
    Vec x(1);
    x[0] = v;
    return x;
}

SchedulePair remark_pair() {
    return SchedulePair{StepSchedule::power_law(0.9, 0.6), StepSchedule::power_law(0.8, 0.95),
                        0};
}

VerifyConfig small_cfg() {
    VerifyConfig cfg;
    cfg.anchors = {400};
    cfg.T = 2.0;
    cfg.trajectories = 600;
    cfg.seed = 515;
    cfg.grid_points = 16;
    cfg.substeps = 1;
    cfg.init.x0 = scalar(1.0);
    cfg.init.y0 = scalar(1.0);
    cfg.threads = 2;
    return cfg;
}

}  // namespace

TEST_CASE("gaussianity statistics", "[verify]") {
    RngStream rng(2718);
    std::vector<Vec> gauss;
    for (int i = 0; i < 10000; ++i) {
        double z0, z1;
        rng.normal_pair(z0, z1);
        Vec v(1);
        v[0] = z0;
        gauss.push_back(v);
    }
    const GaussianityStats gs = gaussianity_stats(gauss);
    CHECK(std::abs(gs.skewness[0]) < 0.08);
    CHECK(std::abs(gs.excess_kurtosis[0]) < 0.15);
    CHECK(gs.applicable[0]);

    // symmetric two-point distribution has excess kurtosis -2
    std::vector<Vec> twopoint;
    for (int i = 0; i < 2000; ++i) twopoint.push_back(scalar(i % 2 == 0 ? 1.0 : -1.0));
    const GaussianityStats tp = gaussianity_stats(twopoint);
    CHECK(tp.excess_kurtosis[0] == Catch::Approx(-2.0).margin(1e-9));

    // constant samples have no usable variance
    std::vector<Vec> flat(600, scalar(0.37));
    const GaussianityStats fs = gaussianity_stats(flat);
    CHECK_FALSE(fs.applicable[0]);

    CHECK_THROWS_AS(gaussianity_stats(std::vector<Vec>(10, scalar(0.0))), Error);
}

TEST_CASE("covariance check is monotone in the tolerance", "[verify]") {
    Mat emp = Mat::Identity(2, 2) * 1.12;
    Mat th = Mat::Identity(2, 2);
    for (double tol1 : {0.05, 0.1, 0.2, 0.5}) {
        for (double tol2 : {0.05, 0.1, 0.2, 0.5}) {
            if (tol2 < tol1) continue;
            Tolerances a, b;
            a.rel_frobenius = tol1;
            b.rel_frobenius = tol2;
            const auto ra = verify_detail::covariance_check(emp, th, 1000, a);
            const auto rb = verify_detail::covariance_check(emp, th, 1000, b);
            if (ra.pass) CHECK(rb.pass);  // loosening never flips pass to fail
        }
    }
}

TEST_CASE("pipeline self-test validates the statistics machinery", "[verify]") {
    const ProblemSpec p1 = make_problem("P1");
    Tolerances tol;
    const SelfTestResult r = pipeline_selftest(p1, scalar(0.0), 0.0, 2.0, 3000, 7, tol, 2048,
                                               16);
    CHECK(r.pass);
    CHECK(r.rel_err_at_T < 0.15);
}

TEST_CASE("small fclt experiment runs and is thread-deterministic", "[verify]") {
    const ProblemSpec p1 = make_problem("P1");
    const SchedulePair pair = remark_pair();
    VerifyConfig cfg = small_cfg();
    const VerificationReport rep1 = run_fclt_experiment(p1, pair, cfg);
    cfg.threads = 1;
    const VerificationReport rep2 = run_fclt_experiment(p1, pair, cfg);

    REQUIRE(rep1.anchors.size() == 1);
    REQUIRE(rep2.anchors.size() == 1);
    // bitwise identical statistics regardless of the thread count
    for (std::size_t g = 0; g < rep1.anchors[0].curve.size(); ++g) {
        const auto& a = rep1.anchors[0].curve[g];
        const auto& b = rep2.anchors[0].curve[g];
        for (int r = 0; r < a.emp_cov.rows(); ++r)
            for (int c = 0; c < a.emp_cov.cols(); ++c)
                CHECK(a.emp_cov(r, c) == b.emp_cov(r, c));
        for (int c = 0; c < a.emp_mean.size(); ++c) CHECK(a.emp_mean[c] == b.emp_mean[c]);
    }
    CHECK(rep1.anchors[0].rel_err_at_T == rep2.anchors[0].rel_err_at_T);

    // sanity of the comparison record itself
    const auto& ar = rep1.anchors[0];
    CHECK(ar.curve.front().t == 0.0);
    CHECK(ar.curve.back().t == Catch::Approx(2.0));
    CHECK(ar.curve.back().th_cov(0, 0) > 0.3);  // fast block near the OU value
    CHECK(ar.mean_pass);
    CHECK(rep1.phi_used == 0.0);
    CHECK_FALSE(rep1.theorem3_regime);
}

TEST_CASE("fclt experiment rejects tiny ensembles", "[verify]") {
    VerifyConfig cfg = small_cfg();
    cfg.trajectories = 100;
    CHECK_THROWS_AS(run_fclt_experiment(make_problem("P1"), remark_pair(), cfg), ConfigError);
}

TEST_CASE("fast marginal is insensitive to the slow noise scale", "[verify]") {
    // g == 0 decouples the fast block; halving Qs must not change the outcome
    auto make_spec = [](double qs) {
        ProblemSpec s = builtin::p1(1.0, false, "custom");
        s.g = [](const Vec&, const Vec& y, int) { return Vec(Vec::Zero(y.size())); };
        s.dxg_bar = [](const Vec&, const Vec&) { return Mat(Mat::Zero(1, 1)); };
        s.dyg_bar = [](const Vec&, const Vec&) { return Mat(Mat::Zero(1, 1)); };
        s.dfbar = [](const Vec&) { return Mat(Mat::Zero(1, 1)); };
        s.Qs = [qs](const Vec&, const Vec&) { return Mat(Mat::Constant(1, 1, qs)); };
        return s;
    };
    VerifyConfig cfg = small_cfg();
    cfg.anchors = {600};
    cfg.u_only = true;
    const VerificationReport full =
        run_fclt_experiment(make_spec(1.0), remark_pair(), cfg);
    const VerificationReport half =
        run_fclt_experiment(make_spec(0.5), remark_pair(), cfg);
    CHECK(full.anchors[0].cov_pass == half.anchors[0].cov_pass);
    CHECK(full.anchors[0].cov_pass);
}

TEST_CASE("theorem3 experiment on the phi = 0 pair sees shrinking w", "[verify]") {
    const ProblemSpec p1 = make_problem("P1");
    VerifyConfig cfg = small_cfg();
    cfg.anchors = {200, 2000};
    cfg.T = 1.5;
    const VerificationReport rep = run_theorem3_experiment(p1, remark_pair(), cfg);
    REQUIRE(rep.anchors.size() == 2);
    CHECK(rep.anchors[1].w_sq_at_T < rep.anchors[0].w_sq_at_T);
    CHECK(rep.w_decreasing);
    // the theoretical law has a zero slow block in this regime
    CHECK(rep.anchors[0].curve.back().th_cov(1, 1) == 0.0);
}

TEST_CASE("clt experiment statistics", "[verify]") {
    const ProblemSpec p1 = make_problem("P1");
    VerifyConfig cfg = small_cfg();
    cfg.clt_indices = {500, 2000, 8000};
    cfg.y_star = scalar(0.0);
    cfg.trajectories = 800;
    cfg.plateau_T = 12.0;
    const VerificationReport rep = run_clt_experiment(p1, remark_pair(), cfg);
    REQUIRE(rep.clt.has_value());
    CHECK(rep.clt->records.size() == 3);
    CHECK(rep.clt->upsilon_decreasing);
    // stationary fast variance for the unit OU block
    CHECK(rep.clt->eta_th(0, 0) == Catch::Approx(0.5).margin(1e-6));
    CHECK(rep.clt->eta_cov_pass);
    CHECK(rep.clt->kurtosis_pass);
    CHECK(rep.overall_pass);
}

TEST_CASE("clt experiment validates its equilibrium", "[verify]") {
    VerifyConfig cfg = small_cfg();
    cfg.clt_indices = {500};
    cfg.y_star = scalar(3.0);  // fbar(3) != 0
    CHECK_THROWS_AS(run_clt_experiment(make_problem("P1"), remark_pair(), cfg), ConfigError);
}

TEST_CASE("moment checkpoints ride along experiments", "[verify]") {
    const ProblemSpec p1 = make_problem("P1");
    VerifyConfig cfg = small_cfg();
    cfg.checkpoints = {100, 400, 1500};
    const VerificationReport rep = run_fclt_experiment(p1, remark_pair(), cfg);
    REQUIRE(rep.moments.has_value());
    CHECK(rep.moments->u4.size() == 3);
    CHECK(rep.moments->bounded());
    // stationary scaled fourth moment sits near 3 (Var u)^2 = 0.75
    CHECK(rep.moments->u4.back() > 0.4);
    CHECK(rep.moments->u4.back() < 1.2);
}
