#include "tsfluct/engine.hpp"
#include "tsfluct/model.hpp"

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

ProblemSpec p1_noiseless() {
    ProblemSpec s = builtin::p1();
    s.Qf = [](const Vec&, const Vec&) { return Mat(Mat::Zero(1, 1)); };
    s.Qs = [](const Vec&, const Vec&) { return Mat(Mat::Zero(1, 1)); };
    return s;
}

SchedulePair remark_pair() {
    return SchedulePair{StepSchedule::power_law(0.9, 0.6), StepSchedule::power_law(0.8, 0.95),
                        0};
}

SchedulePair halves_pair() {
    // a(0) = 0.5, b(0) = 0.25, then decreasing
    auto mk = [](double c) {
        std::vector<double> v;
        for (int n = 0; n < 4000; ++n) v.push_back(c / std::pow(n + 1.0, 0.8));
        return StepSchedule::tabulated(v);
    };
    return SchedulePair{mk(0.5), mk(0.25), 0};
}

}  // namespace

TEST_CASE("martingale draws", "[engine]") {
    RngStream rng(42);
    // degenerate covariance always yields the zero vector
    for (int i = 0; i < 5; ++i) {
        const Vec z = martingale_draw(Mat::Zero(2, 2), rng);
        CHECK(z.norm() == 0.0);
    }
    // identical seeds give identical draws
    RngStream a(7), b(7);
    for (int i = 0; i < 100; ++i) {
        const Vec za = martingale_draw(Mat::Identity(3, 3), a);
        const Vec zb = martingale_draw(Mat::Identity(3, 3), b);
        for (int c = 0; c < 3; ++c) CHECK(za[c] == zb[c]);
    }
    // sample covariance approaches Q = diag(4, 9)
    Mat q = Mat::Zero(2, 2);
    q(0, 0) = 4.0;
    q(1, 1) = 9.0;
    Mat acc = Mat::Zero(2, 2);
    const int n = 100000;
    RngStream r2(11);
    for (int i = 0; i < n; ++i) {
        const Vec z = martingale_draw(q, r2);
        acc += z * z.transpose();
    }
    acc /= static_cast<double>(n);
    CHECK(acc(0, 0) == Catch::Approx(4.0).epsilon(0.05));
    CHECK(acc(1, 1) == Catch::Approx(9.0).epsilon(0.05));
    CHECK(std::abs(acc(0, 1)) < 0.15);
}

TEST_CASE("single steps of the recursion", "[engine]") {
    // zero drift, zero noise: only the counter moves
    ProblemSpec still = p1_noiseless();
    still.h = [](const Vec& x, const Vec&, int) { return Vec(Vec::Zero(x.size())); };
    still.g = [](const Vec&, const Vec& y, int) { return Vec(Vec::Zero(y.size())); };
    SAState st;
    st.x = scalar(1.0);
    st.y = scalar(2.0);
    st.rng = RngStream(1);
    const SAState next = step(st, still, halves_pair());
    CHECK(next.n == 1);
    CHECK(next.x[0] == 1.0);
    CHECK(next.y[0] == 2.0);
    CHECK(next.Y == 0);

    // deterministic linear contraction: x1 = 1, y1 = 1 - 0.25 = 0.75
    SAState s2;
    s2.x = scalar(1.0);
    s2.y = scalar(1.0);
    s2.rng = RngStream(1);
    const SAState n2 = step(s2, p1_noiseless(), halves_pair());
    CHECK(n2.x[0] == Catch::Approx(1.0).margin(1e-15));
    CHECK(n2.y[0] == Catch::Approx(0.75).margin(1e-15));

    // x = 2, y = 1: x1 = 2 + 0.5*(1 - 2) = 1.5
    SAState s3;
    s3.x = scalar(2.0);
    s3.y = scalar(1.0);
    s3.rng = RngStream(1);
    const SAState n3 = step(s3, p1_noiseless(), halves_pair());
    CHECK(n3.x[0] == Catch::Approx(1.5).margin(1e-15));
}

TEST_CASE("scalar step path matches the generic one bitwise", "[engine]") {
    const ProblemSpec p2 = make_problem("P2");  // S = 2 exercises the chain move too
    const SchedulePair pair = remark_pair();
    StepPlan plan_scalar(p2, pair);
    StepPlan plan_generic(p2, pair);
    REQUIRE(plan_scalar.scalar_path);
    plan_generic.scalar_path = false;
    SAState a, b;
    a.x = scalar(1.0);
    a.y = scalar(0.5);
    a.rng = RngStream(33);
    b = a;
    b.rng = RngStream(33);
    for (int i = 0; i < 500; ++i) {
        step_inplace(a, plan_scalar);
        step_inplace(b, plan_generic);
        CHECK(a.x[0] == b.x[0]);
        CHECK(a.y[0] == b.y[0]);
        CHECK(a.Y == b.Y);
    }
}

TEST_CASE("noiseless contraction converges", "[engine]") {
    const Trajectory traj = simulate(p1_noiseless(), remark_pair(), 0, 10000,
                                     {scalar(1.0), scalar(1.0), 0}, 3);
    // y decreases monotonically toward zero and x tracks it
    for (index_t n = 1; n < 10000; n *= 4)
        CHECK(traj.y(n)[0] < traj.y(n - 1)[0]);
    CHECK(traj.y(9999)[0] < 0.05);
    CHECK(std::abs(traj.x(9999)[0] - traj.y(9999)[0]) < 1e-4);
}

TEST_CASE("simulation is a pure function of seed and inputs", "[engine]") {
    const ProblemSpec p2 = make_problem("P2");
    const Trajectory a = simulate(p2, remark_pair(), 0, 500, {scalar(1.0), scalar(1.0), 0},
                                  99, true);
    const Trajectory b = simulate(p2, remark_pair(), 0, 500, {scalar(1.0), scalar(1.0), 0},
                                  99, true);
    for (index_t n = 0; n < 500; ++n) {
        CHECK(a.x(n)[0] == b.x(n)[0]);
        CHECK(a.y(n)[0] == b.y(n)[0]);
        CHECK(a.markov_state(n) == b.markov_state(n));
    }
    // different stream index decouples the run
    const Trajectory c = simulate(p2, remark_pair(), 0, 500, {scalar(1.0), scalar(1.0), 0},
                                  99, true, 1);
    bool any_different = false;
    for (index_t n = 1; n < 500 && !any_different; ++n)
        any_different = (a.x(n)[0] != c.x(n)[0]);
    CHECK(any_different);
}

TEST_CASE("stored noise reconstructs the recursion", "[engine]") {
    const ProblemSpec p2 = make_problem("P2");
    const SchedulePair pair = remark_pair();
    const Trajectory traj = simulate(p2, pair, 0, 1000, {scalar(1.0), scalar(1.0), 0}, 7,
                                     true);
    REQUIRE(traj.has_noise);
    for (index_t n = 0; n + 1 < 1000; ++n) {
        const double a = pair.fast.value(n);
        const double b = pair.slow.value(n);
        const Vec xpred = traj.x(n) +
                          a * (p2.h(traj.x(n), traj.y(n), traj.markov_state(n)) +
                               traj.mf[static_cast<std::size_t>(n)]);
        const Vec ypred = traj.y(n) +
                          b * (p2.g(traj.x(n), traj.y(n), traj.markov_state(n)) +
                               traj.ms[static_cast<std::size_t>(n)]);
        CHECK((xpred - traj.x(n + 1)).lpNorm<Eigen::Infinity>() <= 1e-12);
        CHECK((ypred - traj.y(n + 1)).lpNorm<Eigen::Infinity>() <= 1e-12);
    }
}

TEST_CASE("stored martingale noise has mean zero", "[engine]") {
    const ProblemSpec p1 = make_problem("P1");
    const SchedulePair pair = remark_pair();
    const int n_traj = 2000;
    const index_t probe = 5;
    double acc = 0.0;
    for (int i = 0; i < n_traj; ++i) {
        const Trajectory t = simulate(p1, pair, 0, 8, {scalar(1.0), scalar(1.0), 0}, 1234,
                                      true, static_cast<std::uint64_t>(i));
        acc += t.mf[probe][0];
    }
    const double mean = acc / n_traj;
    const double se = 1.0 / std::sqrt(static_cast<double>(n_traj));
    CHECK(std::abs(mean) <= 3.0 * se);
}

TEST_CASE("markov occupation matches the stationary law", "[engine]") {
    const ProblemSpec p2 = make_problem("P2");
    const Trajectory t = simulate(p2, remark_pair(), 0, 120000, {scalar(0.0), scalar(0.0), 0},
                                  2024);
    index_t in_zero = 0;
    const index_t burn = 20000;
    for (index_t n = burn; n < 120000; ++n)
        if (t.markov_state(n) == 0) ++in_zero;
    const double occupation = static_cast<double>(in_zero) / (120000.0 - burn);
    // pi_0 = 2/3; generous band covering chain autocorrelation
    CHECK(occupation == Catch::Approx(2.0 / 3.0).margin(0.01));
}

TEST_CASE("divergence guard trips on unstable drift", "[engine]") {
    ProblemSpec unstable = builtin::p1();
    unstable.h = [](const Vec& x, const Vec&, int) { return Vec(5.0 * x); };
    unstable.g = [](const Vec&, const Vec& y, int) { return Vec(5.0 * y); };
    CHECK_THROWS_AS(
        simulate(unstable, halves_pair(), 0, 4000, {scalar(10.0), scalar(10.0), 0}, 1),
        DivergenceError);
}

TEST_CASE("jackknife standard error matches the closed form", "[engine]") {
    std::vector<double> vals{1.0, 2.0, 4.0, 4.5, 0.5, 3.0, 2.5, 1.5};
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= static_cast<double>(vals.size());
    double ss = 0.0;
    for (double v : vals) ss += (v - mean) * (v - mean);
    const double classic =
        std::sqrt(ss / (static_cast<double>(vals.size()) - 1.0) /
                  static_cast<double>(vals.size()));
    CHECK(jackknife_se(vals) == Catch::Approx(classic).epsilon(1e-12));
}

TEST_CASE("fourth moments vanish in the noiseless contraction", "[engine]") {
    const ProblemSpec quiet = p1_noiseless();
    const SchedulePair pair = remark_pair();
    std::vector<Trajectory> ensemble;
    for (int i = 0; i < 120; ++i)
        ensemble.push_back(simulate(quiet, pair, 0, 2001,
                                    {scalar(1.0 + 0.01 * i), scalar(1.0), 0}, 5,
                                    false, static_cast<std::uint64_t>(i)));
    const MomentDiagnostics d =
        moment_diagnostics(ensemble, quiet, pair, {10, 100, 1000, 2000});
    CHECK(d.bounded());
    CHECK(d.u4.back() < d.u4.front());
    CHECK(d.u4.back() < 1e-6);
}
