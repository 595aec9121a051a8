#pragma once

#include "tsfluct/common.hpp"
#include "tsfluct/markov.hpp"

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <utility>

namespace tsfluct {

// A two-timescale problem instance. Fields must be pure: the same inputs
// always produce the same outputs, so instances can be shared across
// worker threads freely.
struct ProblemSpec {
    std::string name;
    int d1 = 1;  // fast dimension
    int d2 = 1;  // slow dimension
    int S = 1;   // Markov state count; S = 1 means martingale noise only

    std::function<Vec(const Vec& x, const Vec& y, int i)> h;
    std::function<Vec(const Vec& x, const Vec& y, int i)> g;
    std::function<Mat(const Vec& x, const Vec& y)> kernel;
    std::function<Mat(const Vec& x, const Vec& y)> Qf;
    std::function<Mat(const Vec& x, const Vec& y)> Qs;
    std::function<Vec(const Vec& y)> lambda;  // equilibrium map of the fast flow

    // Optional analytic Jacobians of the averaged fields; central differences
    // fill in when absent.
    std::function<Mat(const Vec& x, const Vec& y)> dxh_bar;
    std::function<Mat(const Vec& x, const Vec& y)> dyh_bar;
    std::function<Mat(const Vec& x, const Vec& y)> dxg_bar;
    std::function<Mat(const Vec& x, const Vec& y)> dyg_bar;
    std::function<Mat(const Vec& y)> dfbar;
    std::function<Mat(const Vec& y)> dlambda;

    // Set for problems whose noise covariances do not depend on (x,y); the
    // engine then hoists the matrix square roots out of the step loop.
    bool constant_covariances = false;

    KernelMatrix kernel_at(const Vec& x, const Vec& y) const {
        KernelMatrix k{kernel(x, y)};
        return k;
    }
};

struct AveragedFields {
    std::function<Vec(const Vec& x, const Vec& y)> hbar;
    std::function<Vec(const Vec& x, const Vec& y)> gbar;
    std::function<Vec(const Vec& y)> fbar;  // fbar(y) = gbar(lambda(y), y)
};

// Average the raw fields against the stationary distribution of the frozen
// kernel. With a single state this collapses to the fields themselves.
inline AveragedFields averaged_fields(const ProblemSpec& spec) {
    AveragedFields out;
    if (spec.S == 1) {
        out.hbar = [h = spec.h](const Vec& x, const Vec& y) { return h(x, y, 0); };
        out.gbar = [g = spec.g](const Vec& x, const Vec& y) { return g(x, y, 0); };
    } else {
        out.hbar = [h = spec.h, kernel = spec.kernel, S = spec.S, d1 = spec.d1](
                       const Vec& x, const Vec& y) {
            const Vec pi = stationary(KernelMatrix{kernel(x, y)});
            Vec acc = Vec::Zero(d1);
            for (int i = 0; i < S; ++i) acc += pi[i] * h(x, y, i);
            return acc;
        };
        out.gbar = [g = spec.g, kernel = spec.kernel, S = spec.S, d2 = spec.d2](
                       const Vec& x, const Vec& y) {
            const Vec pi = stationary(KernelMatrix{kernel(x, y)});
            Vec acc = Vec::Zero(d2);
            for (int i = 0; i < S; ++i) acc += pi[i] * g(x, y, i);
            return acc;
        };
    }
    if (spec.lambda) {
        out.fbar = [gbar = out.gbar, lam = spec.lambda](const Vec& y) {
            return gbar(lam(y), y);
        };
    }
    return out;
}

// Central-difference Jacobian with delta = 1e-5 * max(1, |p|) by default.
inline Mat central_difference_jacobian(const std::function<Vec(const Vec&)>& field,
                                       const Vec& point, double step = 0.0) {
    const double delta = step > 0.0 ? step : 1e-5 * std::max(1.0, point.norm());
    const int n = static_cast<int>(point.size());
    const int m = static_cast<int>(field(point).size());
    Mat jac(m, n);
    for (int j = 0; j < n; ++j) {
        Vec lo = point, hi = point;
        hi[j] += delta;
        lo[j] -= delta;
        const Vec fhi = field(hi);
        const Vec flo = field(lo);
        if (!fhi.allFinite() || !flo.allFinite())
            throw NumericalError("non-finite field value while differencing");
        jac.col(j) = (fhi - flo) / (2.0 * delta);
    }
    return jac;
}

enum class JacobianMode { Analytic, CentralDifference };

// Analytic mode hands back the supplied Jacobian; central-difference mode
// probes the field.
inline Mat jacobian(const std::function<Vec(const Vec&)>& field,
                    const std::function<Mat(const Vec&)>& analytic, const Vec& point,
                    JacobianMode mode, double step = 0.0) {
    if (mode == JacobianMode::Analytic) {
        if (!analytic) throw Error("analytic Jacobian requested but not supplied");
        return analytic(point);
    }
    return central_difference_jacobian(field, point, step);
}

// Root of hbar(., y): damped Newton with an Euler-flow fallback whenever the
// Newton step fails to reduce the residual.
inline Vec lambda_solve(const ProblemSpec& spec, const Vec& y, const Vec& x0,
                        double tol = 1e-10, int max_iter = 200) {
    const AveragedFields af = averaged_fields(spec);
    auto resid = [&](const Vec& x) { return af.hbar(x, y); };
    Vec x = x0;
    Vec r = resid(x);
    for (int it = 0; it < max_iter; ++it) {
        double rn = r.norm();
        if (rn <= tol) return x;
        Mat jac = spec.dxh_bar ? spec.dxh_bar(x, y)
                               : central_difference_jacobian(
                                     [&](const Vec& xx) { return resid(xx); }, x);
        bool improved = false;
        Eigen::FullPivLU<Mat> lu(jac);
        if (lu.isInvertible()) {
            const Vec dir = lu.solve(-r);
            double alpha = 1.0;
            for (int halvings = 0; halvings < 20; ++halvings, alpha *= 0.5) {
                Vec cand = x + alpha * dir;
                Vec rc = resid(cand);
                if (rc.allFinite() && rc.norm() < rn) {
                    x = cand;
                    r = rc;
                    improved = true;
                    break;
                }
            }
        }
        if (!improved) {
            // forward-Euler flow of xdot = hbar(x, y), fixed step
            Vec cand = x + 0.25 * r;
            Vec rc = resid(cand);
            if (!rc.allFinite())
                throw ConvergenceError("lambda_solve: Euler fallback left the domain", rn);
            x = cand;
            r = rc;
        }
    }
    const double rn = r.norm();
    if (rn <= tol) return x;
    throw ConvergenceError("lambda_solve: max iterations exceeded, residual " +
                               std::to_string(rn),
                           rn);
}

// Martingale covariance plus the pi-averaged conditional covariance of the
// zeta part of the Markov deviation; this is the diffusion input of the
// limit law.
enum class Timescale { Fast, Slow };

inline Mat effective_noise_covariance(const ProblemSpec& spec, const Vec& x, const Vec& y,
                                      Timescale which) {
    Mat q = (which == Timescale::Fast) ? spec.Qf(x, y) : spec.Qs(x, y);
    if (spec.S == 1) return q;
    const KernelMatrix kernel = spec.kernel_at(x, y);
    const Vec pi = stationary(kernel);
    const int m = (which == Timescale::Fast) ? spec.d1 : spec.d2;
    Mat reward(spec.S, m);
    for (int i = 0; i < spec.S; ++i)
        reward.row(i) = ((which == Timescale::Fast) ? spec.h(x, y, i) : spec.g(x, y, i))
                            .transpose();
    const PoissonSolution sol = poisson_solve(kernel, reward, 0);
    return q + zeta_covariance(kernel, pi, sol.V);
}

// ---------------------------------------------------------------------------
// Built-in problems. Every acceptance quantity for these has a closed form
// or a cheap oracle.

namespace builtin {

inline Mat const1x1(double v) {
    Mat m(1, 1);
    m(0, 0) = v;
    return m;
}

// Linear martingale-only problem: h = -(x - y), g = -y, lambda(y) = y.
inline ProblemSpec p1(double drift_scale = 1.0, bool frozen_slow = false,
                      std::string name = "P1") {
    ProblemSpec s;
    s.name = std::move(name);
    s.d1 = s.d2 = 1;
    s.S = 1;
    s.h = [drift_scale](const Vec& x, const Vec& y, int) -> Vec {
        return drift_scale * (y - x);
    };
    if (frozen_slow)
        s.g = [](const Vec&, const Vec& y, int) -> Vec { return Vec::Zero(y.size()); };
    else
        s.g = [](const Vec&, const Vec& y, int) -> Vec { return -y; };
    s.kernel = [](const Vec&, const Vec&) { return Mat::Identity(1, 1); };
    s.Qf = [](const Vec&, const Vec&) { return const1x1(1.0); };
    s.Qs = [frozen_slow](const Vec&, const Vec&) { return const1x1(frozen_slow ? 0.0 : 1.0); };
    s.lambda = [](const Vec& y) { return y; };
    s.dxh_bar = [drift_scale](const Vec&, const Vec&) { return const1x1(-drift_scale); };
    s.dyh_bar = [drift_scale](const Vec&, const Vec&) { return const1x1(drift_scale); };
    s.dxg_bar = [](const Vec&, const Vec&) { return const1x1(0.0); };
    s.dyg_bar = [frozen_slow](const Vec&, const Vec&) { return const1x1(frozen_slow ? 0.0 : -1.0); };
    s.dfbar = [frozen_slow](const Vec&) { return const1x1(frozen_slow ? 0.0 : -1.0); };
    s.dlambda = [](const Vec&) { return const1x1(1.0); };
    s.constant_covariances = true;
    return s;
}

// As P1 but with a two-state deviation c = (+0.5, -1.0) on h whose
// pi-average vanishes under the kernel [[0.7,0.3],[0.6,0.4]], so the
// averaged drift is unchanged while the effective fast noise inflates.
inline ProblemSpec p2() {
    ProblemSpec s = p1(1.0, false, "P2");
    s.S = 2;
    s.h = [](const Vec& x, const Vec& y, int i) -> Vec {
        Vec v = y - x;
        v[0] += (i == 0) ? 0.5 : -1.0;
        return v;
    };
    s.g = [](const Vec&, const Vec& y, int) -> Vec { return -y; };
    s.kernel = [](const Vec&, const Vec&) {
        Mat k(2, 2);
        k << 0.7, 0.3, 0.6, 0.4;
        return k;
    };
    return s;
}

// Nonlinear variant: h = -(x - tanh y), g = -y + 0.1 tanh x, lambda = tanh.
inline ProblemSpec p3() {
    ProblemSpec s;
    s.name = "P3";
    s.d1 = s.d2 = 1;
    s.S = 1;
    s.h = [](const Vec& x, const Vec& y, int) -> Vec {
        Vec v(1);
        v[0] = std::tanh(y[0]) - x[0];
        return v;
    };
    s.g = [](const Vec& x, const Vec& y, int) -> Vec {
        Vec v(1);
        v[0] = -y[0] + 0.1 * std::tanh(x[0]);
        return v;
    };
    s.kernel = [](const Vec&, const Vec&) { return Mat::Identity(1, 1); };
    s.Qf = [](const Vec&, const Vec&) { return const1x1(1.0); };
    s.Qs = [](const Vec&, const Vec&) { return const1x1(1.0); };
    s.lambda = [](const Vec& y) {
        Vec v(1);
        v[0] = std::tanh(y[0]);
        return v;
    };
    auto sech2 = [](double t) {
        const double c = std::cosh(t);
        return 1.0 / (c * c);
    };
    s.dxh_bar = [](const Vec&, const Vec&) { return const1x1(-1.0); };
    s.dyh_bar = [sech2](const Vec&, const Vec& y) { return const1x1(sech2(y[0])); };
    s.dxg_bar = [sech2](const Vec& x, const Vec&) { return const1x1(0.1 * sech2(x[0])); };
    s.dyg_bar = [](const Vec&, const Vec&) { return const1x1(-1.0); };
    s.dfbar = [sech2](const Vec& y) {
        const double ty = std::tanh(y[0]);
        return const1x1(-1.0 + 0.1 * sech2(ty) * sech2(y[0]));
    };
    s.dlambda = [sech2](const Vec& y) { return const1x1(sech2(y[0])); };
    s.constant_covariances = true;
    return s;
}

}  // namespace builtin

// Problems selectable by name in configs. Custom problems are constructed in
// code against the ProblemSpec contract.
inline ProblemSpec make_problem(const std::string& name) {
    if (name == "P1") return builtin::p1();
    if (name == "P1-fast") return builtin::p1(1.0, true, "P1-fast");
    if (name == "P1-stiff") return builtin::p1(2.0, false, "P1-stiff");
    if (name == "P2") return builtin::p2();
    if (name == "P3") return builtin::p3();
    throw ConfigError("unknown problem '" + name + "'");
}

// Spot checks of the structural invariants at a probe point. lambda problems
// must close the loop |hbar(lambda(y), y)| <= 1e-8.
inline void validate_problem(const ProblemSpec& spec, const Vec& x, const Vec& y) {
    if (!spec.h || !spec.g || !spec.kernel || !spec.Qf || !spec.Qs)
        throw ConfigError("problem is missing a required field");
    if (!spec.lambda)
        throw ConfigError("problem must supply an equilibrium map lambda");
    KernelMatrix k = spec.kernel_at(x, y);
    k.check_stochastic();
    if (!k.irreducible()) throw ConfigError("problem kernel is reducible at the probe point");
    for (Timescale ts : {Timescale::Fast, Timescale::Slow}) {
        const Mat q = (ts == Timescale::Fast) ? spec.Qf(x, y) : spec.Qs(x, y);
        if ((q - q.transpose()).lpNorm<Eigen::Infinity>() > 1e-12)
            throw ConfigError("noise covariance is not symmetric");
        Eigen::SelfAdjointEigenSolver<Mat> es(q);
        if (es.eigenvalues().minCoeff() < -1e-10)
            throw ConfigError("noise covariance has a negative eigenvalue");
    }
    const AveragedFields af = averaged_fields(spec);
    const double closure = af.hbar(spec.lambda(y), y).norm();
    if (closure > 1e-8)
        throw ConfigError("lambda does not solve hbar(., y) = 0 at the probe point: |hbar| = " +
                          std::to_string(closure));
}

}  // namespace tsfluct
