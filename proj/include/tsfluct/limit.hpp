#pragma once

#include "tsfluct/common.hpp"
#include "tsfluct/model.hpp"
#include "tsfluct/ode.hpp"
#include "tsfluct/rng.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <thread>
#include <vector>

namespace tsfluct {

// Symmetric PSD square root via spectral decomposition. Eigenvalues in
// [-1e-10, 0) are clipped to zero; anything materially negative is an error.
inline Mat sqrt_psd(const Mat& q) {
    if (q.rows() == 1 && q.cols() == 1) {
        const double v = q(0, 0);
        if (v < -1e-6 * std::max(1.0, std::abs(v))) throw NumericalError("sqrt_psd: negative input");
        return Mat::Constant(1, 1, std::sqrt(std::max(0.0, v)));
    }
    if ((q - q.transpose()).lpNorm<Eigen::Infinity>() > 1e-10 * std::max(1.0, q.norm()))
        throw NumericalError("sqrt_psd: input is not symmetric");
    Eigen::SelfAdjointEigenSolver<Mat> es(q);
    const double scale = std::max(1.0, q.norm());
    Vec lam = es.eigenvalues();
    for (int i = 0; i < lam.size(); ++i) {
        if (lam[i] < -1e-6 * scale)
            throw NumericalError("sqrt_psd: eigenvalue " + std::to_string(lam[i]) +
                                 " is materially negative");
        lam[i] = std::sqrt(std::max(0.0, lam[i]));
    }
    return es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
}

// Solution operator Phi(t, s) of dX/dt = M(t) X, X(s) = I, by matrix RK4.
inline Mat fundamental_matrix(const std::function<Mat(double)>& field, double s, double t,
                              double dt) {
    if (t < s) throw Error("fundamental_matrix needs t >= s");
    const int d = static_cast<int>(field(s).rows());
    Mat phi = Mat::Identity(d, d);
    if (t == s) return phi;
    const int steps = std::max(1, static_cast<int>(std::ceil((t - s) / dt)));
    const double h = (t - s) / steps;
    double tau = s;
    for (int k = 0; k < steps; ++k) {
        phi = rk4_step(phi, tau, h, [&](double u, const Mat& x) -> Mat { return field(u) * x; });
        tau += h;
        if (!phi.allFinite()) throw NumericalError("fundamental_matrix: non-finite entries");
    }
    return phi;
}

// Joint Gauss-Markov law of the fluctuation limit: block drift
//   F(t) = [[A(t) + (phi/2) I, 0], [B(t), C(t)]]
// with A = dx hbar, B = dx gbar, C = dfbar evaluated along the deterministic
// slow trajectory y*(.), and diffusion D(t) = blockdiag(Qf_eff, 0). The slow
// block carries no stochastic integral.
struct GaussMarkovSpec {
    int d1 = 1;
    int d2 = 1;
    double phi = 0.0;
    DensePath y_star;
    std::function<Mat(const Vec& y)> A_of_y;      // dx hbar(lambda(y), y)
    std::function<Mat(const Vec& y)> B_of_y;      // dx gbar(lambda(y), y)
    std::function<Mat(const Vec& y)> C_of_y;      // dfbar(y)
    std::function<Mat(const Vec& y)> Qeff_of_y;   // effective fast diffusion
    bool constant_diffusion = false;

    int dim() const { return d1 + d2; }

    Mat drift(double t) const {
        const Vec y = y_star.eval(t);
        Mat f = Mat::Zero(dim(), dim());
        f.topLeftCorner(d1, d1) = A_of_y(y) + 0.5 * phi * Mat::Identity(d1, d1);
        f.bottomLeftCorner(d2, d1) = B_of_y(y);
        f.bottomRightCorner(d2, d2) = C_of_y(y);
        return f;
    }

    Mat diffusion(double t) const {
        const Vec y = y_star.eval(t);
        Mat d = Mat::Zero(dim(), dim());
        d.topLeftCorner(d1, d1) = Qeff_of_y(y);
        return d;
    }
};

// Assemble the limit law for a problem: y*(.) solves ydot = fbar(y) from
// y0 (the anchor), and the coefficient fields ride along it.
inline GaussMarkovSpec make_gauss_markov(const ProblemSpec& spec, const Vec& y_star0,
                                         double phi, double horizon, int path_steps = 4096) {
    GaussMarkovSpec gm;
    gm.d1 = spec.d1;
    gm.d2 = spec.d2;
    gm.phi = phi;
    const AveragedFields af = averaged_fields(spec);
    if (!af.fbar) throw ConfigError("limit law needs lambda to form fbar");
    gm.y_star = DensePath(y_star0, horizon, path_steps, af.fbar);
    auto lam = spec.lambda;
    auto hbar = af.hbar;
    auto gbar = af.gbar;
    gm.A_of_y = [spec, lam, hbar](const Vec& y) {
        const Vec x = lam(y);
        if (spec.dxh_bar) return spec.dxh_bar(x, y);
        return central_difference_jacobian(
            [&](const Vec& xx) { return hbar(xx, y); }, x);
    };
    gm.B_of_y = [spec, lam, gbar](const Vec& y) {
        const Vec x = lam(y);
        if (spec.dxg_bar) return spec.dxg_bar(x, y);
        return central_difference_jacobian(
            [&](const Vec& xx) { return gbar(xx, y); }, x);
    };
    gm.C_of_y = [spec, af, lam](const Vec& y) {
        if (spec.dfbar) return spec.dfbar(y);
        return central_difference_jacobian(af.fbar, y);
    };
    gm.Qeff_of_y = [spec, lam](const Vec& y) {
        return effective_noise_covariance(spec, lam(y), y, Timescale::Fast);
    };
    gm.constant_diffusion = spec.constant_covariances && spec.S == 1;
    return gm;
}

// Time-indexed covariance of the limit law, Sigma(0) given (zero unless the
// fast block is configured otherwise).
struct CovarianceCurve {
    std::vector<double> times;
    std::vector<Mat> sigmas;

    // linear interpolation between stored grid times
    Mat eval(double t) const {
        if (times.empty()) throw Error("CovarianceCurve is empty");
        if (t <= times.front()) return sigmas.front();
        if (t >= times.back()) return sigmas.back();
        const auto it = std::upper_bound(times.begin(), times.end(), t);
        const std::size_t k = static_cast<std::size_t>(it - times.begin()) - 1;
        const double th = (t - times[k]) / (times[k + 1] - times[k]);
        return (1.0 - th) * sigmas[k] + th * sigmas[k + 1];
    }
};

// RK4 integration of the Lyapunov equation Sigma' = F Sigma + Sigma F^T + D,
// symmetrized after every step.
inline CovarianceCurve lyapunov_covariance(const GaussMarkovSpec& gm, double horizon,
                                           double dt, const Mat* sigma0 = nullptr) {
    const int d = gm.dim();
    Mat sigma = sigma0 ? *sigma0 : Mat::Zero(d, d);
    const int steps = std::max(1, static_cast<int>(std::ceil(horizon / dt)));
    const double h = horizon / steps;
    CovarianceCurve curve;
    curve.times.reserve(static_cast<std::size_t>(steps) + 1);
    curve.sigmas.reserve(static_cast<std::size_t>(steps) + 1);
    curve.times.push_back(0.0);
    curve.sigmas.push_back(sigma);
    auto rhs = [&](double t, const Mat& s) -> Mat {
        const Mat f = gm.drift(t);
        return f * s + s * f.transpose() + gm.diffusion(t);
    };
    for (int k = 0; k < steps; ++k) {
        sigma = rk4_step(sigma, k * h, h, rhs);
        sigma = 0.5 * (sigma + sigma.transpose());
        if (!sigma.allFinite()) throw NumericalError("lyapunov_covariance: non-finite entries");
        curve.times.push_back((k + 1) * h);
        curve.sigmas.push_back(sigma);
    }
    return curve;
}

// One sampled joint path of the limit law, recorded on a uniform output grid.
struct LimitPathEnsemble {
    std::vector<double> grid;            // output times on [0, T]
    std::vector<std::vector<Vec>> paths; // paths[i][g] = (u, w) at grid[g]
};

namespace detail {

// Coefficient matrices tabulated once on the integration grid; every sampled
// path then reuses them, and the values are identical to evaluating the
// fields per step.
struct SamplerTableau {
    int d1 = 1, d2 = 1;
    int steps = 1;
    double h = 0.0;
    std::vector<Mat> a_drift;   // A(t_k) + (phi/2) I
    std::vector<Mat> g_root;    // psd sqrt of Qeff(t_k)
    std::vector<Mat> c0, ch, c1;  // C at t_k, t_k + h/2, t_k + h
    std::vector<Mat> b0, bh, b1;  // B likewise

    SamplerTableau(const GaussMarkovSpec& gm, double horizon, double dt) {
        d1 = gm.d1;
        d2 = gm.d2;
        steps = std::max(1, static_cast<int>(std::ceil(horizon / dt)));
        h = horizon / steps;
        a_drift.reserve(static_cast<std::size_t>(steps));
        g_root.reserve(static_cast<std::size_t>(steps));
        for (int k = 0; k < steps; ++k) {
            const double t = k * h;
            const Vec y = gm.y_star.eval(t);
            a_drift.push_back(gm.A_of_y(y) + 0.5 * gm.phi * Mat::Identity(d1, d1));
            g_root.push_back(sqrt_psd(Mat(gm.Qeff_of_y(y))));
            const Vec ymid = gm.y_star.eval(t + 0.5 * h);
            const Vec yend = gm.y_star.eval(t + h);
            c0.push_back(gm.C_of_y(y));
            ch.push_back(gm.C_of_y(ymid));
            c1.push_back(gm.C_of_y(yend));
            b0.push_back(gm.B_of_y(y));
            bh.push_back(gm.B_of_y(ymid));
            b1.push_back(gm.B_of_y(yend));
        }
    }
};

// Scalar specialization of the path loop below; the arithmetic mirrors the
// generic code operation for operation, so both produce identical bytes.
template <class Visit>
void sample_limit_block_scalar(const SamplerTableau& tab, index_t p_lo, index_t p_hi,
                               std::uint64_t seed, const std::vector<double>& grid,
                               Visit&& visit) {
    const double h = tab.h;
    const double root_h = std::sqrt(h);
    const std::size_t steps = static_cast<std::size_t>(tab.steps);
    for (index_t p = p_lo; p < p_hi; ++p) {
        RngStream rng = RngStream::substream(seed, static_cast<std::uint64_t>(p));
        double u = 0.0, w = 0.0;
        std::size_t gi = 0;
        double t_prev = 0.0, u_prev = 0.0, w_prev = 0.0;
        auto emit_until = [&](double t_now, double u_now, double w_now) {
            while (gi < grid.size() && grid[gi] <= t_now + 1e-12) {
                const double span = t_now - t_prev;
                const double th =
                    span > 0.0 ? std::clamp((grid[gi] - t_prev) / span, 0.0, 1.0) : 1.0;
                Vec z(2);
                z[0] = (1.0 - th) * u_prev + th * u_now;
                z[1] = (1.0 - th) * w_prev + th * w_now;
                visit(p, gi, z);
                ++gi;
            }
        };
        emit_until(0.0, 0.0, 0.0);
        for (std::size_t k = 0; k < steps && gi < grid.size(); ++k) {
            const double du = tab.a_drift[k](0, 0) * u * h +
                              root_h * (tab.g_root[k](0, 0) * rng.normal_vec(1)[0]);
            const double k1 = tab.c0[k](0, 0) * w + tab.b0[k](0, 0) * u;
            const double k2 = tab.ch[k](0, 0) * (w + 0.5 * h * k1) + tab.bh[k](0, 0) * u;
            const double k3 = tab.ch[k](0, 0) * (w + 0.5 * h * k2) + tab.bh[k](0, 0) * u;
            const double k4 = tab.c1[k](0, 0) * (w + h * k3) + tab.b1[k](0, 0) * u;
            w += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            u += du;
            if (!std::isfinite(u) || !std::isfinite(w))
                throw NumericalError("sample_limit_paths: non-finite state");
            emit_until((k + 1) * h, u, w);
            t_prev = (k + 1) * h;
            u_prev = u;
            w_prev = w;
        }
    }
}

// Euler-Maruyama for the u block, RK4 with u frozen across the step for the
// deterministic w block. visit(path_index, grid_index, state) is called on
// every output point in order.
template <class Visit>
void sample_limit_block(const SamplerTableau& tab, index_t p_lo, index_t p_hi,
                        std::uint64_t seed, const std::vector<double>& grid, Visit&& visit,
                        bool allow_scalar_path = true) {
    const int d1 = tab.d1, d2 = tab.d2;
    if (allow_scalar_path && d1 == 1 && d2 == 1) {
        sample_limit_block_scalar(tab, p_lo, p_hi, seed, grid, visit);
        return;
    }
    const double h = tab.h;
    const double root_h = std::sqrt(h);
    for (index_t p = p_lo; p < p_hi; ++p) {
        RngStream rng = RngStream::substream(seed, static_cast<std::uint64_t>(p));
        Vec u = Vec::Zero(d1);
        Vec w = Vec::Zero(d2);
        std::size_t gi = 0;
        double t_prev = 0.0;
        Vec z_prev(d1 + d2);
        z_prev << u, w;
        auto emit_until = [&](double t_now, const Vec& z_now) {
            while (gi < grid.size() && grid[gi] <= t_now + 1e-12) {
                const double span = t_now - t_prev;
                const double th =
                    span > 0.0 ? std::clamp((grid[gi] - t_prev) / span, 0.0, 1.0) : 1.0;
                visit(p, gi, Vec((1.0 - th) * z_prev + th * z_now));
                ++gi;
            }
        };
        emit_until(0.0, z_prev);
        for (int k = 0; k < tab.steps && gi < grid.size(); ++k) {
            const auto ku = static_cast<std::size_t>(k);
            const Vec du =
                tab.a_drift[ku] * u * h + root_h * (tab.g_root[ku] * rng.normal_vec(d1));
            // RK4 for w' = C(t) w + B(t) u with u held at its left value
            const Vec k1 = tab.c0[ku] * w + tab.b0[ku] * u;
            const Vec k2 = tab.ch[ku] * (w + 0.5 * h * k1) + tab.bh[ku] * u;
            const Vec k3 = tab.ch[ku] * (w + 0.5 * h * k2) + tab.bh[ku] * u;
            const Vec k4 = tab.c1[ku] * (w + h * k3) + tab.b1[ku] * u;
            w += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            u += du;
            if (!u.allFinite() || !w.allFinite())
                throw NumericalError("sample_limit_paths: non-finite state");
            Vec z(d1 + d2);
            z << u, w;
            emit_until((k + 1) * h, z);
            t_prev = (k + 1) * h;
            z_prev = z;
        }
    }
}

}  // namespace detail

inline std::vector<double> uniform_grid(double horizon, int points) {
    std::vector<double> g(static_cast<std::size_t>(points));
    for (int i = 0; i < points; ++i)
        g[static_cast<std::size_t>(i)] = horizon * static_cast<double>(i) / (points - 1);
    return g;
}

inline LimitPathEnsemble sample_limit_paths(const GaussMarkovSpec& gm, index_t n_paths,
                                            double horizon, double dt, std::uint64_t seed,
                                            int grid_points = 64) {
    LimitPathEnsemble out;
    out.grid = uniform_grid(horizon, grid_points);
    out.paths.assign(static_cast<std::size_t>(n_paths),
                     std::vector<Vec>(out.grid.size()));
    const detail::SamplerTableau tab(gm, horizon, dt);
    detail::sample_limit_block(tab, 0, n_paths, seed, out.grid,
                               [&](index_t p, std::size_t g, const Vec& z) {
                                   out.paths[static_cast<std::size_t>(p)][g] = z;
                               });
    return out;
}

// Streaming first and second moments of the sampled law; usable at path
// counts where storing the ensemble would not be. Paths are processed in
// fixed blocks whose partial sums are reduced in block order, so the result
// does not depend on the worker count.
struct LimitMoments {
    std::vector<double> grid;
    std::vector<Vec> mean;
    std::vector<Mat> cov;  // unbiased, about the sample mean
};

inline LimitMoments sample_limit_moments(const GaussMarkovSpec& gm, index_t n_paths,
                                         double horizon, double dt, std::uint64_t seed,
                                         int grid_points = 64, int threads = 0) {
    LimitMoments out;
    out.grid = uniform_grid(horizon, grid_points);
    const int d = gm.dim();
    const detail::SamplerTableau tab(gm, horizon, dt);

    constexpr index_t kBlock = 1024;
    const index_t n_blocks = (n_paths + kBlock - 1) / kBlock;
    std::vector<std::vector<Vec>> block_sum(
        static_cast<std::size_t>(n_blocks),
        std::vector<Vec>(out.grid.size(), Vec::Zero(d)));
    std::vector<std::vector<Mat>> block_sum2(
        static_cast<std::size_t>(n_blocks),
        std::vector<Mat>(out.grid.size(), Mat::Zero(d, d)));

    int n_threads = threads > 0 ? threads
                                : static_cast<int>(std::thread::hardware_concurrency());
    if (n_threads < 1) n_threads = 1;
    std::atomic<index_t> next_block{0};
    auto worker = [&] {
        for (;;) {
            const index_t b = next_block.fetch_add(1);
            if (b >= n_blocks) return;
            auto& sum = block_sum[static_cast<std::size_t>(b)];
            auto& sum2 = block_sum2[static_cast<std::size_t>(b)];
            detail::sample_limit_block(tab, b * kBlock,
                                       std::min(n_paths, (b + 1) * kBlock), seed, out.grid,
                                       [&](index_t, std::size_t g, const Vec& z) {
                                           sum[g] += z;
                                           sum2[g] += z * z.transpose();
                                       });
        }
    };
    if (n_threads == 1 || n_blocks == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    out.mean.resize(out.grid.size());
    out.cov.resize(out.grid.size());
    const double n = static_cast<double>(n_paths);
    for (std::size_t g = 0; g < out.grid.size(); ++g) {
        Vec sum = Vec::Zero(d);
        Mat sum2 = Mat::Zero(d, d);
        for (index_t b = 0; b < n_blocks; ++b) {
            sum += block_sum[static_cast<std::size_t>(b)][g];
            sum2 += block_sum2[static_cast<std::size_t>(b)][g];
        }
        out.mean[g] = sum / n;
        out.cov[g] = (sum2 - n * out.mean[g] * out.mean[g].transpose()) / (n - 1.0);
    }
    return out;
}

// Closed-form slow law when phi may be nonzero: w*(t) = w0 e^{phi t / 2}.
inline std::vector<std::pair<double, Vec>> theorem3_slow_law(double phi, const Vec& w0,
                                                             double horizon,
                                                             int grid_points = 64) {
    std::vector<std::pair<double, Vec>> path;
    path.reserve(static_cast<std::size_t>(grid_points));
    for (double t : uniform_grid(horizon, grid_points))
        path.emplace_back(t, Vec(std::exp(0.5 * phi * t) * w0));
    return path;
}

}  // namespace tsfluct
