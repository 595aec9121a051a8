#pragma once

#include "tsfluct/common.hpp"

#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace tsfluct {

// Row-stochastic transition matrix of a finite chain.
struct KernelMatrix {
    Mat P;

    int states() const { return static_cast<int>(P.rows()); }

    void check_stochastic(double tol = 1e-12) const {
        if (P.rows() != P.cols() || P.rows() < 1)
            throw KernelError("kernel must be square and nonempty");
        for (int i = 0; i < P.rows(); ++i) {
            double row = 0.0;
            for (int j = 0; j < P.cols(); ++j) {
                if (P(i, j) < -tol || P(i, j) > 1.0 + tol)
                    throw KernelError("kernel entry outside [0,1] at (" + std::to_string(i) +
                                      "," + std::to_string(j) + ")");
                row += P(i, j);
            }
            if (std::abs(row - 1.0) > tol)
                throw KernelError("kernel row " + std::to_string(i) + " sums to " +
                                  std::to_string(row));
        }
    }

    // Single communicating class, decided on the support graph. Reachability
    // both ways from state 0 is equivalent to strong connectivity here.
    bool irreducible() const {
        const int s = states();
        auto reach = [&](bool transpose) {
            std::vector<char> seen(static_cast<std::size_t>(s), 0);
            std::vector<int> stack{0};
            seen[0] = 1;
            while (!stack.empty()) {
                const int i = stack.back();
                stack.pop_back();
                for (int j = 0; j < s; ++j) {
                    const double p = transpose ? P(j, i) : P(i, j);
                    if (p > 0.0 && !seen[static_cast<std::size_t>(j)]) {
                        seen[static_cast<std::size_t>(j)] = 1;
                        stack.push_back(j);
                    }
                }
            }
            for (char c : seen)
                if (!c) return false;
            return true;
        };
        return reach(false) && reach(true);
    }
};

// Stationary distribution of an irreducible kernel: solve (P^T - I) pi = 0
// with the last equation replaced by sum(pi) = 1.
inline Vec stationary(const KernelMatrix& kernel) {
    kernel.check_stochastic();
    if (!kernel.irreducible()) throw KernelError("kernel is reducible");
    const int s = kernel.states();
    Mat A = kernel.P.transpose() - Mat::Identity(s, s);
    Vec rhs = Vec::Zero(s);
    A.row(s - 1).setOnes();
    rhs[s - 1] = 1.0;
    Eigen::FullPivLU<Mat> lu(A);
    if (!lu.isInvertible()) throw KernelError("stationary solve degenerated");
    Vec pi = lu.solve(rhs);
    const double resid = (kernel.P.transpose() * pi - pi).lpNorm<Eigen::Infinity>();
    if (resid > 1e-10) throw KernelError("stationary residual " + std::to_string(resid));
    return pi;
}

// Poisson equation solution V(i) = r(i) - rbar + sum_j P(i,j) V(j), pinned
// by V(i0) = 0. One column of V per reward component.
struct PoissonSolution {
    Mat V;     // states x m
    Vec rbar;  // pi-average of the reward field
    int normalization_state = 0;

    Vec at(int state) const { return V.row(state).transpose(); }
};

inline PoissonSolution poisson_solve(const KernelMatrix& kernel, const Mat& reward,
                                     int i0 = 0) {
    const int s = kernel.states();
    if (reward.rows() != s) throw KernelError("reward field must have one row per state");
    if (i0 < 0 || i0 >= s) throw KernelError("normalization state out of range");
    const Vec pi = stationary(kernel);

    PoissonSolution sol;
    sol.normalization_state = i0;
    sol.rbar = reward.transpose() * pi;

    Mat A = Mat::Identity(s, s) - kernel.P;
    Mat rhs = reward;
    rhs.rowwise() -= sol.rbar.transpose();
    A.row(i0).setZero();
    A(i0, i0) = 1.0;
    rhs.row(i0).setZero();
    Eigen::FullPivLU<Mat> lu(A);
    if (!lu.isInvertible()) throw KernelError("poisson system is singular");
    sol.V = lu.solve(rhs);

    // residual of the original (unmodified) equation, checked explicitly
    for (int i = 0; i < s; ++i) {
        const double r = (sol.V.row(i) - reward.row(i) + sol.rbar.transpose() -
                          (kernel.P.row(i) * sol.V))
                             .lpNorm<Eigen::Infinity>();
        if (r > 1e-10)
            throw KernelError("poisson residual " + std::to_string(r) + " at state " +
                              std::to_string(i));
    }
    return sol;
}

// Inverse-CDF draw over row i: smallest j whose cumulative row sum exceeds u.
inline int sample_next(const KernelMatrix& kernel, int i, double u) {
    const int s = kernel.states();
    double cum = 0.0;
    for (int j = 0; j < s; ++j) {
        cum += kernel.P(i, j);
        if (cum > u) return j;
    }
    return s - 1;  // guards against cumulative rounding just below 1
}

// Pathwise split of the Markov deviation Delta_n into a martingale-difference
// part zeta, a telescoping part tau and an iterate-drift part e.
struct NoiseDecomposition {
    std::vector<Vec> zeta;      // zeta_n, n < M
    std::vector<Vec> tau;       // tau_n = V_n(Y_n), n <= M
    std::vector<Vec> tau_next;  // V_{n+1}(Y_{n+1}) as seen from step n, n < M
    std::vector<Vec> e_delta;   // e_n, n < M

    // zeta_n + tau_n - tau_next_n + e_n, which must reproduce Delta_n
    Vec reconstruct(std::size_t n) const {
        return zeta[n] + tau[n] - tau_next[n] + e_delta[n];
    }
};

// The Poisson data is evaluated along the path at a frozen slow argument:
// solutions[n] corresponds to the iterate at step n, kernels[n] to the
// kernel used for the transition Y_n -> Y_{n+1}. solutions and states need
// one more entry than raw_deltas.
inline NoiseDecomposition decompose_noise(std::span<const PoissonSolution> solutions,
                                          std::span<const KernelMatrix> kernels,
                                          std::span<const int> states,
                                          std::span<const Vec> raw_deltas) {
    const std::size_t m = raw_deltas.size();
    if (states.size() != m + 1)
        throw Error("decompose_noise: state path must be one longer than raw deltas");
    if (solutions.size() != m + 1)
        throw Error("decompose_noise: need one Poisson solution per state-path entry");
    if (kernels.size() < m) throw Error("decompose_noise: need one kernel per step");

    NoiseDecomposition out;
    out.zeta.reserve(m);
    out.tau.reserve(m + 1);
    out.tau_next.reserve(m);
    out.e_delta.reserve(m);
    for (std::size_t n = 0; n <= m; ++n) out.tau.push_back(solutions[n].at(states[n]));
    for (std::size_t n = 0; n < m; ++n) {
        const int yn = states[n];
        const int yn1 = states[n + 1];
        const Mat& V = solutions[n].V;
        Vec expected = V.transpose() * kernels[n].P.row(yn).transpose();
        out.zeta.push_back(solutions[n].at(yn1) - expected);
        out.tau_next.push_back(solutions[n + 1].at(yn1));
        out.e_delta.push_back(solutions[n + 1].at(yn1) - solutions[n].at(yn1));
    }
    return out;
}

// pi-averaged conditional covariance of the zeta part for a given Poisson
// solution: sum_i pi(i) Cov(V(J) | J ~ P(i,.)).
inline Mat zeta_covariance(const KernelMatrix& kernel, const Vec& pi, const Mat& V) {
    const int s = kernel.states();
    const int m = static_cast<int>(V.cols());
    Mat cov = Mat::Zero(m, m);
    for (int i = 0; i < s; ++i) {
        Vec mean = Vec::Zero(m);
        Mat second = Mat::Zero(m, m);
        for (int j = 0; j < s; ++j) {
            const Vec vj = V.row(j).transpose();
            mean += kernel.P(i, j) * vj;
            second += kernel.P(i, j) * (vj * vj.transpose());
        }
        cov += pi[i] * (second - mean * mean.transpose());
    }
    return cov;
}

}  // namespace tsfluct
