#pragma once

#include "tsfluct/common.hpp"

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace tsfluct {

struct MeanCov {
    Vec mean;
    Mat cov;  // unbiased
    index_t count = 0;
};

inline MeanCov mean_cov(std::span<const Vec> samples) {
    if (samples.size() < 2) throw Error("mean_cov needs at least two samples");
    const int d = static_cast<int>(samples.front().size());
    Vec sum = Vec::Zero(d);
    Mat sum2 = Mat::Zero(d, d);
    for (const Vec& z : samples) {
        sum += z;
        sum2 += z * z.transpose();
    }
    const double n = static_cast<double>(samples.size());
    MeanCov mc;
    mc.count = static_cast<index_t>(samples.size());
    mc.mean = sum / n;
    mc.cov = (sum2 - n * mc.mean * mc.mean.transpose()) / (n - 1.0);
    return mc;
}

// Per-component sample skewness and excess kurtosis. Components whose
// variance is numerically zero are flagged not-applicable instead of
// producing 0/0.
struct GaussianityStats {
    Vec skewness;
    Vec excess_kurtosis;
    std::vector<bool> applicable;
    index_t count = 0;

    double max_abs_kurtosis() const {
        double m = 0.0;
        for (int i = 0; i < excess_kurtosis.size(); ++i)
            if (applicable[static_cast<std::size_t>(i)])
                m = std::max(m, std::abs(excess_kurtosis[i]));
        return m;
    }
    double max_abs_skewness() const {
        double m = 0.0;
        for (int i = 0; i < skewness.size(); ++i)
            if (applicable[static_cast<std::size_t>(i)])
                m = std::max(m, std::abs(skewness[i]));
        return m;
    }
};

inline GaussianityStats gaussianity_stats(std::span<const Vec> samples,
                                          std::size_t min_samples = 500) {
    if (samples.size() < min_samples)
        throw Error("gaussianity_stats needs at least " + std::to_string(min_samples) +
                    " samples, got " + std::to_string(samples.size()));
    const int d = static_cast<int>(samples.front().size());
    const double n = static_cast<double>(samples.size());
    Vec mean = Vec::Zero(d);
    for (const Vec& z : samples) mean += z;
    mean /= n;
    Vec m2 = Vec::Zero(d), m3 = Vec::Zero(d), m4 = Vec::Zero(d);
    for (const Vec& z : samples) {
        for (int i = 0; i < d; ++i) {
            const double c = z[i] - mean[i];
            const double c2 = c * c;
            m2[i] += c2;
            m3[i] += c2 * c;
            m4[i] += c2 * c2;
        }
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    GaussianityStats gs;
    gs.count = static_cast<index_t>(samples.size());
    gs.skewness = Vec::Zero(d);
    gs.excess_kurtosis = Vec::Zero(d);
    gs.applicable.assign(static_cast<std::size_t>(d), false);
    for (int i = 0; i < d; ++i) {
        if (m2[i] > 1e-14 * std::max(1.0, mean[i] * mean[i])) {
            gs.applicable[static_cast<std::size_t>(i)] = true;
            gs.skewness[i] = m3[i] / std::pow(m2[i], 1.5);
            gs.excess_kurtosis[i] = m4[i] / (m2[i] * m2[i]) - 3.0;
        }
    }
    return gs;
}

inline double frobenius(const Mat& m) { return m.norm(); }

inline double rel_frobenius_error(const Mat& emp, const Mat& th, double floor = 1e-12) {
    const double denom = th.norm();
    if (denom <= floor) return emp.norm();  // caller handles the noiseless case
    return (emp - th).norm() / denom;
}

// Monte Carlo standard error of the sample covariance in Frobenius norm,
// under the Gaussian fourth-moment formula Var(S_ab) = (S_aa S_bb + S_ab^2)/N.
inline double mc_se_frobenius(const Mat& th, index_t n_samples) {
    double acc = 0.0;
    for (int a = 0; a < th.rows(); ++a)
        for (int b = 0; b < th.cols(); ++b)
            acc += (th(a, a) * th(b, b) + th(a, b) * th(a, b));
    return std::sqrt(acc / static_cast<double>(n_samples));
}

// |mean| <= z * sample_sd/sqrt(N), per component.
inline bool mean_within_sigmas(const Vec& mean, const Mat& cov, index_t n, double z) {
    for (int i = 0; i < mean.size(); ++i) {
        const double se = std::sqrt(std::max(cov(i, i), 0.0) / static_cast<double>(n));
        if (std::abs(mean[i]) > z * std::max(se, 1e-300)) return false;
    }
    return true;
}

}  // namespace tsfluct
