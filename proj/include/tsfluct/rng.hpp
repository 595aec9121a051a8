#pragma once

#include "tsfluct/common.hpp"

#include <cmath>
#include <cstdint>
#include <random>

namespace tsfluct {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace detail

// Deterministic random stream. mt19937_64 transitions are pinned by the
// standard, and the Gaussian transform below is explicit Box-Muller, so a
// (seed, stream index) pair reproduces the same draws on every run and
// every thread layout.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : eng_(seed) {}

    // Independent substream for worker `index` under a common base seed.
    static RngStream substream(std::uint64_t base_seed, std::uint64_t index) {
        std::uint64_t s = base_seed;
        std::uint64_t a = detail::splitmix64(s);
        s = a ^ (index * 0xD1342543DE82EF95ULL + 0x2545F4914F6CDD1DULL);
        std::uint64_t b = detail::splitmix64(s);
        return RngStream(b);
    }

    // Uniform on [0,1), 53 random bits.
    double uniform() {
        return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    }

    // Box-Muller pair; consumes exactly two uniforms.
    void normal_pair(double& z0, double& z1) {
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log1p(-u1));  // 1-u1 in (0,1]
        const double th = 2.0 * M_PI * u2;
        z0 = r * std::cos(th);
        z1 = r * std::sin(th);
    }

    // Standard normal vector of length d. Always consumes ceil(d/2) pairs,
    // discarding the spare half for odd d, so consumption per call is a
    // function of d alone.
    Vec normal_vec(int d) {
        Vec z(d);
        for (int i = 0; i < d; i += 2) {
            double z0, z1;
            normal_pair(z0, z1);
            z[i] = z0;
            if (i + 1 < d) z[i + 1] = z1;
        }
        return z;
    }

    std::uint64_t raw() { return eng_(); }

private:
    std::mt19937_64 eng_;
};

}  // namespace tsfluct
