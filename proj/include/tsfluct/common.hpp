#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace tsfluct {

// Problem dimensions and Markov state counts are small by design (at most
// 8 per timescale, so 16 for joint fast+slow objects); fixed capacity keeps
// the hot simulation loop free of heap traffic.
inline constexpr int kMaxDim = 16;
inline constexpr int kMaxBlockDim = 8;

using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxDim, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxDim, kMaxDim>;
using index_t = std::int64_t;

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed or inconsistent user configuration (CLI exit code 2).
struct ConfigError : Error {
    using Error::Error;
};

// Schedule parameters outside (0,1), bad table index, horizon issues.
struct ScheduleError : Error {
    using Error::Error;
};

// window_end ran past the precomputed clock table.
struct HorizonError : Error {
    using Error::Error;
};

// lookback asked before the clock accumulated T units of time.
struct EmptyWindowError : Error {
    using Error::Error;
};

// Kernel is not a single communicating class, or a linear solve degenerated.
struct KernelError : Error {
    using Error::Error;
};

// Newton/Euler root search exhausted its iteration budget.
struct ConvergenceError : Error {
    double final_residual = 0.0;
    ConvergenceError(const std::string& msg, double res)
        : Error(msg), final_residual(res) {}
};

// An iterate left the sane region (|coord| > 1e12 or non-finite).
struct DivergenceError : Error {
    index_t at_index = -1;
    DivergenceError(const std::string& msg, index_t n) : Error(msg), at_index(n) {}
};

struct NumericalError : Error {
    using Error::Error;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw Error(msg);
}

}  // namespace tsfluct
