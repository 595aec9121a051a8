#pragma once

#include "tsfluct/common.hpp"
#include "tsfluct/engine.hpp"
#include "tsfluct/model.hpp"
#include "tsfluct/ode.hpp"
#include "tsfluct/schedules.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace tsfluct {

enum class Clock { Fast, Slow };

enum class ComparisonKind { FastFrozen, SlowAveraged, SlowOnFastClock };

// Comparison ODE solution anchored at an iterate, sampled on the
// algorithmic-time knots of its clock. Knot times are offsets from the
// anchor; values[0] is the anchor iterate, exactly.
struct ComparisonSolution {
    ComparisonKind which = ComparisonKind::FastFrozen;
    std::vector<double> times;
    std::vector<Vec> values;
};

// Fast/slow clock pair, precomputed once per experiment.
struct Clocks {
    ClockTable fast;
    ClockTable slow;
};

inline Clocks make_clocks(const SchedulePair& pair, index_t n_count) {
    return Clocks{clock_table(pair.fast, n_count), clock_table(pair.slow, n_count)};
}

// Integrate the comparison ODE across the window with `substeps` RK4 steps
// per knot interval. fast-frozen: xdot = hbar(x, y_anchor); slow-averaged:
// ydot = fbar(y); slow-on-fast-clock: ydot = eps_n fbar(y) with eps frozen
// at the anchor.
inline ComparisonSolution solve_comparison(ComparisonKind which, const ProblemSpec& spec,
                                           const SchedulePair& pair, const Clocks& clocks,
                                           index_t anchor, const Vec& anchor_x,
                                           const Vec& anchor_y, double T, int substeps = 16) {
    if (T <= 0.0) throw Error("solve_comparison needs T > 0");
    if (substeps < 1) throw Error("solve_comparison needs substeps >= 1");
    const AveragedFields af = averaged_fields(spec);
    const ClockTable& clock =
        (which == ComparisonKind::SlowAveraged) ? clocks.slow : clocks.fast;
    const index_t end = window_end(clock, anchor, T);

    std::function<Vec(const Vec&)> rhs;
    Vec state;
    if (which == ComparisonKind::FastFrozen) {
        Vec yfrozen = anchor_y;
        rhs = [hbar = af.hbar, yfrozen](const Vec& x) { return hbar(x, yfrozen); };
        state = anchor_x;
    } else {
        if (!af.fbar) throw ConfigError("comparison ODE needs lambda to form fbar");
        if (which == ComparisonKind::SlowAveraged) {
            rhs = af.fbar;
        } else {
            const double eps = pair.epsilon(anchor);
            rhs = [fbar = af.fbar, eps](const Vec& y) { return Vec(eps * fbar(y)); };
        }
        state = anchor_y;
    }

    ComparisonSolution sol;
    sol.which = which;
    sol.times.reserve(static_cast<std::size_t>(end - anchor) + 1);
    sol.values.reserve(static_cast<std::size_t>(end - anchor) + 1);
    const double t0 = clock.at(anchor);
    sol.times.push_back(0.0);
    sol.values.push_back(state);
    for (index_t j = anchor; j < end; ++j) {
        const double knot = clock.at(j) - t0;
        const double width = clock.at(j + 1) - clock.at(j);
        const double h = width / substeps;
        for (int s = 0; s < substeps; ++s)
            state = rk4_step(state, knot + s * h, h,
                             [&](double, const Vec& v) { return rhs(v); });
        if (!state.allFinite()) throw NumericalError("comparison ODE left the finite domain");
        sol.times.push_back(clock.at(j + 1) - t0);
        sol.values.push_back(state);
    }
    return sol;
}

// Piecewise-linear scaled fluctuation path on a window [0, T] of
// algorithmic time (offsets from the anchor knot).
struct FluctuationPath {
    Clock clock = Clock::Fast;
    index_t anchor = 0;
    double window = 0.0;
    std::vector<double> knot_times;
    std::vector<Vec> knot_values;

    Vec value(double t) const {
        if (knot_times.empty()) throw Error("empty fluctuation path");
        if (t <= knot_times.front()) return knot_values.front();
        if (t >= knot_times.back()) return knot_values.back();
        const auto it = std::upper_bound(knot_times.begin(), knot_times.end(), t);
        const std::size_t k = static_cast<std::size_t>(it - knot_times.begin()) - 1;
        const double th = (t - knot_times[k]) / (knot_times[k + 1] - knot_times[k]);
        return (1.0 - th) * knot_values[k] + th * knot_values[k + 1];
    }

    std::vector<Vec> on_grid(int points) const {
        std::vector<Vec> out;
        out.reserve(static_cast<std::size_t>(points));
        for (double t : uniform_grid(window, points)) out.push_back(value(t));
        return out;
    }
};

// u_j = (lambda(y_j) - x_j) / sqrt(a(j)) over the fast window [n, m^f(n)].
inline FluctuationPath fast_fluctuation(const Trajectory& traj, const ProblemSpec& spec,
                                        const SchedulePair& pair, const Clocks& clocks,
                                        index_t anchor, double T) {
    if (!spec.lambda) throw ConfigError("fast fluctuation needs lambda");
    const index_t end = window_end(clocks.fast, anchor, T);
    if (anchor < traj.n_start || end >= traj.n_end)
        throw HorizonError("fast window [" + std::to_string(anchor) + ", " +
                           std::to_string(end) + "] exceeds the trajectory range");
    FluctuationPath path;
    path.clock = Clock::Fast;
    path.anchor = anchor;
    path.window = T;
    const double t0 = clocks.fast.at(anchor);
    for (index_t j = anchor; j <= end; ++j) {
        path.knot_times.push_back(clocks.fast.at(j) - t0);
        path.knot_values.push_back((spec.lambda(traj.y(j)) - traj.x(j)) /
                                   std::sqrt(pair.fast.value(j)));
    }
    return path;
}

// w_j = (y_j - y^n(t(j))) / sqrt(a(j)). The slow variant runs on the b-clock
// against the slow-averaged comparison; the fast variant runs on the a-clock
// against the eps-frozen comparison.
inline FluctuationPath slow_fluctuation(const Trajectory& traj, const ProblemSpec& spec,
                                        const SchedulePair& pair, const Clocks& clocks,
                                        index_t anchor, double T, Clock variant,
                                        int substeps = 16) {
    const ClockTable& clock = (variant == Clock::Slow) ? clocks.slow : clocks.fast;
    const index_t end = window_end(clock, anchor, T);
    if (anchor < traj.n_start || end >= traj.n_end)
        throw HorizonError("slow window [" + std::to_string(anchor) + ", " +
                           std::to_string(end) + "] exceeds the trajectory range");
    const ComparisonSolution cmp = solve_comparison(
        variant == Clock::Slow ? ComparisonKind::SlowAveraged : ComparisonKind::SlowOnFastClock,
        spec, pair, clocks, anchor, traj.x(anchor), traj.y(anchor), T, substeps);

    FluctuationPath path;
    path.clock = variant;
    path.anchor = anchor;
    path.window = T;
    const double t0 = clock.at(anchor);
    for (index_t j = anchor; j <= end; ++j) {
        const std::size_t k = static_cast<std::size_t>(j - anchor);
        path.knot_times.push_back(clock.at(j) - t0);
        path.knot_values.push_back((traj.y(j) - cmp.values[k]) /
                                   std::sqrt(pair.fast.value(j)));
    }
    return path;
}

// Scaled deviations from the global equilibrium:
// eta_n = (lambda(y*) - x_n)/sqrt(a(n)), upsilon_n = (y_n - y*)/sqrt(a(n)).
struct CltQuantities {
    std::vector<index_t> indices;
    std::vector<Vec> eta;
    std::vector<Vec> upsilon;
};

inline CltQuantities clt_quantities(const Trajectory& traj, const ProblemSpec& spec,
                                    const SchedulePair& pair, const Vec& y_star,
                                    const std::vector<index_t>& indices) {
    if (!spec.lambda) throw ConfigError("clt quantities need lambda");
    CltQuantities out;
    out.indices = indices;
    const Vec x_star = spec.lambda(y_star);
    for (index_t n : indices) {
        const double root_a = std::sqrt(pair.fast.value(n));
        out.eta.push_back((x_star - traj.x(n)) / root_a);
        out.upsilon.push_back((traj.y(n) - y_star) / root_a);
    }
    return out;
}

}  // namespace tsfluct
