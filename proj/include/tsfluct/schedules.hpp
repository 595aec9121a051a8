#pragma once

#include "tsfluct/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <utility>
#include <vector>

namespace tsfluct {

// Step-size sequence n -> a(n). Power-law schedules evaluate C/(n+1)^rho
// directly; tabulated schedules exist mainly to feed adversarial cases to
// the validators.
class StepSchedule {
public:
    enum class Kind { PowerLaw, Tabulated };

    static StepSchedule power_law(double scale, double exponent) {
        if (!(scale > 0.0 && scale < 1.0))
            throw ScheduleError("power_law scale must lie in (0,1), got " + std::to_string(scale));
        if (!(exponent > 0.0))
            throw ScheduleError("power_law exponent must be positive, got " + std::to_string(exponent));
        StepSchedule s;
        s.kind_ = Kind::PowerLaw;
        s.scale_ = scale;
        s.exponent_ = exponent;
        return s;
    }

    static StepSchedule tabulated(std::vector<double> values) {
        if (values.empty()) throw ScheduleError("tabulated schedule needs at least one value");
        StepSchedule s;
        s.kind_ = Kind::Tabulated;
        s.values_ = std::move(values);
        return s;
    }

    Kind kind() const { return kind_; }
    double scale() const { return scale_; }
    double exponent() const { return exponent_; }
    index_t table_size() const { return static_cast<index_t>(values_.size()); }

    double value(index_t n) const {
        if (n < 0) throw ScheduleError("schedule index must be nonnegative");
        double v;
        if (kind_ == Kind::PowerLaw) {
            v = scale_ * std::pow(static_cast<double>(n) + 1.0, -exponent_);
        } else {
            if (n >= static_cast<index_t>(values_.size()))
                throw ScheduleError("tabulated schedule index " + std::to_string(n) +
                                    " out of range (size " + std::to_string(values_.size()) + ")");
            v = values_[static_cast<std::size_t>(n)];
        }
        if (!(v > 0.0 && v < 1.0))
            throw ScheduleError("schedule value " + std::to_string(v) + " at n=" +
                                std::to_string(n) + " lies outside (0,1)");
        return v;
    }

private:
    Kind kind_ = Kind::PowerLaw;
    double scale_ = 0.5;
    double exponent_ = 1.0;
    std::vector<double> values_;
};

inline double step_value(const StepSchedule& sched, index_t n) { return sched.value(n); }

// Cumulative algorithmic clock t(n) = sum_{m<n} step(m), t(0) = 0.
// Precomputed once; window queries are hot in the harness.
struct ClockTable {
    std::vector<double> times;  // times[n] = t(n), strictly increasing

    index_t size() const { return static_cast<index_t>(times.size()); }
    double at(index_t n) const {
        if (n < 0 || n >= size()) throw ScheduleError("clock index out of range");
        return times[static_cast<std::size_t>(n)];
    }
};

inline ClockTable clock_table(const StepSchedule& sched, index_t n_count) {
    if (n_count < 1) throw ScheduleError("clock_table needs at least one entry");
    ClockTable c;
    c.times.resize(static_cast<std::size_t>(n_count));
    c.times[0] = 0.0;
    for (index_t n = 1; n < n_count; ++n)
        c.times[static_cast<std::size_t>(n)] =
            c.times[static_cast<std::size_t>(n - 1)] + sched.value(n - 1);
    return c;
}

// Smallest m >= n with t(m) >= t(n) + T.
inline index_t window_end(const ClockTable& clock, index_t n, double T) {
    if (T <= 0.0) throw ScheduleError("window length T must be positive");
    if (n < 0 || n >= clock.size()) throw ScheduleError("window_end anchor out of range");
    const double target = clock.times[static_cast<std::size_t>(n)] + T;
    auto it = std::lower_bound(clock.times.begin(), clock.times.end(), target);
    if (it == clock.times.end())
        throw HorizonError("window [n=" + std::to_string(n) + ", T=" + std::to_string(T) +
                           ") exceeds the clock horizon");
    return static_cast<index_t>(it - clock.times.begin());
}

// Largest m <= n with t(m) <= t(n) - T.
inline index_t lookback(const ClockTable& clock, index_t n, double T) {
    if (T <= 0.0) throw ScheduleError("window length T must be positive");
    if (n < 0 || n >= clock.size()) throw ScheduleError("lookback anchor out of range");
    const double target = clock.times[static_cast<std::size_t>(n)] - T;
    if (clock.times[0] > target)
        throw EmptyWindowError("lookback empty: t(n)=" +
                               std::to_string(clock.times[static_cast<std::size_t>(n)]) +
                               " < T=" + std::to_string(T));
    auto it = std::upper_bound(clock.times.begin(), clock.times.end(), target);
    return static_cast<index_t>(it - clock.times.begin()) - 1;
}

struct PhiEstimate {
    double value = 0.0;
    bool converged = false;  // successive tail estimates agree within tol
};

// Estimate of lim (1/a(n+1) - 1/a(n)). Tail averages over the final 10% of
// the horizon at dyadic horizons N, N/2, N/4 are Aitken-extrapolated: for
// power-law steps the tail average decays like a pure power of the horizon,
// which the dyadic extrapolation cancels. The convergence flag compares the
// extrapolated values at horizons N and N/2.
inline PhiEstimate phi_limit(const StepSchedule& sched, index_t n_count, double tol = 1e-3) {
    if (n_count < 100) throw ScheduleError("phi_limit needs N >= 100");
    auto tail_mean = [&](index_t horizon) {
        const index_t lo = horizon - std::max<index_t>(1, horizon / 10);
        // sum of (1/a(n+1) - 1/a(n)) over [lo, horizon) telescopes
        return (1.0 / sched.value(horizon) - 1.0 / sched.value(lo)) /
               static_cast<double>(horizon - lo);
    };
    auto aitken = [](double a1, double a2, double a3) {
        const double d1 = a2 - a3;
        const double d2 = a1 - a2;
        const double den = d2 - d1;
        if (std::abs(den) <= 1e-12 * std::max(1.0, std::abs(a1))) return a1;
        return a1 - d2 * d2 / den;
    };
    const double t1 = tail_mean(n_count);
    const double t2 = tail_mean(n_count / 2);
    const double t4 = tail_mean(n_count / 4);
    const double t8 = tail_mean(n_count / 8);
    PhiEstimate est;
    est.value = aitken(t1, t2, t4);
    est.converged = std::abs(est.value - aitken(t2, t4, t8)) <= tol;
    return est;
}

// Fast/slow schedule pair (a, b) plus the horizon the assumption checks ran on.
struct SchedulePair {
    StepSchedule fast;
    StepSchedule slow;
    index_t validated_horizon = 0;

    double fast_value(index_t n) const { return fast.value(n); }
    double slow_value(index_t n) const { return slow.value(n); }
    double epsilon(index_t n) const { return slow.value(n) / fast.value(n); }
};

struct TrendCheck {
    bool decile_decreasing = false;  // last-decile mean < first-decile mean
    double first_decile_mean = 0.0;
    double last_decile_mean = 0.0;
    double initial_value = 0.0;
    double final_value = 0.0;
    // Informational: whether the final value dropped below a tenth of the
    // initial one. Power-law pairs with the (1/2,2/3) exponent window decay
    // like n^{-0.05} and cannot clear this at desk horizons, so it does not
    // gate the pass flag.
    bool final_below_tenth = false;
};

inline TrendCheck trend_check(const std::vector<double>& seq) {
    TrendCheck t;
    if (seq.size() < 10) return t;
    const std::size_t dec = seq.size() / 10;
    double first = 0.0, last = 0.0;
    for (std::size_t i = 0; i < dec; ++i) first += seq[i];
    for (std::size_t i = seq.size() - dec; i < seq.size(); ++i) last += seq[i];
    t.first_decile_mean = first / static_cast<double>(dec);
    t.last_decile_mean = last / static_cast<double>(dec);
    t.initial_value = seq.front();
    t.final_value = seq.back();
    t.decile_decreasing = t.last_decile_mean < t.first_decile_mean;
    t.final_below_tenth = t.final_value <= 0.1 * t.initial_value;
    return t;
}

struct ScheduleDiagnostics {
    PhiEstimate phi;        // limit of 1/a(n+1) - 1/a(n)
    PhiEstimate vartheta;   // limit of 1/b(n+1) - 1/b(n); reported, never consumed
    std::vector<double> ratio_trend;     // b(n)/a(n)^{3/2}
    std::vector<double> bn_omega_trend;  // (a(n)/b(n)) (1/a(n+1) - 1/a(n))
    std::vector<std::pair<double, double>> zeta_profile;  // T -> sup_n a(m^{f-})/(a(n) e^T)

    bool ordering_ok = false;       // 0 < b <= a^{3/2} < a < 1 pointwise
    bool fast_monotone_ok = false;  // a strictly decreasing
    TrendCheck ratio_check;         // b/a^{3/2} -> 0
    TrendCheck bn_omega_check;      // (a/b)(1/a(n+1) - 1/a(n)) -> 0
    bool zeta_decreasing = false;   // profile non-increasing along the T grid

    bool theorem3_regime() const { return phi.converged && std::abs(phi.value) > 1e-3; }

    bool pass_a1() const { return ordering_ok && ratio_check.decile_decreasing; }
    // vartheta is estimated and reported but nothing downstream consumes it,
    // so it does not gate the flag.
    bool pass_a2() const { return phi.converged; }
    bool pass_a3() const { return bn_omega_check.decile_decreasing; }
    bool pass_a4() const { return fast_monotone_ok; }
    bool pass_a5() const { return zeta_decreasing; }
    bool all_pass() const { return pass_a1() && pass_a2() && pass_a3() && pass_a4() && pass_a5(); }
};

// Pointwise and trend checks over n < N. Violations come back as flags,
// not exceptions.
inline ScheduleDiagnostics validate_pair(const SchedulePair& pair, index_t n_count,
                                         double tol = 1e-3) {
    if (n_count < 100) throw ScheduleError("validate_pair needs N >= 100");
    ScheduleDiagnostics d;
    d.ratio_trend.reserve(static_cast<std::size_t>(n_count));
    d.bn_omega_trend.reserve(static_cast<std::size_t>(n_count));
    bool ordering = true;
    bool monotone = true;
    double prev_a = 2.0;
    for (index_t n = 0; n < n_count; ++n) {
        const double a = pair.fast.value(n);
        const double b = pair.slow.value(n);
        const double a32 = std::pow(a, 1.5);
        if (!(b > 0.0 && b <= a32 && a32 < a && a < 1.0)) ordering = false;
        if (!(a < prev_a)) monotone = false;
        prev_a = a;
        d.ratio_trend.push_back(b / a32);
        const double anext = pair.fast.value(n + 1);
        d.bn_omega_trend.push_back((a / b) * (1.0 / anext - 1.0 / a));
    }
    d.ordering_ok = ordering;
    d.fast_monotone_ok = monotone;
    d.ratio_check = trend_check(d.ratio_trend);
    d.bn_omega_check = trend_check(d.bn_omega_trend);
    d.phi = phi_limit(pair.fast, n_count, tol);
    d.vartheta = phi_limit(pair.slow, n_count, tol);
    return d;
}

// sup over valid n <= N of a(m^{f-}(n,T)) / (a(n) e^T), per window length T.
// Written into an existing diagnostics object so validate_pair output and
// the profile travel together.
inline void zeta_diagnostic(const SchedulePair& pair, const std::vector<double>& t_grid,
                            index_t n_count, ScheduleDiagnostics& diag) {
    const ClockTable clock = clock_table(pair.fast, n_count + 1);
    const double horizon_time = clock.times.back();
    diag.zeta_profile.clear();
    for (double T : t_grid) {
        if (!(T > 0.0 && T < horizon_time / 2.0))
            throw ScheduleError("zeta_diagnostic window T=" + std::to_string(T) +
                                " must lie in (0, t(N)/2)");
        double sup = 0.0;
        index_t m = 0;  // two-pointer lookback: m advances with n
        for (index_t n = 0; n <= n_count; ++n) {
            const double tn = clock.times[static_cast<std::size_t>(n)];
            if (tn < T) continue;
            while (m + 1 <= n && clock.times[static_cast<std::size_t>(m + 1)] <= tn - T) ++m;
            const double v = pair.fast.value(m) / (pair.fast.value(n) * std::exp(T));
            sup = std::max(sup, v);
        }
        diag.zeta_profile.emplace_back(T, sup);
    }
    diag.zeta_decreasing = true;
    for (std::size_t i = 1; i < diag.zeta_profile.size(); ++i)
        if (diag.zeta_profile[i].second > diag.zeta_profile[i - 1].second)
            diag.zeta_decreasing = false;
}

inline ScheduleDiagnostics zeta_diagnostic(const SchedulePair& pair,
                                           const std::vector<double>& t_grid, index_t n_count) {
    ScheduleDiagnostics diag;
    zeta_diagnostic(pair, t_grid, n_count, diag);
    return diag;
}

}  // namespace tsfluct
