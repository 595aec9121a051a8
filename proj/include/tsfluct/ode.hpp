#pragma once

#include "tsfluct/common.hpp"

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

namespace tsfluct {

// Classical RK4 step. State needs vector-space arithmetic (Vec, Mat, ...).
template <class State, class Rhs>
State rk4_step(const State& s, double t, double dt, Rhs&& f) {
    const State k1 = f(t, s);
    const State k2 = f(t + 0.5 * dt, State(s + 0.5 * dt * k1));
    const State k3 = f(t + 0.5 * dt, State(s + 0.5 * dt * k2));
    const State k4 = f(t + dt, State(s + dt * k3));
    return s + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

// Fixed-step RK4 solution of an autonomous system on [0, length], stored at
// uniform nodes with derivatives for cubic Hermite evaluation in between.
// Interpolation error matches the integrator's O(h^4).
class DensePath {
public:
    DensePath() = default;

    DensePath(const Vec& y0, double length, int steps,
              const std::function<Vec(const Vec&)>& rhs) {
        if (steps < 1) throw Error("DensePath needs at least one step");
        h_ = length / steps;
        length_ = length;
        values_.reserve(static_cast<std::size_t>(steps) + 1);
        derivs_.reserve(static_cast<std::size_t>(steps) + 1);
        Vec y = y0;
        values_.push_back(y);
        derivs_.push_back(rhs(y));
        for (int k = 0; k < steps; ++k) {
            y = rk4_step(y, k * h_, h_, [&](double, const Vec& v) { return rhs(v); });
            if (!y.allFinite()) throw NumericalError("DensePath: state left the finite domain");
            values_.push_back(y);
            derivs_.push_back(rhs(y));
        }
    }

    static DensePath constant(const Vec& y0, double length) {
        DensePath p;
        p.h_ = length > 0.0 ? length : 1.0;
        p.length_ = length;
        p.values_ = {y0, y0};
        p.derivs_ = {Vec::Zero(y0.size()), Vec::Zero(y0.size())};
        return p;
    }

    double length() const { return length_; }

    Vec eval(double t) const {
        if (values_.empty()) throw Error("DensePath is empty");
        if (t <= 0.0) return values_.front();
        if (t >= length_) return values_.back();
        auto k = static_cast<std::size_t>(t / h_);
        if (k + 1 >= values_.size()) k = values_.size() - 2;
        const double th = (t - static_cast<double>(k) * h_) / h_;
        const double t2 = th * th;
        const double t3 = t2 * th;
        const double h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        const double h10 = t3 - 2.0 * t2 + th;
        const double h01 = -2.0 * t3 + 3.0 * t2;
        const double h11 = t3 - t2;
        return h00 * values_[k] + h10 * h_ * derivs_[k] + h01 * values_[k + 1] +
               h11 * h_ * derivs_[k + 1];
    }

private:
    double h_ = 1.0;
    double length_ = 0.0;
    std::vector<Vec> values_;
    std::vector<Vec> derivs_;
};

}  // namespace tsfluct
