#pragma once

// Scalar abstraction shared by every numeric kernel. A kernel written against
// `template <class S>` runs on plain doubles, forward-mode duals and tape
// variables; branching always happens on `value_of(x)`.

#include <cmath>
#include <span>
#include <type_traits>
#include <vector>

namespace hysid {

inline double value_of(double x) noexcept { return x; }

template <class S> std::vector<double> values_of(std::span<const S> xs) {
    std::vector<double> out(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i)
        out[i] = value_of(xs[i]);
    return out;
}

template <class S> std::vector<S> lift(std::span<const double> xs) {
    return std::vector<S>(xs.begin(), xs.end());
}

template <class S> bool all_finite(std::span<const S> xs) {
    for (const auto &x : xs)
        if (!std::isfinite(value_of(x)))
            return false;
    return true;
}

/// Negative-side slope of the hidden activation.
inline constexpr double kLeakySlope = 0.01;

template <class S> S leaky_relu(const S &x) {
    if (value_of(x) > 0.0)
        return x;
    return kLeakySlope * x;
}

} // namespace hysid
