#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "hysid/errors.hpp"
#include "hysid/hybrid.hpp"
#include "hysid/scalar.hpp"
#include "hysid/tsit5.hpp"

namespace hysid {

/// Default localization tolerance at time t.
inline double default_event_tolerance(double t) { return 1e-10 * std::max(1.0, std::abs(t)); }

/// Root of a scalar function of time bracketed by [lo, hi] (opposite signs or a
/// zero endpoint). Illinois false position with bisection fallback; returns the
/// right edge of a final bracket no wider than tol_t.
double locate_root(const std::function<double(double)> &g, double lo, double hi, double tol_t);

/// Localizes the crossing of g along the dense output of an accepted step.
double locate_event_time(const std::function<double(std::span<const double>, double)> &g,
                         const StepRecord<double> &rec, double tol_t);

/// Same as above restricted to the sub-bracket [lo, hi] of the step.
double locate_event_time(const std::function<double(std::span<const double>, double)> &g,
                         const StepRecord<double> &rec, double lo, double hi, double tol_t);

/// x⁺ = h(x⁻, t, θ), with finiteness checks on both sides.
template <class S>
std::vector<S> apply_reset(const ResetFn<S> &h, std::span<const S> x_minus, double t, std::size_t occurrence,
                           std::span<const S> theta, std::size_t guard_index = 0) {
    if (!all_finite(x_minus))
        throw ResetError("non-finite pre-event state", guard_index, t);
    std::vector<S> x_plus(x_minus.size());
    h(x_minus, t, occurrence, theta, std::span<S>(x_plus));
    if (!all_finite(std::span<const S>(x_plus)))
        throw ResetError("reset produced a non-finite state", guard_index, t);
    return x_plus;
}

/// Threshold on |ġ| below which an event time is not differentiable.
inline constexpr double kTransversalityThreshold = 1e-12;

/// Total derivative ġ = ∂g/∂x·f + ∂g/∂t along the flow, by a central difference
/// through the flow direction (values only).
template <class S>
double guard_rate(const GuardFn<S> &g, std::span<const double> x, std::span<const double> f, double t) {
    const double eps = 1e-7 * std::max(1.0, std::abs(t));
    std::vector<S> fwd(x.size()), bwd(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        fwd[i] = S(x[i] + eps * f[i]);
        bwd[i] = S(x[i] - eps * f[i]);
    }
    return (value_of(g(std::span<const S>(fwd), t + eps)) - value_of(g(std::span<const S>(bwd), t - eps))) /
           (2.0 * eps);
}

/// dt*/dθ = −(∂g/∂x · ∂x/∂θ)/ġ. `dx_dtheta` is row-major n_state × n_theta.
std::vector<double> event_time_sensitivity(std::span<const double> dg_dx, std::span<const double> dx_dtheta,
                                           std::size_t n_theta, double g_rate);

/// Information needed to differentiate a continuous event time.
struct EventTiming {
    bool continuous = false;
    double g_value = 0.0; // g at the located time, values only
    double g_rate = 0.0;  // ġ at the located time
};

/// Crossing a guard at t* and applying its reset. For continuous guards on
/// non-double scalars the moving event time is folded in through
/// δ = −(g(x⁻) − g_value)/ġ (value zero, tangent dt*/dθ):
///   pre  = x⁻ + f⁻·δ,   post = h(pre),   resume = post − f⁺·δ.
/// `resume` is the state integration restarts from at the fixed time t*.
template <class S> struct EventTransition {
    S time;
    std::vector<S> pre;
    std::vector<S> post;
    std::vector<S> resume;
};

template <class S>
EventTransition<S> event_transition(const HybridSystem<S> &sys, std::size_t reset_index, std::size_t occurrence,
                                    double t_event, std::span<const S> x_minus, std::span<const S> theta,
                                    const EventTiming &timing) {
    const Reset<S> &reset = sys.resets[reset_index];
    EventTransition<S> out;
    out.time = S(t_event);
    if (!timing.continuous || std::is_same_v<S, double>) {
        out.pre.assign(x_minus.begin(), x_minus.end());
        out.post = apply_reset(reset.map, x_minus, t_event, occurrence, theta, reset_index);
        out.resume = out.post;
        return out;
    }
    if (std::abs(timing.g_rate) < kTransversalityThreshold)
        throw GrazingEventError("grazing event for reset '" + reset.name + "' at t=" + std::to_string(t_event));
    const auto &g = std::get<ContinuousGuard<S>>(reset.guard).g;
    const S delta = -(g(x_minus, t_event) - timing.g_value) / timing.g_rate;
    const std::size_t n = x_minus.size();
    std::vector<S> f(n);
    sys.rhs(x_minus, t_event, theta, std::span<S>(f));
    out.time = t_event + delta;
    out.pre.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        out.pre[i] = x_minus[i] + f[i] * delta;
    out.post = apply_reset(reset.map, std::span<const S>(out.pre), t_event, occurrence, theta, reset_index);
    sys.rhs(std::span<const S>(out.post), t_event, theta, std::span<S>(f));
    out.resume.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        out.resume[i] = out.post[i] - f[i] * delta;
    return out;
}

} // namespace hysid
