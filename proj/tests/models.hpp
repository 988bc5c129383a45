#pragma once

// Small hybrid systems shared by the unit and acceptance tests.

#include <cmath>
#include <vector>

#include "hysid/errors.hpp"
#include "hysid/hybrid.hpp"
#include "hysid/simulate.hpp"

namespace hysid::testing {

inline constexpr double kGravity = 9.81;

/// State (h, v); θ = (e, h₀). Impact on h falling through 0 maps v⁺ = −e·v⁻.
/// With `apex_guard` an identity reset also fires where v falls through 0.
template <class S> HybridSystem<S> bouncing_ball(bool apex_guard = false) {
    HybridSystem<S> sys;
    sys.state_dim = 2;
    sys.rhs = [](std::span<const S> x, double, std::span<const S>, std::span<S> dx) {
        dx[0] = x[1];
        dx[1] = S(-kGravity);
    };
    sys.initial_state = [](std::span<const S> th) { return std::vector<S>{th[1], S(0.0)}; };
    sys.resets.push_back({ContinuousGuard<S>{[](std::span<const S> x, double) { return x[0]; }, Crossing::Falling},
                          [](std::span<const S> xm, double, std::size_t, std::span<const S> th, std::span<S> xp) {
                              xp[0] = xm[0];
                              xp[1] = -(th[0] * xm[1]);
                          },
                          "impact"});
    if (apex_guard)
        sys.resets.push_back(
            {ContinuousGuard<S>{[](std::span<const S> x, double) { return x[1]; }, Crossing::Falling},
             [](std::span<const S> xm, double, std::size_t, std::span<const S>, std::span<S> xp) {
                 xp[0] = xm[0];
                 xp[1] = xm[1];
             },
             "apex"});
    return sys;
}

/// Closed-form impact times for h₀ dropped from rest with restitution e.
inline std::vector<double> bounce_times(double h0, double e, std::size_t count) {
    std::vector<double> out;
    const double t1 = std::sqrt(2.0 * h0 / kGravity);
    double t = t1;
    double v = kGravity * t1;
    for (std::size_t i = 0; i < count; ++i) {
        out.push_back(t);
        v *= e;
        t += 2.0 * v / kGravity;
    }
    return out;
}

template <class S> HybridSystem<S> growth() {
    HybridSystem<S> sys;
    sys.state_dim = 1;
    sys.rhs = [](std::span<const S> x, double, std::span<const S> th, std::span<S> dx) { dx[0] = th[0] * x[0]; };
    sys.initial_state = [](std::span<const S>) { return std::vector<S>{S(1.0)}; };
    return sys;
}

// L = x(1)² for x' = θx, x(0) = 1.
template <class S> S growth_loss(std::span<const S> th) {
    SolverOptions opts;
    opts.tol = {1e-10, 1e-10};
    const auto traj = adaptive_solve<S>(growth<S>(), th, 0.0, 1.0, std::vector<double>{1.0}, opts);
    return traj.states[0][0] * traj.states[0][0];
}

/// Height at the first apex after the first bounce; θ = (e, h₀).
template <class S> S apex_height(std::span<const S> th) {
    SolverOptions opts;
    opts.tol = {1e-10, 1e-10};
    const auto traj = adaptive_solve<S>(bouncing_ball<S>(true), th, 0.0, 1.2, std::vector<double>{}, opts);
    for (const auto &ev : traj.event_log)
        if (ev.reset_index == 1)
            return ev.pre[0];
    throw Error("no apex");
}

} // namespace hysid::testing
