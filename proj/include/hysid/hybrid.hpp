#pragma once

// Hybrid system  ẋ = f(x,t,θ)  outside the guard set,  x(t⁺) = h(x(t⁻),t⁻,θ)  on it,
// x(0) = x₀(θ). Every callable is typed on the scalar S so that one model
// definition serves the plain, dual and tape-tracked simulations.

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "hysid/errors.hpp"

namespace hysid {

template <class S>
using RhsFn = std::function<void(std::span<const S> x, double t, std::span<const S> theta, std::span<S> dxdt)>;

template <class S> using GuardFn = std::function<S(std::span<const S> x, double t)>;

/// `occurrence` is the index of the firing time for time-triggered guards and
/// a running count for continuous guards.
template <class S>
using ResetFn = std::function<void(std::span<const S> x_minus, double t, std::size_t occurrence,
                                   std::span<const S> theta, std::span<S> x_plus)>;

template <class S> using InitialStateFn = std::function<std::vector<S>(std::span<const S> theta)>;

enum class Crossing { Either, Rising, Falling };

/// Fires where g(x,t) crosses zero.
template <class S> struct ContinuousGuard {
    GuardFn<S> g;
    Crossing direction = Crossing::Either;
};

/// Fires unconditionally at each listed time.
struct TimeTriggered {
    std::vector<double> times;
};

template <class S> using Guard = std::variant<ContinuousGuard<S>, TimeTriggered>;

template <class S> struct Reset {
    Guard<S> guard;
    ResetFn<S> map;
    std::string name;
};

template <class S> struct HybridSystem {
    std::size_t state_dim = 0;
    RhsFn<S> rhs;
    std::vector<Reset<S>> resets;
    InitialStateFn<S> initial_state;

    void validate() const {
        if (state_dim == 0)
            throw ConfigError("hybrid system state dimension must be positive");
        if (!rhs || !initial_state)
            throw ConfigError("hybrid system needs a right-hand side and an initial-state map");
        for (const auto &r : resets) {
            if (!r.map)
                throw ConfigError("reset '" + r.name + "' has no map");
            if (const auto *tt = std::get_if<TimeTriggered>(&r.guard)) {
                for (std::size_t i = 0; i < tt->times.size(); ++i) {
                    if (!std::isfinite(tt->times[i]))
                        throw ConfigError("reset '" + r.name + "' has a non-finite trigger time");
                    if (i > 0 && !(tt->times[i] > tt->times[i - 1]))
                        throw ConfigError("reset '" + r.name + "' trigger times are not strictly increasing");
                }
            } else if (!std::get<ContinuousGuard<S>>(r.guard).g) {
                throw ConfigError("reset '" + r.name + "' has no guard function");
            }
        }
    }
};

/// Uniform sample grid t_k = start + k·period, k = 0..count-1.
class SampleSchedule {
  public:
    SampleSchedule(double start, double period, std::size_t count);

    /// Grid spanning [start, stop] inclusive; stop - start must be a whole number of periods.
    static SampleSchedule spanning(double start, double stop, double period);

    double start() const noexcept { return start_; }
    double period() const noexcept { return period_; }
    std::size_t size() const noexcept { return count_; }
    double time(std::size_t k) const { return start_ + static_cast<double>(k) * period_; }
    double end() const { return time(count_ - 1); }
    std::vector<double> times() const;

  private:
    double start_;
    double period_;
    std::size_t count_;
};

template <class S>
using PlantRhsFn = std::function<void(std::span<const S> x, std::span<const S> u, double t,
                                      std::span<const S> theta, std::span<S> dxdt)>;

/// Discrete-time control law evaluated at sample index k from the plant state x(t_k).
template <class S>
using ControllerFn = std::function<std::vector<S>(std::size_t k, std::span<const S> x, std::span<const S> u_prev,
                                                  std::span<const S> theta)>;

/// Closed loop of a plant and a zero-order-hold controller. The held control is
/// appended to the plant state with zero derivative and rewritten at each sample time.
template <class S>
HybridSystem<S> assemble_closed_loop(std::size_t plant_dim, std::size_t control_dim, PlantRhsFn<S> plant_rhs,
                                     ControllerFn<S> controller, const SampleSchedule &schedule,
                                     InitialStateFn<S> x0_map, std::vector<double> initial_control = {}) {
    if (plant_dim == 0 || control_dim == 0)
        throw ConfigError("closed loop needs non-empty plant and control segments");
    if (initial_control.empty())
        initial_control.assign(control_dim, 0.0);
    if (initial_control.size() != control_dim)
        throw ConfigError("initial control has " + std::to_string(initial_control.size()) +
                          " entries, expected " + std::to_string(control_dim));

    HybridSystem<S> sys;
    sys.state_dim = plant_dim + control_dim;
    sys.rhs = [plant_dim, control_dim, plant_rhs](std::span<const S> x, double t, std::span<const S> theta,
                                                  std::span<S> dxdt) {
        plant_rhs(x.first(plant_dim), x.subspan(plant_dim, control_dim), t, theta, dxdt.first(plant_dim));
        for (std::size_t i = plant_dim; i < plant_dim + control_dim; ++i)
            dxdt[i] = S(0.0);
    };
    sys.initial_state = [plant_dim, x0_map, initial_control](std::span<const S> theta) {
        std::vector<S> x = x0_map(theta);
        if (x.size() != plant_dim)
            throw ConfigError("initial-state map returned " + std::to_string(x.size()) + " entries, expected " +
                              std::to_string(plant_dim));
        for (double u : initial_control)
            x.push_back(S(u));
        return x;
    };
    Reset<S> update;
    update.name = "controller";
    update.guard = TimeTriggered{schedule.times()};
    update.map = [plant_dim, control_dim, controller](std::span<const S> x_minus, double, std::size_t k,
                                                      std::span<const S> theta, std::span<S> x_plus) {
        std::vector<S> u = controller(k, x_minus.first(plant_dim), x_minus.subspan(plant_dim, control_dim), theta);
        if (u.size() != control_dim)
            throw ConfigError("controller returned " + std::to_string(u.size()) + " outputs, expected " +
                              std::to_string(control_dim));
        for (std::size_t i = 0; i < plant_dim; ++i)
            x_plus[i] = x_minus[i];
        for (std::size_t i = 0; i < control_dim; ++i)
            x_plus[plant_dim + i] = u[i];
    };
    sys.resets.push_back(std::move(update));
    sys.validate();
    return sys;
}

} // namespace hysid
