#pragma once

// Adaptive Tsit5 integration of a HybridSystem with exact stepping onto stop
// times (saves and time-triggered guards) and root-located continuous events.
// Step-size decisions only ever look at values, so running the solver on dual
// or tape scalars reproduces the double-precision run exactly and
// differentiates the discretization that run chose.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "hysid/errors.hpp"
#include "hysid/events.hpp"
#include "hysid/hybrid.hpp"
#include "hysid/scalar.hpp"
#include "hysid/tsit5.hpp"

namespace hysid {

struct SolverOptions {
    Tolerances tol{};
    /// Smallest admissible step, relative to max(1, |t|).
    double dt_min = 1e-12;
    double dt_max = std::numeric_limits<double>::infinity();
    std::size_t max_steps = 1'000'000;
    double safety = 0.9;
    double growth_min = 0.2;
    double growth_max = 5.0;
    /// Event localization tolerance relative to max(1, |t|).
    double event_tol = 1e-10;
    /// Record the accepted-step/event sequence (double solves only).
    bool record = false;
    /// When positive, error control is off: each interval between stop times
    /// is split into equal steps no longer than this, independent of θ.
    double fixed_step = 0.0;
};

template <class S> struct EventRecord {
    S time;
    std::size_t reset_index = 0;
    std::size_t occurrence = 0;
    std::vector<S> pre;
    std::vector<S> post;
};

struct SolveStats {
    std::size_t accepted = 0;
    std::size_t rejected = 0;
    std::size_t rhs_evals = 0;
    std::size_t events = 0;
};

/// Replayable record of what a double solve did, consumed by the discrete adjoint.
struct StepSegment {
    double t;
    double dt;
    std::vector<double> x_begin;
};
struct EventSegment {
    std::size_t reset_index;
    std::size_t occurrence;
    double t;
    EventTiming timing;
    std::vector<double> x_minus;
};
struct SaveSegment {
    std::size_t index;
};
using SolveSegment = std::variant<StepSegment, EventSegment, SaveSegment>;

template <class S> struct Trajectory {
    std::vector<double> sample_times;
    std::vector<std::vector<S>> states;
    std::vector<EventRecord<S>> event_log;
    SolveStats stats;
    std::vector<SolveSegment> segments;
};

namespace detail {

inline double rms_scaled(std::span<const double> v, std::span<const double> x, const Tolerances &tol) {
    double acc = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double s = v[i] / (tol.abs + tol.rel * std::abs(x[i]));
        acc += s * s;
    }
    return std::sqrt(acc / static_cast<double>(v.size()));
}

/// Hairer-Wanner automatic starting step from the field magnitude (values only).
template <class S>
double initial_step(const RhsFn<S> &rhs, std::span<const double> x, std::span<const double> f0, double t,
                    std::span<const S> theta_const, const Tolerances &tol, std::size_t &evals) {
    const double d0 = rms_scaled(x, x, tol);
    const double d1 = rms_scaled(f0, x, tol);
    double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    std::vector<S> x1(x.size()), f1(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        x1[i] = S(x[i] + h0 * f0[i]);
    rhs(std::span<const S>(x1), t + h0, theta_const, std::span<S>(f1));
    ++evals;
    std::vector<double> diff(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        diff[i] = value_of(f1[i]) - f0[i];
    const double d2 = rms_scaled(diff, x, tol) / h0;
    const double dmax = std::max(d1, d2);
    const double h1 = dmax <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / dmax, 1.0 / 5.0);
    const double h = std::min(100.0 * h0, h1);
    return std::isfinite(h) && h > 0.0 ? h : 1e-6;
}

template <class S> StepRecord<double> shadow_of(const StepRecord<S> &rec) {
    if constexpr (std::is_same_v<S, double>) {
        return rec;
    } else {
        StepRecord<double> out;
        out.t = rec.t;
        out.dt = rec.dt;
        for (std::size_t j = 0; j < 7; ++j)
            out.k[j] = values_of(std::span<const S>(rec.k[j]));
        out.x_begin = values_of(std::span<const S>(rec.x_begin));
        out.x_end = values_of(std::span<const S>(rec.x_end));
        out.error_norm = rec.error_norm;
        return out;
    }
}

inline bool crosses(double ga, double gb, Crossing dir) {
    const bool rising = ga < 0.0 && gb >= 0.0;
    const bool falling = ga > 0.0 && gb <= 0.0;
    switch (dir) {
    case Crossing::Rising: return rising;
    case Crossing::Falling: return falling;
    case Crossing::Either: return rising || falling;
    }
    return false;
}

} // namespace detail

/// Integrates `sys` over [t0, t_end] and stores the state at every save time.
/// Resets are applied atomically at their stop times; a stored sample at a stop
/// time is the post-reset state.
template <class S>
Trajectory<S> adaptive_solve(const HybridSystem<S> &sys, std::span<const S> theta, double t0, double t_end,
                             std::span<const double> save_times, const SolverOptions &opts = {}) {
    sys.validate();
    if (!(opts.tol.abs > 0.0) || !(opts.tol.rel > 0.0))
        throw ConfigError("solver tolerances must be positive");
    if (!(opts.fixed_step >= 0.0) || !std::isfinite(opts.fixed_step))
        throw ConfigError("fixed step must be finite and non-negative");
    if (!(t_end >= t0))
        throw ConfigError("solve span is reversed");
    for (std::size_t i = 0; i < save_times.size(); ++i) {
        if (save_times[i] < t0 || save_times[i] > t_end)
            throw ConfigError("save time outside the solve span");
        if (i > 0 && !(save_times[i] > save_times[i - 1]))
            throw ConfigError("save times are not strictly increasing");
    }
    constexpr bool kIsDouble = std::is_same_v<S, double>;
    const bool record = kIsDouble && opts.record;
    const std::size_t n = sys.state_dim;

    // Stop times: saves, time-triggered resets inside the span, and t_end.
    std::vector<double> stops(save_times.begin(), save_times.end());
    std::vector<std::size_t> continuous;
    for (std::size_t r = 0; r < sys.resets.size(); ++r) {
        if (const auto *tt = std::get_if<TimeTriggered>(&sys.resets[r].guard)) {
            for (double ts : tt->times)
                if (ts >= t0 && ts <= t_end)
                    stops.push_back(ts);
        } else {
            continuous.push_back(r);
        }
    }
    stops.push_back(t_end);
    std::sort(stops.begin(), stops.end());
    stops.erase(std::unique(stops.begin(), stops.end()), stops.end());

    Trajectory<S> traj;
    traj.sample_times.assign(save_times.begin(), save_times.end());
    traj.states.reserve(save_times.size());

    std::vector<S> theta_const;
    if constexpr (kIsDouble) {
        theta_const.assign(theta.begin(), theta.end());
    } else {
        for (const auto &v : theta)
            theta_const.push_back(S(value_of(v)));
    }

    std::vector<S> x = sys.initial_state(theta);
    if (x.size() != n)
        throw ConfigError("initial state has " + std::to_string(x.size()) + " entries, expected " +
                          std::to_string(n));
    if (!all_finite(std::span<const S>(x)))
        throw IntegrationError("non-finite initial state", t0, 0.0);

    double t = t0;
    std::size_t next_save = 0;
    std::size_t next_stop = 0;
    std::vector<std::size_t> trigger_cursor(sys.resets.size(), 0);
    std::vector<std::size_t> fire_count(sys.resets.size(), 0);
    std::vector<double> last_fire(sys.resets.size(), -std::numeric_limits<double>::infinity());

    auto guard_value = [&](std::size_t r, std::span<const double> xv, double tau) -> double {
        const auto &g = std::get<ContinuousGuard<S>>(sys.resets[r].guard).g;
        if constexpr (kIsDouble) {
            return g(xv, tau);
        } else {
            const std::vector<S> lifted(xv.begin(), xv.end());
            return value_of(g(std::span<const S>(lifted), tau));
        }
    };

    auto apply_transition = [&](std::size_t r, std::size_t occurrence, const EventTiming &timing) {
        if (record)
            traj.segments.push_back(EventSegment{r, occurrence, t, timing, values_of(std::span<const S>(x))});
        auto tr = event_transition(sys, r, occurrence, t, std::span<const S>(x), theta, timing);
        traj.event_log.push_back(EventRecord<S>{tr.time, r, occurrence, std::move(tr.pre), std::move(tr.post)});
        x = std::move(tr.resume);
        ++traj.stats.events;
        last_fire[r] = t;
    };

    // Fires time-triggered resets scheduled at exactly `t` (declaration order), then saves.
    auto process_stop = [&]() -> bool {
        bool fired = false;
        for (std::size_t r = 0; r < sys.resets.size(); ++r) {
            const auto *tt = std::get_if<TimeTriggered>(&sys.resets[r].guard);
            if (tt == nullptr)
                continue;
            auto &cur = trigger_cursor[r];
            while (cur < tt->times.size() && tt->times[cur] < t)
                ++cur;
            if (cur < tt->times.size() && tt->times[cur] == t) {
                apply_transition(r, cur, EventTiming{});
                ++cur;
                fired = true;
            }
        }
        while (next_save < save_times.size() && save_times[next_save] == t) {
            if (record)
                traj.segments.push_back(SaveSegment{next_save});
            traj.states.push_back(x);
            ++next_save;
        }
        while (next_stop < stops.size() && stops[next_stop] <= t)
            ++next_stop;
        return fired;
    };

    process_stop();

    StepRecord<S> rec;
    bool fresh = true;
    bool fsal = false;
    bool last_rejected = false;
    double dt = 0.0;
    double err_prev = 1e-4;
    std::vector<double> g_start(sys.resets.size(), 0.0);
    auto refresh_guards = [&]() {
        if (continuous.empty())
            return;
        const auto xv = values_of(std::span<const S>(x));
        for (std::size_t r : continuous)
            g_start[r] = guard_value(r, xv, t);
    };
    refresh_guards();

    std::size_t steps = 0;
    while (t < t_end) {
        if (++steps > opts.max_steps)
            throw BudgetError("step budget of " + std::to_string(opts.max_steps) + " exhausted at t=" +
                              std::to_string(t));
        const double stop = stops[next_stop];
        rec.x_begin = x;
        if (!fsal) {
            rec.k[0].resize(n);
            sys.rhs(std::span<const S>(x), t, theta, std::span<S>(rec.k[0]));
            ++traj.stats.rhs_evals;
            if (!all_finite(std::span<const S>(rec.k[0])))
                throw IntegrationError("non-finite derivative", t, dt);
            fsal = true;
        }
        if (fresh && opts.fixed_step > 0.0) {
            fresh = false;
        } else if (fresh) {
            const auto xv = values_of(std::span<const S>(x));
            const auto fv = values_of(std::span<const S>(rec.k[0]));
            dt = detail::initial_step(sys.rhs, xv, fv, t, std::span<const S>(theta_const), opts.tol,
                                      traj.stats.rhs_evals);
            fresh = false;
            last_rejected = false;
            err_prev = 1e-4;
        }
        dt = std::min(dt, opts.dt_max);
        const double remaining = stop - t;
        if (opts.fixed_step > 0.0)
            dt = remaining / std::ceil(remaining / opts.fixed_step - 1e-9);
        const bool truncated = dt >= remaining;
        const double dt_try = truncated ? remaining : dt;

        bool failed = false;
        try {
            step_tsit5(sys.rhs, theta, t, dt_try, rec, true, true, opts.tol);
        } catch (const IntegrationError &) {
            failed = true;
        }
        traj.stats.rhs_evals += 6;
        if (failed && opts.fixed_step > 0.0)
            throw IntegrationError("non-finite fixed step", t, dt_try);
        const double err = failed ? std::numeric_limits<double>::infinity()
                                  : (opts.fixed_step > 0.0 ? 0.0 : rec.error_norm);
        if (!(err <= 1.0)) {
            ++traj.stats.rejected;
            const double shrink =
                failed ? opts.growth_min
                       : std::clamp(opts.safety * std::pow(err, -1.0 / 5.0), opts.growth_min, 1.0);
            dt = dt_try * shrink;
            last_rejected = true;
            if (dt < opts.dt_min * std::max(1.0, std::abs(t)))
                throw IntegrationError(failed ? "step size underflow after non-finite trial step"
                                              : "step size underflow",
                                       t, dt);
            continue;
        }

        ++traj.stats.accepted;
        double factor = opts.safety * std::pow(std::max(err, 1e-10), -0.14) * std::pow(err_prev, 0.08);
        factor = std::clamp(factor, opts.growth_min, opts.growth_max);
        if (last_rejected)
            factor = std::min(factor, 1.0);
        double dt_next = dt_try * factor;
        if (truncated && factor >= 1.0)
            dt_next = std::max(dt_next, dt);
        err_prev = std::max(err, 1e-4);
        last_rejected = false;

        // Continuous guards: earliest crossing inside the accepted step.
        std::optional<double> t_event;
        std::vector<std::pair<std::size_t, double>> roots;
        if (!continuous.empty()) {
            const StepRecord<double> shadow = detail::shadow_of(rec);
            constexpr std::array<double, 5> probes = {0.0, 0.25, 0.5, 0.75, 1.0};
            for (std::size_t r : continuous) {
                const auto &guard = std::get<ContinuousGuard<S>>(sys.resets[r].guard);
                auto g_at = [&](std::span<const double> xv, double tau) { return guard_value(r, xv, tau); };
                double ga = g_start[r];
                double ta = t;
                for (std::size_t p = 1; p < probes.size(); ++p) {
                    const double tb = p + 1 == probes.size() ? t + dt_try : t + probes[p] * dt_try;
                    const double gb = g_at(dense_eval(shadow, tb), tb);
                    if (!std::isfinite(gb))
                        throw EventError("non-finite guard value for reset '" + sys.resets[r].name + "'");
                    if (detail::crosses(ga, gb, guard.direction)) {
                        const double tol_t = opts.event_tol * std::max(1.0, std::abs(tb));
                        const double root = locate_event_time(g_at, shadow, ta, tb, tol_t);
                        if (root > last_fire[r] + 16.0 * tol_t) {
                            roots.emplace_back(r, root);
                            break;
                        }
                    }
                    ga = gb;
                    ta = tb;
                }
            }
            for (const auto &[r, root] : roots)
                if (!t_event || root < *t_event)
                    t_event = root;
        }

        if (t_event) {
            double t_star = *t_event;
            if (t_star >= t + dt_try) {
                if (record)
                    traj.segments.push_back(StepSegment{t, dt_try, values_of(std::span<const S>(x))});
                x = rec.x_end;
                t_star = truncated ? stop : t + dt_try;
            } else if (t_star > t) {
                // Re-integrate exactly up to the event so the reset sees an integrated state.
                rec.x_begin = x;
                step_tsit5(sys.rhs, theta, t, t_star - t, rec, true, true, opts.tol);
                traj.stats.rhs_evals += 6;
                if (record)
                    traj.segments.push_back(StepSegment{t, t_star - t, values_of(std::span<const S>(x))});
                x = rec.x_end;
            }
            t = t_star;
            const double tol_t = opts.event_tol * std::max(1.0, std::abs(t));
            for (const auto &[r, root] : roots) {
                if (root > *t_event + tol_t)
                    continue;
                const auto &guard = std::get<ContinuousGuard<S>>(sys.resets[r].guard);
                EventTiming timing;
                timing.continuous = true;
                const auto xv = values_of(std::span<const S>(x));
                timing.g_value = guard_value(r, xv, t);
                // The recorded double solve stores ġ for the adjoint replay.
                if (!kIsDouble || record) {
                    std::vector<S> f(n);
                    sys.rhs(std::span<const S>(x), t, std::span<const S>(theta_const), std::span<S>(f));
                    timing.g_rate = guard_rate<S>(guard.g, xv, values_of(std::span<const S>(f)), t);
                }
                apply_transition(r, fire_count[r]++, timing);
            }
            if (t == stop)
                process_stop();
            fresh = true;
            fsal = false;
            refresh_guards();
            continue;
        }

        if (record)
            traj.segments.push_back(StepSegment{t, dt_try, values_of(std::span<const S>(x))});
        x = rec.x_end;
        std::swap(rec.k[0], rec.k[6]);
        fsal = true;
        const double t_prev = t;
        t = truncated ? stop : t + dt_try;
        if (t == t_prev)
            throw IntegrationError("step size underflow", t, dt_try);
        dt = dt_next;
        if (!continuous.empty()) {
            for (std::size_t r : continuous)
                g_start[r] = guard_value(r, values_of(std::span<const S>(x)), t);
        }
        if (t == stop && process_stop()) {
            fresh = true;
            fsal = false;
            refresh_guards();
        }
    }
    return traj;
}

} // namespace hysid
