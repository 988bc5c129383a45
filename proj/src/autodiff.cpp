#include "hysid/autodiff.hpp"

#include <algorithm>
#include <variant>

#include "hysid/events.hpp"
#include "hysid/tsit5.hpp"

namespace hysid {

namespace {

/// Seeds outputs with `lambda`, sweeps, and splits the adjoint into state and θ parts.
void pull_back(Tape &tape, std::span<const Var> outputs, std::span<const double> lambda, std::span<const Var> xs,
               std::span<const Var> th, std::vector<double> &lambda_out, std::span<double> theta_bar,
               std::vector<double> &adj) {
    adj.assign(tape.size(), 0.0);
    for (std::size_t i = 0; i < outputs.size(); ++i)
        if (!outputs[i].is_constant())
            adj[static_cast<std::size_t>(outputs[i].index())] += lambda[i];
    tape.backward(adj);
    lambda_out.resize(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i)
        lambda_out[i] = adj[static_cast<std::size_t>(xs[i].index())];
    for (std::size_t j = 0; j < th.size(); ++j)
        theta_bar[j] += adj[static_cast<std::size_t>(th[j].index())];
}

} // namespace

std::vector<double> solve_vjp(const HybridSystem<Var> &sys, std::span<const double> theta,
                              const Trajectory<double> &traj, std::span<const std::vector<double>> sample_adjoints) {
    if (sample_adjoints.size() != traj.states.size())
        throw ConfigError("one adjoint per saved sample is required");
    if (traj.segments.empty())
        throw ConfigError("trajectory was not recorded; enable SolverOptions::record");
    const std::size_t n = sys.state_dim;
    for (const auto &a : sample_adjoints)
        if (a.size() != n)
            throw ConfigError("sample adjoint has wrong dimension");

    thread_local Tape tape;
    ActiveTape scope(tape);
    std::vector<double> lambda(n, 0.0), next(n), adj;
    std::vector<double> theta_bar(theta.size(), 0.0);
    StepRecord<Var> rec;
    // θ is registered once; each segment is recorded after it and rewound.
    tape.clear();
    const std::vector<Var> th = tape.inputs(theta);
    const Tape::Mark base = tape.mark();
    auto is_zero = [](const std::vector<double> &v) {
        return std::all_of(v.begin(), v.end(), [](double a) { return a == 0.0; });
    };

    for (auto it = traj.segments.rbegin(); it != traj.segments.rend(); ++it) {
        if (const auto *save = std::get_if<SaveSegment>(&*it)) {
            const auto &a = sample_adjoints[save->index];
            for (std::size_t i = 0; i < n; ++i)
                lambda[i] += a[i];
            continue;
        }
        if (is_zero(lambda))
            continue;
        tape.rewind(base);
        if (const auto *step = std::get_if<StepSegment>(&*it)) {
            const std::vector<Var> xs = tape.inputs(step->x_begin);
            rec.x_begin = xs;
            step_tsit5(sys.rhs, std::span<const Var>(th), step->t, step->dt, rec, false, false);
            pull_back(tape, rec.x_end, lambda, xs, th, next, theta_bar, adj);
        } else {
            const auto &ev = std::get<EventSegment>(*it);
            const std::vector<Var> xs = tape.inputs(ev.x_minus);
            const auto tr = event_transition(sys, ev.reset_index, ev.occurrence, ev.t, std::span<const Var>(xs),
                                             std::span<const Var>(th), ev.timing);
            pull_back(tape, tr.resume, lambda, xs, th, next, theta_bar, adj);
        }
        lambda.swap(next);
    }

    if (!is_zero(lambda)) {
        tape.rewind(base);
        const std::vector<Var> x0 = sys.initial_state(std::span<const Var>(th));
        adj.assign(tape.size(), 0.0);
        for (std::size_t i = 0; i < n; ++i)
            if (!x0[i].is_constant())
                adj[static_cast<std::size_t>(x0[i].index())] += lambda[i];
        tape.backward(adj);
        for (std::size_t j = 0; j < th.size(); ++j)
            theta_bar[j] += adj[static_cast<std::size_t>(th[j].index())];
    }
    tape.clear();
    return theta_bar;
}

} // namespace hysid
