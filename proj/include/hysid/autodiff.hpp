#pragma once

// Gradients of scalar losses with respect to θ.
//
//   grad_reverse   one tape over the whole loss evaluation
//   solve_vjp      discrete adjoint of a recorded double solve: each recorded
//                  step/event is re-run on a small local tape and pulled back
//   grad_forward   dual numbers, blocks of kForwardBlock directions per pass
//   grad_fd        central finite differences
//
// Loss functions are generic callables invoked with std::span<const S> for
// S = double, Var or Dual<kForwardBlock>.

#include <cstddef>
#include <span>
#include <vector>

#include "hysid/dual.hpp"
#include "hysid/errors.hpp"
#include "hysid/hybrid.hpp"
#include "hysid/simulate.hpp"
#include "hysid/tape.hpp"

namespace hysid {

inline constexpr std::size_t kForwardBlock = 16;
using ForwardScalar = Dual<kForwardBlock>;

struct GradientResult {
    double value = 0.0;
    std::vector<double> gradient;
};

template <class F>
GradientResult grad_reverse(F &&loss_fn, std::span<const double> theta,
                            std::size_t budget_bytes = Tape::kDefaultBudgetBytes) {
    Tape tape(budget_bytes);
    ActiveTape scope(tape);
    const std::vector<Var> vars = tape.inputs(theta);
    const Var loss = loss_fn(std::span<const Var>(vars));
    const std::vector<double> adj = tape.gradient(loss);
    GradientResult out;
    out.value = loss.value();
    out.gradient.resize(theta.size());
    for (std::size_t i = 0; i < theta.size(); ++i)
        out.gradient[i] = adj[static_cast<std::size_t>(vars[i].index())];
    return out;
}

struct DirectionalResult {
    double value = 0.0;
    std::vector<double> derivatives; // one per seed direction
};

/// J·d for each seed direction d (each of length θ.size()).
template <class F>
DirectionalResult grad_forward(F &&loss_fn, std::span<const double> theta,
                               const std::vector<std::vector<double>> &directions) {
    for (const auto &d : directions)
        if (d.size() != theta.size())
            throw ConfigError("seed direction length does not match θ");
    DirectionalResult out;
    out.derivatives.resize(directions.size(), 0.0);
    std::vector<ForwardScalar> th(theta.size());
    bool have_value = false;
    for (std::size_t first = 0; first < directions.size() || !have_value; first += kForwardBlock) {
        const std::size_t count = first < directions.size() ? std::min(kForwardBlock, directions.size() - first) : 0;
        for (std::size_t i = 0; i < theta.size(); ++i) {
            th[i] = ForwardScalar(theta[i]);
            for (std::size_t j = 0; j < count; ++j)
                th[i].d[j] = directions[first + j][i];
        }
        const ForwardScalar loss = loss_fn(std::span<const ForwardScalar>(th));
        out.value = loss.v;
        have_value = true;
        for (std::size_t j = 0; j < count; ++j)
            out.derivatives[first + j] = loss.d[j];
        if (count == 0)
            break;
    }
    return out;
}

/// Full gradient through identity seeds.
template <class F> GradientResult grad_forward(F &&loss_fn, std::span<const double> theta) {
    std::vector<std::vector<double>> seeds(theta.size(), std::vector<double>(theta.size(), 0.0));
    for (std::size_t i = 0; i < theta.size(); ++i)
        seeds[i][i] = 1.0;
    auto r = grad_forward(loss_fn, theta, seeds);
    return GradientResult{r.value, std::move(r.derivatives)};
}

/// Central differences (L(θ+εe_i) − L(θ−εe_i)) / 2ε.
template <class F> std::vector<double> grad_fd(F &&loss_fn, std::span<const double> theta, double eps = 1e-5) {
    if (!(eps > 0.0))
        throw ConfigError("finite-difference step must be positive");
    std::vector<double> th(theta.begin(), theta.end());
    std::vector<double> g(theta.size());
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double saved = th[i];
        th[i] = saved + eps;
        const double up = loss_fn(std::span<const double>(th));
        th[i] = saved - eps;
        const double down = loss_fn(std::span<const double>(th));
        th[i] = saved;
        g[i] = (up - down) / (2.0 * eps);
    }
    return g;
}

/// Pulls per-sample state adjoints (dL/dx at each save time of `traj`) back to
/// dL/dθ through the recorded solve. `traj` must come from adaptive_solve on the
/// double twin of `sys` with SolverOptions::record set.
std::vector<double> solve_vjp(const HybridSystem<Var> &sys, std::span<const double> theta,
                              const Trajectory<double> &traj, std::span<const std::vector<double>> sample_adjoints);

} // namespace hysid
