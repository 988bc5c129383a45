#pragma once

// Closed-loop identification experiment: data generation, prediction, loss,
// drag error, training with restarts and summary reporting.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "hysid/adam.hpp"
#include "hysid/quadrotor.hpp"
#include "hysid/simulate.hpp"

namespace hysid::experiment {

using quad::Excitation;
using quad::kControlDim;
using quad::kStateDim;
using quad::Parameterization;
using quad::PhysParams;
using quad::UncertaintyModel;

struct Profile {
    std::string name = "desk";
    std::size_t train_trajectories = 5;
    std::size_t test_trajectories = 5;
    double horizon = 5.0;
    double period = 0.05;
    std::size_t restarts = 3;
    std::array<std::size_t, 3> iterations{300, 1000, 1000}; // per uncertainty model
    double noise_std = 0.03;
    double reference_step_std = 0.1;
    double excitation_std = 10.0;
    double angle_std = 0.02;  // x(0) spread of η
    double state_std = 0.2;   // x(0) spread of ξ, v, p
    bool reference_all_components = true;
    double tol_abs = 1e-6;
    double tol_rel = 1e-6;
    double fixed_step = 0.0; // > 0: θ-independent steps (see SolverOptions)
    std::size_t max_attempts = 50;

    std::size_t samples() const;
    SampleSchedule schedule() const;
    SolverOptions solver() const;
};

Profile desk_profile();
Profile paper_profile();
Profile profile_by_name(const std::string &name);

nlohmann::json profile_to_json(const Profile &p);
/// Overlays the keys present in `j` onto `base`; unknown keys are rejected.
Profile profile_from_json(const nlohmann::json &j, Profile base);

struct TrajectoryData {
    std::array<double, kStateDim> x0{};
    std::shared_ptr<Excitation> excitation;
    std::vector<std::array<double, 3>> y;              // measured positions
    std::vector<std::array<double, kStateDim>> x_true; // true plant state at t_k
    bool test = false;
    std::uint64_t attempt = 0; // sub-seed used after resampling

    std::array<double, 3> p_true(std::size_t k) const { return {x_true[k][9], x_true[k][10], x_true[k][11]}; }
    std::array<double, 3> v_true(std::size_t k) const { return {x_true[k][6], x_true[k][7], x_true[k][8]}; }
};

struct Dataset {
    Profile profile;
    std::uint64_t seed = 0;
    PhysParams params;
    quad::ControllerSpec controller;
    std::vector<TrajectoryData> train;
    std::vector<TrajectoryData> test;
    std::vector<std::string> log; // resampling notes

    SampleSchedule schedule() const { return profile.schedule(); }
    std::size_t samples() const { return profile.samples(); }
};

/// Draws x(0), r, r_n and noise from counter-based streams keyed by
/// (seed, trajectory, attempt, signal, component) and simulates the true
/// closed loop. A failed simulation is resampled with the next attempt index.
Dataset generate_dataset(const Profile &profile, std::uint64_t seed, const PhysParams &params = {});

void save_dataset(const Dataset &data, const std::string &dir);
Dataset load_dataset(const std::string &dir);

enum class Split { Train, Test };

/// Error raised when a prediction fails; carries the trajectory index.
class TrajectoryError : public Error {
  public:
    TrajectoryError(const std::string &what, std::size_t index)
        : Error(what + " (trajectory " + std::to_string(index) + ")"), index_(index) {}
    std::size_t index() const noexcept { return index_; }

  private:
    std::size_t index_;
};

/// Closed-loop prediction of the positions at every sample time.
std::vector<std::array<double, 3>> predict_outputs(const Parameterization &model, std::span<const double> theta,
                                                   const Dataset &data, Split split, std::size_t index);

enum class Target { Measured, True };

struct LossOptions {
    Split split = Split::Train;
    Target target = Target::Measured;
    std::size_t jobs = 1;
};

/// L = (1/MN) Σᵢ Σₖ ‖ŷᵢ[k] − yᵢ[k]‖².
double loss(const Parameterization &model, std::span<const double> theta, const Dataset &data,
            const LossOptions &opts = {});

struct LossGradient {
    double loss = 0.0;
    std::vector<double> gradient;
};

/// Loss on the measured training data and its gradient through the
/// recorded solves (discrete adjoint), reduced in trajectory order.
LossGradient loss_and_gradient(const Parameterization &model, std::span<const double> theta, const Dataset &data,
                               std::size_t jobs = 1);

/// Prediction loss on the measured training data for any scalar type, for
/// whole-solve differentiation (grad_reverse / grad_forward / grad_fd).
template <class S>
S loss_generic(const Parameterization &model, std::span<const S> theta, const Dataset &data) {
    const auto sched = data.schedule();
    const auto times = sched.times();
    const std::shared_ptr<const Parameterization> borrowed(std::shared_ptr<const void>{}, &model);
    S total = S(0.0);
    for (const auto &tr : data.train) {
        const auto sys = quad::closed_loop<S>(data.params, data.controller, sched, tr.x0, tr.excitation, borrowed);
        const auto traj = adaptive_solve<S>(sys, theta, 0.0, sched.end(), times, data.profile.solver());
        S sse = S(0.0);
        for (std::size_t k = 0; k < times.size(); ++k)
            for (std::size_t c = 0; c < 3; ++c) {
                const S e = traj.states[k][quad::kPos + c] - tr.y[k][c];
                sse = sse + e * e;
            }
        total = total + sse;
    }
    return total / static_cast<double>(data.train.size() * times.size());
}

struct GradientCheck {
    std::vector<std::size_t> coords;
    std::vector<double> adjoint;  // discrete-adjoint gradient at coords
    std::vector<double> fd;       // central differences at coords
    std::vector<double> eps_used; // step of the accepted central difference
    std::vector<bool> smooth;     // false: one-sided slopes never agreed
    /// max |adjoint − fd| / max |fd| over the smooth coordinates.
    double max_rel = 0.0;
    std::size_t non_smooth = 0;
};

/// Compares loss_and_gradient with central differences of `loss` on the
/// measured training data. An empty `coords` checks every coordinate. Where
/// the forward and backward one-sided slopes differ by more than `tol` times
/// the gradient scale (a LeakyReLU kink inside [θ−ε, θ+ε]), ε is divided by
/// ten up to `refinements` times; coordinates that stay non-smooth are
/// reported and left out of max_rel.
GradientCheck gradient_check(const Parameterization &model, std::span<const double> theta, const Dataset &data,
                             double eps = 1e-5, std::vector<std::size_t> coords = {}, std::size_t jobs = 1,
                             double tol = 1e-4, std::size_t refinements = 2);

/// Reported RMSE convention √(L/3): per-coordinate root mean square.
inline double rmse_from_loss(double l) { return std::sqrt(l / 3.0); }

/// Energy-normalized drag discrepancy along the true trajectories of a split.
double drag_relative_error(const Parameterization &model, std::span<const double> theta, const Dataset &data,
                           Split split);

/// Same quantity from raw samples; exposed for property tests.
double drag_relative_error(std::span<const std::array<double, 3>> estimated,
                           std::span<const std::array<double, 3>> truth);

struct Metrics {
    double loss_noisy_train = 0.0;
    double rmse_noisy_train = 0.0;
    double rmse_clean_train = 0.0;
    double rmse_test = 0.0;
    double drag_train = 0.0;
    double drag_test = 0.0;
    std::array<double, 3> inertia_rel{};
    std::optional<std::array<double, 3>> drag_coeff_rel; // Model 1
    std::optional<std::array<double, 3>> wind_rel;       // Models 1, 2
};

Metrics evaluate(const Parameterization &model, std::span<const double> theta, const Dataset &data,
                 std::size_t jobs = 1);

nlohmann::json metrics_to_json(const Metrics &m);
Metrics metrics_from_json(const nlohmann::json &j);

/// Per-segment multipliers of the ADAM step for each uncertainty model.
std::vector<double> step_scales(const Parameterization &model);

struct TrainConfig {
    UncertaintyModel kind = UncertaintyModel::Physical;
    std::size_t restarts = 3;
    std::size_t iterations = 300;
    std::uint64_t seed = 1;
    std::size_t jobs = 1;
    std::string checkpoint_dir; // empty: no files
    std::function<void(std::size_t restart, std::size_t iteration, double loss)> progress;
};

struct RestartResult {
    std::size_t index = 0;
    std::uint64_t seed = 0;
    bool failed = false;
    std::string failure;
    std::vector<double> history; // L(θ_t) for each evaluated iterate
    double best_loss = 0.0;
    std::size_t best_iteration = 0;
    std::vector<double> theta;   // best-loss iterate
    std::optional<Metrics> metrics;
};

struct RunResult {
    UncertaintyModel kind = UncertaintyModel::Physical;
    std::vector<RestartResult> restarts;
};

std::uint64_t restart_seed(std::uint64_t seed, std::size_t restart);

RunResult train(const Dataset &data, const TrainConfig &cfg);

nlohmann::json run_to_json(const RunResult &run);
RunResult run_from_json(const nlohmann::json &j);

struct Triple {
    double min = 0.0, mean = 0.0, max = 0.0;
};

/// Table rows in fixed order, each holding (min, mean, max) over the
/// successful restarts of a run.
struct Table {
    std::vector<std::string> rows;
    std::vector<std::string> columns;                  // "model1", ...
    std::map<std::string, std::vector<Triple>> values; // column → per-row triple
};

Table summarize(const std::vector<RunResult> &runs);
void write_table_csv(const Table &t, const std::string &path);
Table read_table_csv(const std::string &path);

struct DragCurve {
    std::vector<double> v, d_true, d_hat;
};

/// Axis-j drag curve on a velocity grid with η = 0: Model 1 with w = 0,
/// Model 2 as a function of relative air speed, Model 3 at the true wind.
DragCurve drag_curve(const Parameterization &model, std::span<const double> theta, const PhysParams &params,
                     std::size_t axis, double v_max = 2.0, std::size_t points = 81);

/// Writes table3.csv, drag_curves_modelK_axisJ.csv and trajectory_example.csv.
void write_report(const std::vector<RunResult> &runs, const Dataset &data, const std::string &dir);

} // namespace hysid::experiment
