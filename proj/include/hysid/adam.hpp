#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "hysid/parameters.hpp"

namespace hysid {

/// Bias-corrected ADAM with small moment decay rates for tiny training sets.
struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    std::uint64_t iteration = 0;
    double beta1 = 0.80;
    double beta2 = 0.92;
    double eps = 1e-8;

    AdamState() = default;
    explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

/// One in-place update of θ. A non-finite gradient throws OptimizerError naming
/// the iteration and, when a layout is given, the offending segment. A
/// non-empty `lr_scale` multiplies the step of each coordinate.
void adam_step(AdamState &state, std::span<double> theta, std::span<const double> grad, double lr,
               const ParameterLayout *layout = nullptr, std::span<const double> lr_scale = {});

/// Piecewise-constant decreasing learning rate:
/// 0.1 on [0,100), 0.01 on [100,400), 0.001 on [400,800), 0.0001 afterwards.
double lr_schedule(std::size_t iteration);

/// θ with its layout and optimizer state, plus free-form metadata.
struct Checkpoint {
    ParameterVector theta;
    AdamState adam;
    nlohmann::json meta = nlohmann::json::object();
};

nlohmann::json layout_to_json(const ParameterLayout &layout);
ParameterLayout layout_from_json(const nlohmann::json &j);

nlohmann::json checkpoint_to_json(const Checkpoint &c);
Checkpoint checkpoint_from_json(const nlohmann::json &j);

void save_checkpoint(const std::string &path, const Checkpoint &c);
Checkpoint load_checkpoint(const std::string &path);

} // namespace hysid
