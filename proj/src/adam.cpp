#include "hysid/adam.hpp"

#include <cmath>
#include <fstream>

#include "hysid/errors.hpp"

namespace hysid {

void adam_step(AdamState &state, std::span<double> theta, std::span<const double> grad, double lr,
               const ParameterLayout *layout, std::span<const double> lr_scale) {
    if (theta.size() != grad.size() || state.m.size() != theta.size() || state.v.size() != theta.size())
        throw ConfigError("ADAM state, θ and gradient lengths differ");
    if (!lr_scale.empty() && lr_scale.size() != theta.size())
        throw ConfigError("step scale length differs from θ");
    if (!(lr > 0.0))
        throw ConfigError("learning rate must be positive");
    for (std::size_t i = 0; i < grad.size(); ++i) {
        if (std::isfinite(grad[i]))
            continue;
        std::string where = "index " + std::to_string(i);
        if (layout != nullptr)
            for (const auto &s : layout->segments())
                if (i >= s.offset && i < s.offset + s.size)
                    where = "segment '" + s.name + "' entry " + std::to_string(i - s.offset);
        throw OptimizerError("non-finite gradient at iteration " + std::to_string(state.iteration) + ", " + where);
    }
    ++state.iteration;
    const double t = static_cast<double>(state.iteration);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t i = 0; i < theta.size(); ++i) {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grad[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
        const double m_hat = state.m[i] / c1;
        const double v_hat = state.v[i] / c2;
        const double step = lr_scale.empty() ? lr : lr * lr_scale[i];
        theta[i] -= step * m_hat / (std::sqrt(v_hat) + state.eps);
    }
}

double lr_schedule(std::size_t iteration) {
    if (iteration < 100)
        return 0.1;
    if (iteration < 400)
        return 0.01;
    if (iteration < 800)
        return 0.001;
    return 0.0001;
}

nlohmann::json layout_to_json(const ParameterLayout &layout) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto &s : layout.segments())
        out.push_back({{"name", s.name}, {"offset", s.offset}, {"size", s.size}});
    return out;
}

ParameterLayout layout_from_json(const nlohmann::json &j) {
    ParameterLayout layout;
    for (const auto &s : j) {
        if (s.at("offset").get<std::size_t>() != layout.size())
            throw ConfigError("checkpoint layout segments are not contiguous");
        layout.add(s.at("name").get<std::string>(), s.at("size").get<std::size_t>());
    }
    layout.validate();
    return layout;
}

nlohmann::json checkpoint_to_json(const Checkpoint &c) {
    nlohmann::json j;
    j["layout"] = layout_to_json(c.theta.layout);
    j["theta"] = c.theta.values;
    j["adam"] = {{"m", c.adam.m},         {"v", c.adam.v},         {"iteration", c.adam.iteration},
                 {"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}};
    j["meta"] = c.meta;
    return j;
}

Checkpoint checkpoint_from_json(const nlohmann::json &j) {
    Checkpoint c;
    c.theta.layout = layout_from_json(j.at("layout"));
    c.theta.values = j.at("theta").get<std::vector<double>>();
    if (c.theta.values.size() != c.theta.layout.size())
        throw ConfigError("checkpoint θ length does not match its layout");
    const auto &a = j.at("adam");
    c.adam.m = a.at("m").get<std::vector<double>>();
    c.adam.v = a.at("v").get<std::vector<double>>();
    c.adam.iteration = a.at("iteration").get<std::uint64_t>();
    c.adam.beta1 = a.at("beta1").get<double>();
    c.adam.beta2 = a.at("beta2").get<double>();
    c.adam.eps = a.at("eps").get<double>();
    if (j.contains("meta"))
        c.meta = j.at("meta");
    return c;
}

void save_checkpoint(const std::string &path, const Checkpoint &c) {
    std::ofstream out(path);
    if (!out)
        throw Error("cannot write checkpoint " + path);
    out << checkpoint_to_json(c).dump(1) << '\n';
}

Checkpoint load_checkpoint(const std::string &path) {
    std::ifstream in(path);
    if (!in)
        throw Error("cannot read checkpoint " + path);
    return checkpoint_from_json(nlohmann::json::parse(in));
}

} // namespace hysid
