#include "hysid/mlp.hpp"

#include <cmath>

#include "hysid/random.hpp"

namespace hysid {

Mlp::Mlp(std::vector<std::size_t> layer_dims) : dims_(std::move(layer_dims)) {
    if (dims_.size() < 2)
        throw ConfigError("a network needs at least an input and an output layer");
    for (std::size_t d : dims_)
        if (d == 0)
            throw ConfigError("zero-width network layer");
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l)
        count_ += dims_[l] * dims_[l + 1] + dims_[l + 1];
}

void Mlp::extend_layout(ParameterLayout &layout, const std::string &prefix) const {
    for (std::size_t l = 0; l < layers(); ++l) {
        layout.add(prefix + ".layer" + std::to_string(l) + ".weight", dims_[l] * dims_[l + 1]);
        layout.add(prefix + ".layer" + std::to_string(l) + ".bias", dims_[l + 1]);
    }
}

std::vector<double> mlp_init(const Mlp &net, std::uint64_t seed) {
    std::vector<double> theta(net.parameter_count(), 0.0);
    std::size_t offset = 0;
    for (std::size_t l = 0; l < net.layers(); ++l) {
        const std::size_t n_in = net.dims()[l];
        const std::size_t n_out = net.dims()[l + 1];
        const double limit = std::sqrt(6.0 / static_cast<double>(n_in + n_out));
        auto rng = CounterRng::keyed({seed, 0x6e6e696eULL, l});
        for (std::size_t i = 0; i < n_in * n_out; ++i)
            theta[offset + i] = rng.uniform(-limit, limit);
        offset += n_in * n_out + n_out;
    }
    return theta;
}

} // namespace hysid
