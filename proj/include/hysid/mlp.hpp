#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "hysid/errors.hpp"
#include "hysid/parameters.hpp"
#include "hysid/scalar.hpp"
#include "hysid/tape.hpp"

namespace hysid {

/// Dense feed-forward network: affine + LeakyReLU on hidden layers, affine output.
/// Parameters live in a flat θ segment; per layer the weight matrix (out × in,
/// row-major) is followed by the bias.
class Mlp {
  public:
    explicit Mlp(std::vector<std::size_t> layer_dims);

    const std::vector<std::size_t> &dims() const noexcept { return dims_; }
    std::size_t input_dim() const noexcept { return dims_.front(); }
    std::size_t output_dim() const noexcept { return dims_.back(); }
    std::size_t layers() const noexcept { return dims_.size() - 1; }
    std::size_t parameter_count() const noexcept { return count_; }

    /// Appends "<prefix>.layerL.weight" / "<prefix>.layerL.bias" segments.
    void extend_layout(ParameterLayout &layout, const std::string &prefix) const;

    template <class S>
    void forward(std::span<const S> theta, std::span<const S> input, std::span<S> output) const {
        if (theta.size() != count_)
            throw ConfigError("network expects " + std::to_string(count_) + " parameters, got " +
                              std::to_string(theta.size()));
        if (input.size() != input_dim() || output.size() != output_dim())
            throw ConfigError("network input/output dimension mismatch");
        std::vector<S> a(input.begin(), input.end());
        std::vector<S> z;
        std::size_t offset = 0;
        for (std::size_t layer = 0; layer < layers(); ++layer) {
            const std::size_t n_in = dims_[layer];
            const std::size_t n_out = dims_[layer + 1];
            const S *w = theta.data() + offset;
            const S *b = w + n_in * n_out;
            z.resize(n_out);
            const bool hidden = layer + 1 < layers();
            for (std::size_t o = 0; o < n_out; ++o) {
                const S *row = w + o * n_in;
                S acc;
                if constexpr (std::is_same_v<S, Var>) {
                    acc = fused_affine(b[o], std::span<const Var>(row, n_in), std::span<const Var>(a));
                } else {
                    acc = b[o];
                    for (std::size_t i = 0; i < n_in; ++i)
                        acc = acc + row[i] * a[i];
                }
                z[o] = hidden ? leaky_relu(acc) : acc;
            }
            offset += n_in * n_out + n_out;
            a.swap(z);
        }
        for (std::size_t o = 0; o < output.size(); ++o)
            output[o] = a[o];
    }

    template <class S> std::vector<S> forward(std::span<const S> theta, std::span<const S> input) const {
        std::vector<S> out(output_dim());
        forward(theta, input, std::span<S>(out));
        return out;
    }

  private:
    std::vector<std::size_t> dims_;
    std::size_t count_ = 0;
};

/// Glorot-uniform weights, zero biases; deterministic in seed.
std::vector<double> mlp_init(const Mlp &net, std::uint64_t seed);

} // namespace hysid
