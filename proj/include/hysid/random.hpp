#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

namespace hysid {

/// SplitMix64 finalizer.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Counter-based random stream: draw i of stream `key` is a pure function of
/// (key, i), so independent signals can be keyed by (seed, trajectory, signal,
/// component) and regenerated in any order.
class CounterRng {
  public:
    explicit CounterRng(std::uint64_t key) : key_(mix64(key)) {}

    static CounterRng keyed(std::initializer_list<std::uint64_t> parts) {
        std::uint64_t k = 0x6a09e667f3bcc909ULL;
        for (auto p : parts)
            k = mix64(k ^ mix64(p));
        return CounterRng(k);
    }

    std::uint64_t next_u64() { return mix64(key_ ^ mix64(counter_++)); }

    /// Uniform in (0, 1).
    double uniform() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller (one draw per call, two uniforms consumed).
    double normal() {
        const double u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

  private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

} // namespace hysid
