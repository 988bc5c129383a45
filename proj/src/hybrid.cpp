#include "hysid/hybrid.hpp"

namespace hysid {

SampleSchedule::SampleSchedule(double start, double period, std::size_t count)
    : start_(start), period_(period), count_(count) {
    if (!(start >= 0.0) || !std::isfinite(start))
        throw ConfigError("sample schedule must start at a finite time >= 0");
    if (!(period > 0.0) || !std::isfinite(period))
        throw ConfigError("sample period must be positive");
    if (count == 0)
        throw ConfigError("sample schedule is empty");
}

SampleSchedule SampleSchedule::spanning(double start, double stop, double period) {
    const double n = (stop - start) / period;
    const double rounded = std::round(n);
    if (!(stop >= start) || std::abs(n - rounded) > 1e-9 * std::max(1.0, rounded))
        throw ConfigError("span is not a whole number of sample periods");
    return SampleSchedule(start, period, static_cast<std::size_t>(rounded) + 1);
}

std::vector<double> SampleSchedule::times() const {
    std::vector<double> out(count_);
    for (std::size_t k = 0; k < count_; ++k)
        out[k] = time(k);
    return out;
}

} // namespace hysid
