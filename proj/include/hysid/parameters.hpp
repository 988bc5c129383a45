#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace hysid {

struct Segment {
    std::string name;
    std::size_t offset = 0;
    std::size_t size = 0;

    friend bool operator==(const Segment &, const Segment &) = default;
};

/// Named, disjoint, contiguous segments covering [0, size()).
class ParameterLayout {
  public:
    ParameterLayout() = default;

    /// Appends a segment at the current end. Names must be unique.
    ParameterLayout &add(std::string name, std::size_t size);

    std::size_t size() const noexcept { return total_; }
    const std::vector<Segment> &segments() const noexcept { return segments_; }
    bool contains(const std::string &name) const;
    const Segment &segment(const std::string &name) const;

    /// Throws ConfigError unless the segments are disjoint and cover [0, size()).
    void validate() const;

    friend bool operator==(const ParameterLayout &, const ParameterLayout &) = default;

  private:
    std::vector<Segment> segments_;
    std::size_t total_ = 0;
};

using NamedParameters = std::map<std::string, std::vector<double>>;

/// Flat θ together with the layout that names its pieces.
struct ParameterVector {
    ParameterLayout layout;
    std::vector<double> values;

    std::span<double> view(const std::string &name);
    std::span<const double> view(const std::string &name) const;
};

/// Splits θ into its named segments.
NamedParameters unpack(const ParameterLayout &layout, std::span<const double> values);

/// Inverse of unpack; every segment must be present with the declared size.
std::vector<double> pack(const ParameterLayout &layout, const NamedParameters &named);

template <class S> std::span<const S> segment_of(const ParameterLayout &layout, std::span<const S> theta,
                                                 const std::string &name) {
    const Segment &s = layout.segment(name);
    return theta.subspan(s.offset, s.size);
}

} // namespace hysid
