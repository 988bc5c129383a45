#include "hysid/parameters.hpp"

#include <algorithm>

#include "hysid/errors.hpp"

namespace hysid {

ParameterLayout &ParameterLayout::add(std::string name, std::size_t size) {
    if (name.empty())
        throw ConfigError("parameter segment needs a name");
    if (contains(name))
        throw ConfigError("duplicate parameter segment '" + name + "'");
    if (size == 0)
        throw ConfigError("parameter segment '" + name + "' is empty");
    segments_.push_back(Segment{std::move(name), total_, size});
    total_ += size;
    return *this;
}

bool ParameterLayout::contains(const std::string &name) const {
    return std::any_of(segments_.begin(), segments_.end(), [&](const Segment &s) { return s.name == name; });
}

const Segment &ParameterLayout::segment(const std::string &name) const {
    for (const auto &s : segments_)
        if (s.name == name)
            return s;
    throw ConfigError("unknown parameter segment '" + name + "'");
}

void ParameterLayout::validate() const {
    std::vector<Segment> sorted = segments_;
    std::sort(sorted.begin(), sorted.end(), [](const Segment &a, const Segment &b) { return a.offset < b.offset; });
    std::size_t cursor = 0;
    for (const auto &s : sorted) {
        if (s.offset != cursor)
            throw ConfigError("parameter segment '" + s.name + "' leaves a gap or overlaps");
        cursor += s.size;
    }
    if (cursor != total_)
        throw ConfigError("parameter segments do not cover the layout");
}

std::span<double> ParameterVector::view(const std::string &name) {
    const Segment &s = layout.segment(name);
    return std::span<double>(values).subspan(s.offset, s.size);
}

std::span<const double> ParameterVector::view(const std::string &name) const {
    const Segment &s = layout.segment(name);
    return std::span<const double>(values).subspan(s.offset, s.size);
}

NamedParameters unpack(const ParameterLayout &layout, std::span<const double> values) {
    if (values.size() != layout.size())
        throw ConfigError("parameter vector length " + std::to_string(values.size()) +
                          " does not match layout length " + std::to_string(layout.size()));
    NamedParameters out;
    for (const auto &s : layout.segments())
        out[s.name].assign(values.begin() + static_cast<std::ptrdiff_t>(s.offset),
                           values.begin() + static_cast<std::ptrdiff_t>(s.offset + s.size));
    return out;
}

std::vector<double> pack(const ParameterLayout &layout, const NamedParameters &named) {
    std::vector<double> out(layout.size());
    for (const auto &s : layout.segments()) {
        auto it = named.find(s.name);
        if (it == named.end())
            throw ConfigError("missing parameter segment '" + s.name + "'");
        if (it->second.size() != s.size)
            throw ConfigError("parameter segment '" + s.name + "' has wrong size");
        std::copy(it->second.begin(), it->second.end(), out.begin() + static_cast<std::ptrdiff_t>(s.offset));
    }
    if (named.size() != layout.segments().size())
        throw ConfigError("unexpected extra parameter segments");
    return out;
}

} // namespace hysid
