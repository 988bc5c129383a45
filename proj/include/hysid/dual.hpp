#pragma once

#include <array>
#include <cmath>
#include <cstddef>

#include "hysid/scalar.hpp"

namespace hysid {

/// Forward-mode dual number carrying N tangent directions.
template <std::size_t N> struct Dual {
    double v = 0.0;
    std::array<double, N> d{};

    Dual() = default;
    Dual(double value) : v(value) {} // NOLINT: implicit lift of constants

    static Dual seeded(double value, std::size_t direction, double tangent = 1.0) {
        Dual out(value);
        out.d[direction] = tangent;
        return out;
    }

    Dual &operator+=(const Dual &o) { return *this = *this + o; }
    Dual &operator-=(const Dual &o) { return *this = *this - o; }
    Dual &operator*=(const Dual &o) { return *this = *this * o; }
    Dual &operator/=(const Dual &o) { return *this = *this / o; }

    friend Dual operator+(const Dual &a, const Dual &b) {
        Dual r(a.v + b.v);
        for (std::size_t i = 0; i < N; ++i)
            r.d[i] = a.d[i] + b.d[i];
        return r;
    }
    friend Dual operator-(const Dual &a, const Dual &b) {
        Dual r(a.v - b.v);
        for (std::size_t i = 0; i < N; ++i)
            r.d[i] = a.d[i] - b.d[i];
        return r;
    }
    friend Dual operator-(const Dual &a) {
        Dual r(-a.v);
        for (std::size_t i = 0; i < N; ++i)
            r.d[i] = -a.d[i];
        return r;
    }
    friend Dual operator*(const Dual &a, const Dual &b) {
        Dual r(a.v * b.v);
        for (std::size_t i = 0; i < N; ++i)
            r.d[i] = a.d[i] * b.v + a.v * b.d[i];
        return r;
    }
    friend Dual operator/(const Dual &a, const Dual &b) {
        Dual r(a.v / b.v);
        const double inv = 1.0 / b.v;
        for (std::size_t i = 0; i < N; ++i)
            r.d[i] = (a.d[i] - r.v * b.d[i]) * inv;
        return r;
    }

    friend Dual operator+(const Dual &a, double b) {
        Dual r = a;
        r.v = a.v + b;
        return r;
    }
    friend Dual operator+(double a, const Dual &b) {
        Dual r = b;
        r.v = a + b.v;
        return r;
    }
    friend Dual operator-(const Dual &a, double b) {
        Dual r = a;
        r.v = a.v - b;
        return r;
    }
    friend Dual operator-(double a, const Dual &b) {
        Dual r(a - b.v);
        for (std::size_t i = 0; i < N; ++i)
            r.d[i] = -b.d[i];
        return r;
    }
    friend Dual operator*(const Dual &a, double b) {
        Dual r(a.v * b);
        for (std::size_t i = 0; i < N; ++i)
            r.d[i] = a.d[i] * b;
        return r;
    }
    friend Dual operator*(double a, const Dual &b) {
        Dual r(a * b.v);
        for (std::size_t i = 0; i < N; ++i)
            r.d[i] = a * b.d[i];
        return r;
    }
    friend Dual operator/(const Dual &a, double b) {
        Dual r(a.v / b);
        for (std::size_t i = 0; i < N; ++i)
            r.d[i] = a.d[i] / b;
        return r;
    }
    friend Dual operator/(double a, const Dual &b) {
        Dual r(a / b.v);
        const double s = -r.v / b.v;
        for (std::size_t i = 0; i < N; ++i)
            r.d[i] = s * b.d[i];
        return r;
    }

    friend Dual apply_unary(const Dual &a, double value, double slope) {
        Dual r(value);
        for (std::size_t i = 0; i < N; ++i)
            r.d[i] = slope * a.d[i];
        return r;
    }

    friend Dual sin(const Dual &a) { return apply_unary(a, std::sin(a.v), std::cos(a.v)); }
    friend Dual cos(const Dual &a) { return apply_unary(a, std::cos(a.v), -std::sin(a.v)); }
    friend Dual tan(const Dual &a) {
        const double t = std::tan(a.v);
        return apply_unary(a, t, 1.0 + t * t);
    }
    friend Dual sqrt(const Dual &a) {
        const double s = std::sqrt(a.v);
        return apply_unary(a, s, 0.5 / s);
    }
    friend Dual exp(const Dual &a) {
        const double e = std::exp(a.v);
        return apply_unary(a, e, e);
    }
    // Derivative at exactly zero is taken as zero.
    friend Dual abs(const Dual &a) {
        const double s = a.v > 0.0 ? 1.0 : (a.v < 0.0 ? -1.0 : 0.0);
        return apply_unary(a, std::abs(a.v), s);
    }
};

template <std::size_t N> double value_of(const Dual<N> &x) noexcept { return x.v; }

} // namespace hysid
