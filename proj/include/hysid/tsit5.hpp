#pragma once

// Tsitouras 5(4) explicit Runge-Kutta pair with its free 4th-order continuous
// extension. The propagated solution is the 5th-order one; the stage-7 slope
// is f(x_end) and is reused as the first slope of the next step (FSAL).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "hysid/errors.hpp"
#include "hysid/hybrid.hpp"
#include "hysid/scalar.hpp"

namespace hysid {

namespace tsit5 {

inline constexpr std::array<double, 7> c = {0.0, 0.161, 0.327, 0.9, 0.9800255409045097, 1.0, 1.0};

inline constexpr double a21 = 0.161;
inline constexpr double a31 = -0.008480655492356989, a32 = 0.335480655492357;
inline constexpr double a41 = 2.897153057105493, a42 = -6.359448489975075, a43 = 4.3622954328695815;
inline constexpr double a51 = 5.325864828439257, a52 = -11.748883564062828, a53 = 7.4955393428898365,
                        a54 = -0.09249506636175525;
inline constexpr double a61 = 5.86145544294642, a62 = -12.92096931784711, a63 = 8.159367898576159,
                        a64 = -0.071584973281401, a65 = -0.028269050394068383;
inline constexpr double a71 = 0.09646076681806523, a72 = 0.01, a73 = 0.4798896504144996,
                        a74 = 1.379008574103742, a75 = -3.290069515436081, a76 = 2.324710524099774;

/// b - b̂: weights of the embedded error estimate.
inline constexpr std::array<double, 7> btilde = {-0.00178001105222577714, -0.0008164344596567469,
                                                 0.007880878010261995,    -0.1447110071732629,
                                                 0.5823571654525552,      -0.45808210592918697,
                                                 0.015151515151515152};

/// Dense-output weight b_i(s) for s in [0,1]; b_i(1) equals the 5th-order weights.
inline std::array<double, 7> dense_weights(double s) {
    const double s2 = s * s;
    const double s3 = s2 * s;
    const double s4 = s3 * s;
    return {
        s - 2.763706197274826 * s2 + 2.9132554618219126 * s3 - 1.0530884977290216 * s4,
        0.13169999999999998 * s2 - 0.2234 * s3 + 0.1017 * s4,
        3.9302962368947516 * s2 - 5.941033872131505 * s3 + 2.490627285651253 * s4,
        -12.411077166933676 * s2 + 30.33818863028232 * s3 - 16.548102889244902 * s4,
        37.50931341651104 * s2 - 88.1789048947664 * s3 + 47.37952196281928 * s4,
        -27.896526289197286 * s2 + 65.09189467479366 * s3 - 34.87065786149661 * s4,
        1.5 * s2 - 4.0 * s3 + 2.5 * s4,
    };
}

} // namespace tsit5

struct Tolerances {
    double abs = 1e-6;
    double rel = 1e-6;
};

template <class S> struct StepRecord {
    double t = 0.0;
    double dt = 0.0;
    std::array<std::vector<S>, 7> k;
    std::vector<S> x_begin;
    std::vector<S> x_end;
    double error_norm = 0.0;
};

/// Weighted RMS norm of the embedded error, scaled by abs + rel·max(|x|,|x_end|).
template <class S> double tsit5_error_norm(const StepRecord<S> &rec, const Tolerances &tol) {
    const std::size_t n = rec.x_begin.size();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double e = 0.0;
        for (std::size_t j = 0; j < 7; ++j)
            e += tsit5::btilde[j] * value_of(rec.k[j][i]);
        e *= rec.dt;
        const double scale =
            tol.abs + tol.rel * std::max(std::abs(value_of(rec.x_begin[i])), std::abs(value_of(rec.x_end[i])));
        acc += (e / scale) * (e / scale);
    }
    return std::sqrt(acc / static_cast<double>(n));
}

/// One Tsit5 step from rec.x_begin over [t, t+dt]. When `fsal_ready` is set,
/// rec.k[0] already holds f(x_begin, t). With `with_error` false the stage-7
/// slope and the error estimate are skipped (x_end is unaffected).
template <class S>
void step_tsit5(const RhsFn<S> &rhs, std::span<const S> theta, double t, double dt, StepRecord<S> &rec,
                bool fsal_ready = false, bool with_error = true, const Tolerances &tol = {}) {
    using namespace tsit5;
    if (!(dt > 0.0))
        throw IntegrationError("non-positive step size", t, dt);
    const std::size_t n = rec.x_begin.size();
    rec.t = t;
    rec.dt = dt;
    for (auto &k : rec.k)
        k.resize(n);
    rec.x_end.resize(n);
    std::vector<S> tmp(n);
    const std::span<const S> x(rec.x_begin);
    auto eval = [&](std::span<const S> at, double tau, std::vector<S> &out) {
        rhs(at, tau, theta, std::span<S>(out));
        if (!all_finite(std::span<const S>(out)))
            throw IntegrationError("non-finite derivative", t, dt);
    };

    if (!fsal_ready)
        eval(x, t, rec.k[0]);
    const auto &k1 = rec.k[0];
    auto &k2 = rec.k[1];
    auto &k3 = rec.k[2];
    auto &k4 = rec.k[3];
    auto &k5 = rec.k[4];
    auto &k6 = rec.k[5];

    for (std::size_t i = 0; i < n; ++i)
        tmp[i] = x[i] + dt * (a21 * k1[i]);
    eval(tmp, t + c[1] * dt, k2);
    for (std::size_t i = 0; i < n; ++i)
        tmp[i] = x[i] + dt * (a31 * k1[i] + a32 * k2[i]);
    eval(tmp, t + c[2] * dt, k3);
    for (std::size_t i = 0; i < n; ++i)
        tmp[i] = x[i] + dt * (a41 * k1[i] + a42 * k2[i] + a43 * k3[i]);
    eval(tmp, t + c[3] * dt, k4);
    for (std::size_t i = 0; i < n; ++i)
        tmp[i] = x[i] + dt * (a51 * k1[i] + a52 * k2[i] + a53 * k3[i] + a54 * k4[i]);
    eval(tmp, t + c[4] * dt, k5);
    for (std::size_t i = 0; i < n; ++i)
        tmp[i] = x[i] + dt * (a61 * k1[i] + a62 * k2[i] + a63 * k3[i] + a64 * k4[i] + a65 * k5[i]);
    eval(tmp, t + dt, k6);
    for (std::size_t i = 0; i < n; ++i)
        rec.x_end[i] = x[i] + dt * (a71 * k1[i] + a72 * k2[i] + a73 * k3[i] + a74 * k4[i] + a75 * k5[i] +
                                    a76 * k6[i]);
    if (!all_finite(std::span<const S>(rec.x_end)))
        throw IntegrationError("non-finite state", t, dt);
    if (with_error) {
        eval(rec.x_end, t + dt, rec.k[6]);
        rec.error_norm = tsit5_error_norm(rec, tol);
    } else {
        rec.error_norm = 0.0;
    }
}

/// Continuous extension of an accepted step at time tau ∈ [t, t+dt].
template <class S> std::vector<S> dense_eval(const StepRecord<S> &rec, double tau) {
    if (!(tau >= rec.t && tau <= rec.t + rec.dt))
        throw RangeError("dense output requested outside the step");
    const std::size_t n = rec.x_begin.size();
    if (tau == rec.t)
        return rec.x_begin;
    if (tau == rec.t + rec.dt && !rec.x_end.empty())
        return rec.x_end;
    const auto b = tsit5::dense_weights((tau - rec.t) / rec.dt);
    std::vector<S> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        S acc = b[0] * rec.k[0][i];
        for (std::size_t j = 1; j < 7; ++j)
            acc = acc + b[j] * rec.k[j][i];
        out[i] = rec.x_begin[i] + rec.dt * acc;
    }
    return out;
}

} // namespace hysid
