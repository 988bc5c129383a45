#include "hysid/events.hpp"

#include <cmath>

namespace hysid {

namespace {

double checked(const std::function<double(double)> &g, double t) {
    const double v = g(t);
    if (!std::isfinite(v))
        throw EventError("non-finite guard value at t=" + std::to_string(t));
    return v;
}

int sign_of(double v) { return (v > 0.0) - (v < 0.0); }

} // namespace

double locate_root(const std::function<double(double)> &g, double lo, double hi, double tol_t) {
    if (!(hi >= lo))
        throw EventError("invalid root bracket");
    double glo = checked(g, lo);
    if (glo == 0.0)
        return lo;
    double ghi = checked(g, hi);
    if (ghi == 0.0)
        return hi;
    if (sign_of(glo) == sign_of(ghi))
        throw EventError("guard has no sign change on [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");

    int retained = 0; // side kept by the previous iteration: -1 lo, +1 hi
    for (int iter = 0; iter < 400 && hi - lo > tol_t; ++iter) {
        const double width = hi - lo;
        double m = (iter % 4 == 3) ? 0.5 * (lo + hi) : (lo * ghi - hi * glo) / (ghi - glo);
        // Keep trial points inside the bracket and at least a quarter tolerance
        // from either end so that the width eventually drops below tol_t.
        const double margin = std::min(0.25 * tol_t, 0.5 * width);
        if (!(m > lo + margin))
            m = lo + margin;
        if (!(m < hi - margin))
            m = hi - margin;
        const double gm = checked(g, m);
        if (gm == 0.0)
            return m;
        if (sign_of(gm) == sign_of(glo)) {
            lo = m;
            glo = gm;
            if (retained == +1)
                ghi *= 0.5;
            retained = +1;
        } else {
            hi = m;
            ghi = gm;
            if (retained == -1)
                glo *= 0.5;
            retained = -1;
        }
    }
    return hi;
}

double locate_event_time(const std::function<double(std::span<const double>, double)> &g,
                         const StepRecord<double> &rec, double lo, double hi, double tol_t) {
    if (lo < rec.t || hi > rec.t + rec.dt)
        throw RangeError("event bracket outside the step");
    return locate_root([&](double tau) { return g(dense_eval(rec, tau), tau); }, lo, hi, tol_t);
}

double locate_event_time(const std::function<double(std::span<const double>, double)> &g,
                         const StepRecord<double> &rec, double tol_t) {
    return locate_event_time(g, rec, rec.t, rec.t + rec.dt, tol_t);
}

std::vector<double> event_time_sensitivity(std::span<const double> dg_dx, std::span<const double> dx_dtheta,
                                           std::size_t n_theta, double g_rate) {
    if (std::abs(g_rate) < kTransversalityThreshold)
        throw GrazingEventError("guard rate " + std::to_string(g_rate) + " below transversality threshold");
    if (dx_dtheta.size() != dg_dx.size() * n_theta)
        throw ConfigError("state sensitivity has wrong shape");
    std::vector<double> out(n_theta, 0.0);
    for (std::size_t i = 0; i < dg_dx.size(); ++i)
        for (std::size_t j = 0; j < n_theta; ++j)
            out[j] -= dg_dx[i] * dx_dtheta[i * n_theta + j] / g_rate;
    return out;
}

} // namespace hysid
