#pragma once

// Quad-rotor plant with Euler angles η, body rates ξ, body-frame velocity v and
// world-frame position p, driven by four rotor commands Ω held between samples.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hysid/errors.hpp"
#include "hysid/hybrid.hpp"
#include "hysid/mlp.hpp"
#include "hysid/parameters.hpp"
#include "hysid/scalar.hpp"

namespace hysid::quad {

inline constexpr std::size_t kStateDim = 12;
inline constexpr std::size_t kControlDim = 4;
inline constexpr std::size_t kAugmentedDim = kStateDim + kControlDim;

// Offsets into the 12-state vector.
inline constexpr std::size_t kEta = 0;
inline constexpr std::size_t kXi = 3;
inline constexpr std::size_t kVel = 6;
inline constexpr std::size_t kPos = 9;

/// Identified inertia entries are stored in units of 1e-6 kg·m².
inline constexpr double kInertiaUnit = 1e-6;

/// Network drag estimates are n̂(·)·kNetworkForceScale newtons, so that a
/// freshly initialized network perturbs the 27 g vehicle only mildly.
inline constexpr double kNetworkForceScale = 1.0 / 64.0;

template <class S> using Vec3 = std::array<S, 3>;
template <class S> using Mat3 = std::array<std::array<S, 3>, 3>;

class GimbalLockError : public Error {
  public:
    using Error::Error;
};

struct PhysParams {
    double m = 0.027;
    double g = 9.81;
    Vec3<double> inertia{6.48, 6.48, 9.98}; // units of kInertiaUnit
    double b = 2.2e-8;
    double d = 1e-9;
    double l = 0.046;
    Vec3<double> wind{0.223, 0.354, -0.154}; // world frame, m/s
    Vec3<double> drag{0.03618, 0.03618, 0.1809};

    void validate() const;
};

/// World-from-body rotation for Euler angles η.
template <class S> Mat3<S> rotation(const Vec3<S> &eta) {
    using std::cos;
    using std::sin;
    const S s1 = sin(eta[0]), c1 = cos(eta[0]);
    const S s2 = sin(eta[1]), c2 = cos(eta[1]);
    const S s3 = sin(eta[2]), c3 = cos(eta[2]);
    return {{{c2 * c3, c3 * s1 * s2 - c1 * s3, s1 * s3 + c1 * c3 * s2},
             {c2 * s3, c1 * c3 + s1 * s2 * s3, c1 * s3 * s2 - c3 * s1},
             {-s2, c2 * s1, c1 * c2}}};
}

/// Rᵀw: a world-frame vector expressed in the body frame.
template <class S, class W> Vec3<S> to_body(const Mat3<S> &R, const Vec3<W> &w) {
    Vec3<S> out;
    for (std::size_t i = 0; i < 3; ++i)
        out[i] = R[0][i] * w[0] + R[1][i] * w[1] + R[2][i] * w[2];
    return out;
}

template <class S> struct MotorOutputs {
    S thrust;
    Vec3<S> torque;
};

template <class S> MotorOutputs<S> motor_map(std::span<const S> omega, double b, double d, double l) {
    const S q1 = omega[0] * omega[0];
    const S q2 = omega[1] * omega[1];
    const S q3 = omega[2] * omega[2];
    const S q4 = omega[3] * omega[3];
    return {b * (q1 + q2 + q3 + q4), {b * l * (q3 - q1), b * l * (q4 - q2), d * (q2 + q4 - q1 - q3)}};
}

/// Quadratic drag −k_i u_i|u_i| on the relative air velocity u = v − Rᵀw.
template <class S, class W, class K>
Vec3<S> quadratic_drag(const Vec3<S> &v, const Vec3<S> &eta, const Vec3<W> &wind, const Vec3<K> &k) {
    using std::abs;
    const Vec3<S> wb = to_body(rotation(eta), wind);
    Vec3<S> f;
    for (std::size_t i = 0; i < 3; ++i) {
        const S u = v[i] - wb[i];
        f[i] = -(k[i] * (u * abs(u)));
    }
    return f;
}

template <class S> Vec3<S> true_drag(const Vec3<S> &v, const Vec3<S> &eta, const PhysParams &p) {
    return quadratic_drag(v, eta, p.wind, p.drag);
}

/// The twelve state derivatives for held rotor commands `omega`, inertia in
/// units of kInertiaUnit and a body-frame drag force.
template <class S, class I>
void quad_rhs(std::span<const S> x, std::span<const S> omega, const PhysParams &p, const Vec3<I> &inertia,
              const Vec3<S> &drag, std::span<S> dxdt) {
    using std::cos;
    using std::sin;
    using std::tan;
    const S &e1 = x[0], &e2 = x[1];
    const S &w1 = x[3], &w2 = x[4], &w3 = x[5];
    const S &v1 = x[6], &v2 = x[7], &v3 = x[8];
    const S c1 = cos(e1), s1 = sin(e1), c2 = cos(e2), s2 = sin(e2), t2 = tan(e2);
    if (std::abs(value_of(c2)) < 1e-9)
        throw GimbalLockError("pitch angle at ±π/2 (cos η₂ = " + std::to_string(value_of(c2)) + ")");
    const MotorOutputs<S> motor = motor_map(omega, p.b, p.d, p.l);
    const auto &[Iu, Iv, Iw] = inertia;
    const I Ix = Iu * kInertiaUnit, Iy = Iv * kInertiaUnit, Iz = Iw * kInertiaUnit;

    dxdt[0] = w1 + w3 * c1 * t2 + w2 * s1 * t2;
    dxdt[1] = w2 * c1 - w3 * s1;
    dxdt[2] = w3 * c1 / c2 + w2 * s1 / c2;
    dxdt[3] = w3 * w2 * (Iy - Iz) / Ix + motor.torque[0] / Ix;
    dxdt[4] = w1 * w3 * (Iz - Ix) / Iy + motor.torque[1] / Iy;
    dxdt[5] = w2 * w1 * (Ix - Iy) / Iz + motor.torque[2] / Iz;
    dxdt[6] = w3 * v2 - w2 * v3 - p.g * s2 + drag[0] / p.m;
    dxdt[7] = w1 * v3 - w3 * v1 + p.g * s1 * c2 + drag[1] / p.m;
    dxdt[8] = w2 * v1 - w1 * v2 + p.g * c2 * c1 - motor.thrust / p.m + drag[2] / p.m;
    const Mat3<S> R = rotation(Vec3<S>{x[0], x[1], x[2]});
    for (std::size_t i = 0; i < 3; ++i)
        dxdt[9 + i] = R[i][0] * v1 + R[i][1] * v2 + R[i][2] * v3;
}

/// Affine state feedback Ω[k] = Ω₀ + K(x(t_k) − r[k]) + r_n[k].
struct ControllerSpec {
    std::array<double, kControlDim> omega0{};
    std::array<std::array<double, kStateDim>, kControlDim> gain{};
    double period = 0.05;

    /// Spectral radius of the sampled hover-linearized closed loop.
    double closed_loop_radius = 0.0;
};

template <class S>
std::array<S, kControlDim> controller_update(std::span<const S> x, std::span<const double> r,
                                             std::span<const double> rn, const ControllerSpec &spec) {
    std::array<S, kControlDim> u;
    for (std::size_t j = 0; j < kControlDim; ++j) {
        S acc = S(spec.omega0[j]);
        for (std::size_t i = 0; i < kStateDim; ++i)
            acc = acc + spec.gain[j][i] * (x[i] - r[i]);
        u[j] = acc + rn[j];
    }
    return u;
}

struct LqrWeights {
    double position = 10.0;
    double other = 1.0;
    double input = 1e-4;
};

/// Ω₀ = √(mg/4b) and K from discrete LQR on the hover-linearized, ZOH-sampled
/// model (drag-free, still air). Throws DesignError if the result is not stable.
ControllerSpec design_controller(const PhysParams &params, double period, const LqrWeights &weights = {});

/// Hover rotor speed √(mg/4b).
double hover_speed(const PhysParams &params);

enum class UncertaintyModel : int { Physical = 1, RelativeAir = 2, BlackBox = 3 };

UncertaintyModel model_from_int(int k);

/// θ layout and decoding for one uncertainty model.
///   Physical:     θ = (k̂, ŵ, Î)
///   RelativeAir:  θ = (ŵ, Î, n̂₁ weights)  with d̂ = n̂₁(v − Rᵀŵ), n̂₁: ℝ³→ℝ³
///   BlackBox:     θ = (Î, n̂₂ weights)     with d̂ = n̂₂(v, η),   n̂₂: ℝ⁶→ℝ³
/// Î is held in units of kInertiaUnit; network outputs are scaled by kNetworkForceScale.
class Parameterization {
  public:
    explicit Parameterization(UncertaintyModel kind);

    UncertaintyModel kind() const noexcept { return kind_; }
    const ParameterLayout &layout() const noexcept { return layout_; }
    std::size_t size() const noexcept { return layout_.size(); }
    bool has_network() const noexcept { return kind_ != UncertaintyModel::Physical; }
    const Mlp &network() const;

    /// Initial guess: k̂=(0.027,0.027,0.162), ŵ=0, Î=(6,7,11), network from seed.
    std::vector<double> initial_guess(std::uint64_t seed) const;

    /// θ holding the true physical values (Physical model only; networks zero otherwise).
    std::vector<double> truth(const PhysParams &p) const;

    /// Î in units of kInertiaUnit.
    template <class S> Vec3<S> inertia(std::span<const S> theta) const {
        check(theta.size());
        const auto I = theta.subspan(i_off_, 3);
        return {I[0], I[1], I[2]};
    }

    template <class S> Vec3<S> drag(std::span<const S> theta, const Vec3<S> &v, const Vec3<S> &eta) const {
        check(theta.size());
        switch (kind_) {
        case UncertaintyModel::Physical: {
            const auto k = theta.subspan(k_off_, 3);
            const auto w = theta.subspan(w_off_, 3);
            return quadratic_drag(v, eta, Vec3<S>{w[0], w[1], w[2]}, Vec3<S>{k[0], k[1], k[2]});
        }
        case UncertaintyModel::RelativeAir: {
            const auto w = theta.subspan(w_off_, 3);
            const Vec3<S> wb = to_body(rotation(eta), Vec3<S>{w[0], w[1], w[2]});
            const std::array<S, 3> u{v[0] - wb[0], v[1] - wb[1], v[2] - wb[2]};
            return net_eval<S>(theta, u);
        }
        case UncertaintyModel::BlackBox: {
            const std::array<S, 6> in{v[0], v[1], v[2], eta[0], eta[1], eta[2]};
            return net_eval<S>(theta, in);
        }
        }
        throw ConfigError("unknown uncertainty model");
    }

  private:
    void check(std::size_t n) const {
        if (n != layout_.size())
            throw ConfigError("θ has " + std::to_string(n) + " entries but the model layout needs " +
                              std::to_string(layout_.size()));
    }

    template <class S, std::size_t N> Vec3<S> net_eval(std::span<const S> theta, const std::array<S, N> &in) const {
        Vec3<S> out;
        net_->forward(theta.subspan(net_offset_, net_->parameter_count()), std::span<const S>(in),
                      std::span<S>(out));
        for (auto &o : out)
            o = o * kNetworkForceScale;
        return out;
    }

    UncertaintyModel kind_;
    ParameterLayout layout_;
    std::optional<Mlp> net_;
    std::size_t net_offset_ = 0;
    std::size_t k_off_ = 0, w_off_ = 0, i_off_ = 0;
};

/// Network shapes per model: (3,120,3) and (6,20,120,30,3).
std::vector<std::size_t> network_dims(UncertaintyModel kind);

/// Per-sample controller inputs r[k] (12) and r_n[k] (4).
struct Excitation {
    std::vector<std::array<double, kStateDim>> r;
    std::vector<std::array<double, kControlDim>> rn;
};

/// Closed loop of the plant and the sampled controller as a 16-state hybrid
/// system starting from x0 with Ω = Ω₀. Without `model` the true drag and
/// inertia are used and θ is ignored; with it, Î and the drag estimate come from θ.
template <class S>
HybridSystem<S> closed_loop(const PhysParams &p, const ControllerSpec &spec, const SampleSchedule &schedule,
                            const std::array<double, kStateDim> &x0, std::shared_ptr<const Excitation> ex,
                            std::shared_ptr<const Parameterization> model = nullptr) {
    if (!ex || ex->r.size() != schedule.size() || ex->rn.size() != schedule.size())
        throw ConfigError("excitation signals must have one entry per sample time");
    PlantRhsFn<S> plant = [p, model](std::span<const S> x, std::span<const S> u, double, std::span<const S> theta,
                                     std::span<S> dx) {
        const Vec3<S> eta{x[kEta], x[kEta + 1], x[kEta + 2]};
        const Vec3<S> v{x[kVel], x[kVel + 1], x[kVel + 2]};
        if (model) {
            quad_rhs<S, S>(x, u, p, model->inertia(theta), model->drag(theta, v, eta), dx);
        } else {
            quad_rhs<S, double>(x, u, p, p.inertia, true_drag(v, eta, p), dx);
        }
    };
    ControllerFn<S> ctrl = [spec, ex](std::size_t k, std::span<const S> x, std::span<const S>,
                                      std::span<const S>) {
        const auto u = controller_update<S>(x, ex->r[k], ex->rn[k], spec);
        return std::vector<S>(u.begin(), u.end());
    };
    InitialStateFn<S> init = [x0](std::span<const S>) { return std::vector<S>(x0.begin(), x0.end()); };
    return assemble_closed_loop<S>(kStateDim, kControlDim, plant, ctrl, schedule, init,
                                   std::vector<double>(spec.omega0.begin(), spec.omega0.end()));
}

} // namespace hysid::quad
