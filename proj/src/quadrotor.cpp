#include "hysid/quadrotor.hpp"

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "hysid/dual.hpp"

namespace hysid::quad {

void PhysParams::validate() const {
    const bool ok = m > 0 && b > 0 && l > 0 && inertia[0] > 0 && inertia[1] > 0 && inertia[2] > 0 &&
                    std::isfinite(g) && std::isfinite(d);
    if (!ok)
        throw ConfigError("physical parameters must have positive m, b, l and inertia");
}

double hover_speed(const PhysParams &p) {
    p.validate();
    return std::sqrt(p.m * p.g / (4.0 * p.b));
}

namespace {

using Mat = Eigen::MatrixXd;
constexpr std::size_t kZ = kStateDim + kControlDim;

// Continuous-time Jacobians of quad_rhs at hover in still air, no drag.
void linearize(const PhysParams &p, double omega0, Mat &A, Mat &B) {
    using D = Dual<kZ>;
    std::array<D, kZ> z;
    for (std::size_t i = 0; i < kZ; ++i)
        z[i] = D::seeded(i < kStateDim ? 0.0 : omega0, i);
    std::array<D, kStateDim> dx;
    const Vec3<D> zero{D(0.0), D(0.0), D(0.0)};
    quad_rhs<D, double>(std::span<const D>(z.data(), kStateDim), std::span<const D>(z.data() + kStateDim, kControlDim),
                        p, p.inertia, zero, std::span<D>(dx));
    A.resize(kStateDim, kStateDim);
    B.resize(kStateDim, kControlDim);
    for (std::size_t r = 0; r < kStateDim; ++r) {
        if (std::abs(dx[r].v) > 1e-9)
            throw DesignError("hover is not an equilibrium of the plant (residual " + std::to_string(dx[r].v) + ")");
        for (std::size_t c = 0; c < kStateDim; ++c)
            A(r, c) = dx[r].d[c];
        for (std::size_t c = 0; c < kControlDim; ++c)
            B(r, c) = dx[r].d[kStateDim + c];
    }
}

// Structured doubling for P = Q + AᵀPA − AᵀPB(R + BᵀPB)⁻¹BᵀPA.
Mat solve_dare(const Mat &A, const Mat &B, const Mat &Q, const Mat &R) {
    const auto n = A.rows();
    const Mat I = Mat::Identity(n, n);
    Mat Ak = A;
    Mat Gk = B * R.ldlt().solve(B.transpose());
    Mat Hk = Q;
    for (int it = 0; it < 100; ++it) {
        const Eigen::PartialPivLU<Mat> W(I + Gk * Hk);
        const Mat WA = W.solve(Ak);
        const Mat WG = W.solve(Gk);
        const Mat H_next = Hk + Ak.transpose() * Hk * WA;
        Gk = Gk + Ak * WG * Ak.transpose();
        Ak = Ak * WA;
        const double change = (H_next - Hk).norm() / std::max(1.0, H_next.norm());
        Hk = H_next;
        if (!Hk.allFinite())
            throw DesignError("Riccati iteration diverged");
        if (change < 1e-14)
            return 0.5 * (Hk + Hk.transpose());
    }
    throw DesignError("Riccati iteration did not converge");
}

} // namespace

ControllerSpec design_controller(const PhysParams &params, double period, const LqrWeights &weights) {
    if (!(period > 0) || !std::isfinite(period))
        throw ConfigError("controller period must be positive");
    if (!(weights.input > 0) || !(weights.position > 0) || !(weights.other > 0))
        throw ConfigError("LQR weights must be positive");
    const double omega0 = hover_speed(params);

    Mat A, B;
    linearize(params, omega0, A, B);

    // Zero-order-hold sampling via the block exponential of [[A, B], [0, 0]]·Δt.
    Mat M = Mat::Zero(kZ, kZ);
    M.topLeftCorner(kStateDim, kStateDim) = A * period;
    M.topRightCorner(kStateDim, kControlDim) = B * period;
    const Mat E = M.exp();
    const Mat Ad = E.topLeftCorner(kStateDim, kStateDim);
    const Mat Bd = E.topRightCorner(kStateDim, kControlDim);

    Mat Q = Mat::Identity(kStateDim, kStateDim) * weights.other;
    for (std::size_t i = kPos; i < kPos + 3; ++i)
        Q(i, i) = weights.position;
    const Mat R = Mat::Identity(kControlDim, kControlDim) * weights.input;

    const Mat P = solve_dare(Ad, Bd, Q, R);
    const Mat K = (R + Bd.transpose() * P * Bd).ldlt().solve(Bd.transpose() * P * Ad);
    if (!K.allFinite())
        throw DesignError("LQR gain is not finite");

    const Mat closed = Ad - Bd * K;
    const double radius = closed.eigenvalues().cwiseAbs().maxCoeff();
    if (!(radius < 1.0))
        throw DesignError("sampled closed loop is not stable (spectral radius " + std::to_string(radius) + ")");

    ControllerSpec spec;
    spec.omega0.fill(omega0);
    for (std::size_t j = 0; j < kControlDim; ++j)
        for (std::size_t i = 0; i < kStateDim; ++i)
            spec.gain[j][i] = -K(j, i);
    spec.period = period;
    spec.closed_loop_radius = radius;
    return spec;
}

UncertaintyModel model_from_int(int k) {
    if (k < 1 || k > 3)
        throw ConfigError("uncertainty model must be 1, 2 or 3 (got " + std::to_string(k) + ")");
    return static_cast<UncertaintyModel>(k);
}

std::vector<std::size_t> network_dims(UncertaintyModel kind) {
    switch (kind) {
    case UncertaintyModel::Physical:
        return {};
    case UncertaintyModel::RelativeAir:
        return {3, 120, 3};
    case UncertaintyModel::BlackBox:
        return {6, 20, 120, 30, 3};
    }
    throw ConfigError("unknown uncertainty model");
}

Parameterization::Parameterization(UncertaintyModel kind) : kind_(kind) {
    switch (kind) {
    case UncertaintyModel::Physical:
        layout_.add("k", 3);
        layout_.add("w", 3);
        layout_.add("I", 3);
        k_off_ = layout_.segment("k").offset;
        w_off_ = layout_.segment("w").offset;
        break;
    case UncertaintyModel::RelativeAir:
        layout_.add("w", 3);
        layout_.add("I", 3);
        w_off_ = layout_.segment("w").offset;
        break;
    case UncertaintyModel::BlackBox:
        layout_.add("I", 3);
        break;
    default:
        throw ConfigError("unknown uncertainty model");
    }
    i_off_ = layout_.segment("I").offset;
    if (has_network()) {
        net_.emplace(network_dims(kind));
        net_offset_ = layout_.size();
        net_->extend_layout(layout_, "nn");
    }
    layout_.validate();
}

const Mlp &Parameterization::network() const {
    if (!net_)
        throw ConfigError("uncertainty model 1 has no network");
    return *net_;
}

std::vector<double> Parameterization::initial_guess(std::uint64_t seed) const {
    std::vector<double> theta(size(), 0.0);
    if (kind_ == UncertaintyModel::Physical) {
        theta[k_off_ + 0] = 0.027;
        theta[k_off_ + 1] = 0.027;
        theta[k_off_ + 2] = 0.162;
    }
    theta[i_off_ + 0] = 6.0;
    theta[i_off_ + 1] = 7.0;
    theta[i_off_ + 2] = 11.0;
    if (net_) {
        const std::vector<double> w = mlp_init(*net_, seed);
        std::copy(w.begin(), w.end(), theta.begin() + static_cast<std::ptrdiff_t>(net_offset_));
    }
    return theta;
}

std::vector<double> Parameterization::truth(const PhysParams &p) const {
    std::vector<double> theta(size(), 0.0);
    for (std::size_t i = 0; i < 3; ++i) {
        if (kind_ == UncertaintyModel::Physical)
            theta[k_off_ + i] = p.drag[i];
        if (kind_ != UncertaintyModel::BlackBox)
            theta[w_off_ + i] = p.wind[i];
        theta[i_off_ + i] = p.inertia[i];
    }
    return theta;
}

} // namespace hysid::quad
