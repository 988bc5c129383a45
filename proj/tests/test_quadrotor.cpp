#include "doctest.h"

#include <cmath>
#include <numbers>

#include "hysid/autodiff.hpp"
#include "hysid/quadrotor.hpp"
#include "hysid/random.hpp"
#include "hysid/simulate.hpp"

using namespace hysid;
using namespace hysid::quad;

namespace {

std::array<double, kStateDim> rhs_of(const std::array<double, kStateDim> &x, const std::array<double, 4> &omega,
                                     const PhysParams &p) {
    std::array<double, kStateDim> dx{};
    const Vec3<double> eta{x[0], x[1], x[2]};
    const Vec3<double> v{x[6], x[7], x[8]};
    quad_rhs<double, double>(x, omega, p, p.inertia, true_drag(v, eta, p), dx);
    return dx;
}

double det3(const Mat3<double> &R) {
    return R[0][0] * (R[1][1] * R[2][2] - R[1][2] * R[2][1]) - R[0][1] * (R[1][0] * R[2][2] - R[1][2] * R[2][0]) +
           R[0][2] * (R[1][0] * R[2][1] - R[1][1] * R[2][0]);
}

std::shared_ptr<Excitation> quiet(std::size_t n) {
    auto ex = std::make_shared<Excitation>();
    ex->r.assign(n, {});
    ex->rn.assign(n, {});
    return ex;
}

} // namespace

TEST_CASE("rotation matrix entries") {
    const auto I = rotation(Vec3<double>{0, 0, 0});
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            CHECK(I[i][j] == (i == j ? 1.0 : 0.0));
    const auto R = rotation(Vec3<double>{std::numbers::pi / 2, 0, 0});
    const double expected[3][3] = {{1, 0, 0}, {0, 0, -1}, {0, 1, 0}};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            CHECK(std::abs(R[i][j] - expected[i][j]) < 1e-15);
}

TEST_CASE("rotation is orthogonal with unit determinant") {
    CounterRng rng(7);
    for (int trial = 0; trial < 1000; ++trial) {
        const Vec3<double> eta{rng.uniform(-3.1, 3.1), rng.uniform(-1.5, 1.5), rng.uniform(-3.1, 3.1)};
        const auto R = rotation(eta);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double acc = 0.0;
                for (int k = 0; k < 3; ++k)
                    acc += R[i][k] * R[j][k];
                REQUIRE(std::abs(acc - (i == j ? 1.0 : 0.0)) < 1e-12);
            }
        REQUIRE(std::abs(det3(R) - 1.0) < 1e-12);
    }
}

TEST_CASE("motor map") {
    const PhysParams p;
    const double w0 = hover_speed(p);
    CHECK(std::abs(w0 - 1734.9) < 0.1);
    const std::array<double, 4> hover{w0, w0, w0, w0};
    const auto m = motor_map<double>(hover, p.b, p.d, p.l);
    CHECK(std::abs(m.thrust - p.m * p.g) < 1e-3);
    CHECK(m.thrust == doctest::Approx(0.264870).epsilon(1e-6));
    CHECK(m.torque == Vec3<double>{0, 0, 0});
    const std::array<double, 4> zero{};
    const auto z = motor_map<double>(zero, p.b, p.d, p.l);
    CHECK(z.thrust == 0.0);
    const std::array<double, 4> one{1, 0, 0, 0};
    const auto o = motor_map<double>(one, 2.2e-8, 1e-9, 0.046);
    CHECK(o.thrust == doctest::Approx(2.2e-8).epsilon(1e-14));
    CHECK(o.torque[0] == doctest::Approx(-1.012e-9).epsilon(1e-12));
    CHECK(o.torque[1] == 0.0);
    CHECK(o.torque[2] == doctest::Approx(-1e-9).epsilon(1e-14));
}

TEST_CASE("true drag") {
    const PhysParams p;
    PhysParams still = p;
    still.wind = {0, 0, 0};
    const Vec3<double> zero{0, 0, 0};
    CHECK(true_drag(zero, zero, still) == zero);
    CounterRng rng(3);
    for (int i = 0; i < 20; ++i) {
        const Vec3<double> eta{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        const auto f = true_drag(Vec3<double>{1, 0, 0}, eta, still);
        CHECK(f[0] == doctest::Approx(-0.03618).epsilon(1e-15));
        CHECK(f[1] == 0.0);
        CHECK(f[2] == 0.0);
    }
    PhysParams up = p;
    up.wind = {0, 0, 1};
    const auto f = true_drag(zero, zero, up);
    CHECK(f[2] == doctest::Approx(0.1809).epsilon(1e-15));
}

TEST_CASE("plant equations") {
    PhysParams p;
    p.wind = {0, 0, 0};
    const double w0 = hover_speed(p);
    const auto hover = rhs_of({}, {w0, w0, w0, w0}, p);
    for (double d : hover)
        CHECK(std::abs(d) <= 1e-9);

    PhysParams g0 = p;
    g0.g = 0.0;
    std::array<double, kStateDim> x{};
    x[kXi] = 1.0;
    const auto roll = rhs_of(x, {0, 0, 0, 0}, g0);
    CHECK(roll[0] == 1.0);
    for (int i = 1; i < 6; ++i)
        CHECK(roll[i] == 0.0);

    std::array<double, kStateDim> moving{};
    moving[kVel] = 1.0;
    PhysParams nodrag = p;
    nodrag.drag = {0, 0, 0};
    const auto fly = rhs_of(moving, {0, 0, 0, 0}, nodrag);
    CHECK(fly[kPos] == 1.0);
    CHECK(fly[kPos + 1] == 0.0);
    CHECK(fly[kPos + 2] == 0.0);

    // Yaw-rate coupling into η̇₁ goes through ξ₃.
    std::array<double, kStateDim> tilted{};
    tilted[1] = 0.3;
    tilted[kXi + 2] = 2.0;
    const auto yaw = rhs_of(tilted, {0, 0, 0, 0}, g0);
    CHECK(yaw[0] == doctest::Approx(2.0 * std::tan(0.3)).epsilon(1e-14));

    std::array<double, kStateDim> locked{};
    locked[1] = std::numbers::pi / 2;
    CHECK_THROWS_AS(rhs_of(locked, {0, 0, 0, 0}, p), GimbalLockError);
}

TEST_CASE("controller update") {
    ControllerSpec spec;
    spec.omega0 = {10, 20, 30, 40};
    for (int j = 0; j < 4; ++j)
        for (int i = 0; i < 12; ++i)
            spec.gain[j][i] = 0.1 * (j + 1) + 0.01 * i;
    std::array<double, 12> x{}, r{};
    const std::array<double, 4> rn{1, 2, 3, 4};
    const std::array<double, 4> none{};
    auto u = controller_update<double>(x, r, none, spec);
    CHECK(u == spec.omega0);
    ControllerSpec zero = spec;
    zero.gain = {};
    x[3] = 5.0;
    u = controller_update<double>(x, r, rn, zero);
    CHECK(u == std::array<double, 4>{11, 22, 33, 44});
    x = {};
    x[9] = 0.1;
    x[10] = -0.2;
    u = controller_update<double>(x, r, none, spec);
    for (int j = 0; j < 4; ++j)
        CHECK(u[j] == doctest::Approx(spec.omega0[j] + spec.gain[j][9] * 0.1 - spec.gain[j][10] * 0.2));
}

TEST_CASE("LQR design stabilizes hover") {
    const PhysParams p;
    const auto spec = design_controller(p, 0.05);
    CHECK(std::abs(spec.omega0[0] - 1734.9) < 0.1);
    CHECK(spec.closed_loop_radius < 1.0);
    CHECK(spec.closed_loop_radius > 0.0);
    for (const auto &row : spec.gain)
        for (double k : row)
            CHECK(std::isfinite(k));
    CHECK_THROWS_AS(design_controller(p, 0.0), ConfigError);
    PhysParams bad = p;
    bad.m = -1;
    CHECK_THROWS_AS(design_controller(bad, 0.05), ConfigError);
}

TEST_CASE("closed loop drives a small offset to the origin") {
    PhysParams p;
    p.wind = {0, 0, 0};
    const auto spec = design_controller(p, 0.05);
    const auto schedule = SampleSchedule::spanning(0.0, 10.0, 0.05);
    std::array<double, kStateDim> x0{};
    x0[0] = 0.01;
    x0[4] = -0.05;
    x0[6] = 0.1;
    x0[9] = 0.05;
    x0[11] = -0.05;
    const auto sys = closed_loop<double>(p, spec, schedule, x0, quiet(schedule.size()));
    CHECK(sys.state_dim == kAugmentedDim);
    const auto traj = adaptive_solve<double>(sys, {}, 0.0, 10.0, std::vector<double>{10.0});
    const auto &xf = traj.states[0];
    CHECK(std::hypot(xf[9], xf[10], xf[11]) < 0.01);
}

TEST_CASE("hover-initialized closed loop stays at the origin") {
    PhysParams p;
    p.wind = {0, 0, 0};
    const auto spec = design_controller(p, 0.05);
    const auto schedule = SampleSchedule::spanning(0.0, 2.0, 0.05);
    const auto sys = closed_loop<double>(p, spec, schedule, {}, quiet(schedule.size()));
    const auto traj = adaptive_solve<double>(sys, {}, 0.0, 2.0, schedule.times());
    for (const auto &x : traj.states)
        for (std::size_t i = 0; i < kStateDim; ++i)
            CHECK(std::abs(x[i]) <= 1e-9);
}

TEST_CASE("uncertainty model layouts and drag hooks") {
    const PhysParams p;
    const Parameterization m1(UncertaintyModel::Physical);
    const Parameterization m2(UncertaintyModel::RelativeAir);
    const Parameterization m3(UncertaintyModel::BlackBox);
    CHECK(m1.size() == 9);
    CHECK(m2.size() == 6 + 843);
    CHECK(m3.size() == 3 + 6383);
    CHECK(m2.network().parameter_count() == 843);
    CHECK(m3.network().dims() == std::vector<std::size_t>{6, 20, 120, 30, 3});
    CHECK_THROWS_AS(m1.network(), ConfigError);
    CHECK_THROWS_AS(model_from_int(4), ConfigError);

    const auto guess = m1.initial_guess(0);
    CHECK(guess == std::vector<double>{0.027, 0.027, 0.162, 0, 0, 0, 6.0, 7.0, 11.0});
    CHECK(m3.initial_guess(5) == m3.initial_guess(5));
    CHECK(m3.initial_guess(5) != m3.initial_guess(6));

    CounterRng rng(11);
    const auto truth = m1.truth(p);
    for (int i = 0; i < 50; ++i) {
        const Vec3<double> v{rng.normal(), rng.normal(), rng.normal()};
        const Vec3<double> eta{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        const auto a = m1.drag<double>(truth, v, eta);
        const auto b = true_drag(v, eta, p);
        CHECK(a == b);
        const std::vector<double> zeros(m2.size(), 0.0);
        CHECK(m2.drag<double>(zeros, v, eta) == Vec3<double>{0, 0, 0});
        const auto out3 = m3.drag<double>(m3.initial_guess(1), v, eta);
        CHECK(out3.size() == 3);
    }
    CHECK_THROWS_AS(m1.drag<double>(std::vector<double>(8, 0.0), Vec3<double>{}, Vec3<double>{}), ConfigError);
    const auto Ihat = m1.inertia<double>(truth);
    CHECK(Ihat == p.inertia);
}

TEST_CASE("model-1 closed loop at truth matches the true plant bit for bit") {
    const PhysParams p;
    const auto spec = design_controller(p, 0.05);
    const auto schedule = SampleSchedule::spanning(0.0, 1.0, 0.05);
    auto ex = quiet(schedule.size());
    CounterRng rng(5);
    for (auto &rn : ex->rn)
        for (auto &v : rn)
            v = rng.normal(0.0, 10.0);
    std::array<double, kStateDim> x0{};
    x0[9] = 0.1;
    x0[6] = -0.2;
    auto model = std::make_shared<const Parameterization>(UncertaintyModel::Physical);
    const auto truth = model->truth(p);
    const auto a = adaptive_solve<double>(closed_loop<double>(p, spec, schedule, x0, ex), {}, 0.0, 1.0,
                                          schedule.times());
    const auto b = adaptive_solve<double>(closed_loop<double>(p, spec, schedule, x0, ex, model), truth, 0.0, 1.0,
                                          schedule.times());
    CHECK(a.states == b.states);
}

TEST_CASE("linearization of the plant by duals matches finite differences") {
    PhysParams p;
    CounterRng rng(8);
    std::array<double, kStateDim> x{};
    for (auto &v : x)
        v = rng.normal(0.0, 0.2);
    const std::array<double, 4> w{1700, 1750, 1720, 1760};
    using D = Dual<kStateDim>;
    std::array<D, kStateDim> xd;
    for (std::size_t i = 0; i < kStateDim; ++i)
        xd[i] = D::seeded(x[i], i);
    std::array<D, 4> wd;
    for (int i = 0; i < 4; ++i)
        wd[i] = D(w[i]);
    std::array<D, kStateDim> dxd;
    const Vec3<D> eta{xd[0], xd[1], xd[2]};
    const Vec3<D> v{xd[6], xd[7], xd[8]};
    quad_rhs<D, double>(xd, wd, p, p.inertia, true_drag(v, eta, p), dxd);
    for (std::size_t j = 0; j < kStateDim; ++j) {
        auto xp = x, xm = x;
        xp[j] += 1e-6;
        xm[j] -= 1e-6;
        const auto fp = rhs_of(xp, w, p);
        const auto fm = rhs_of(xm, w, p);
        for (std::size_t i = 0; i < kStateDim; ++i) {
            const double fd = (fp[i] - fm[i]) / 2e-6;
            CHECK(dxd[i].d[j] == doctest::Approx(fd).epsilon(1e-5).scale(1.0));
        }
    }
}
