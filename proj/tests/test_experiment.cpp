#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "hysid/errors.hpp"
#include "hysid/experiment.hpp"
#include "hysid/random.hpp"

using namespace hysid;
using namespace hysid::experiment;
namespace fs = std::filesystem;

namespace {

Profile tiny_profile(double noise = 0.03) {
    Profile p = desk_profile();
    p.name = "tiny";
    p.train_trajectories = 2;
    p.test_trajectories = 1;
    p.horizon = 1.0;
    p.noise_std = noise;
    return p;
}

const Dataset &tiny() {
    static const Dataset d = generate_dataset(tiny_profile(), 21);
    return d;
}

const Dataset &tiny_clean() {
    static const Dataset d = generate_dataset(tiny_profile(0.0), 21);
    return d;
}

fs::path scratch_dir(const std::string &name) {
    const auto p = fs::temp_directory_path() / ("hysid_test_" + name);
    fs::remove_all(p);
    return p;
}

std::vector<double> perturbed(const std::vector<double> &theta, std::uint64_t seed, double rel) {
    CounterRng rng(seed);
    auto out = theta;
    for (auto &t : out)
        t *= 1.0 + rel * rng.uniform(-1.0, 1.0);
    return out;
}

double norm(const std::vector<double> &v) { return std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0)); }

} // namespace

TEST_CASE("profiles") {
    const Profile desk = desk_profile();
    CHECK(desk.samples() == 101);
    CHECK(desk.train_trajectories == 5);
    const Profile full = paper_profile();
    CHECK(full.samples() == 201);
    CHECK(full.train_trajectories == 15);
    CHECK(full.test_trajectories == 10);
    CHECK(full.restarts == 10);
    CHECK(profile_by_name("desk").samples() == 101);
    CHECK_THROWS_AS(profile_by_name("huge"), ConfigError);

    const Profile back = profile_from_json(profile_to_json(full), desk);
    CHECK(profile_to_json(back) == profile_to_json(full));
    CHECK(profile_from_json(nlohmann::json{{"horizon", 2.0}}, desk).samples() == 41);
    CHECK_THROWS_AS(profile_from_json(nlohmann::json{{"horizn", 2.0}}, desk), ConfigError);
}

TEST_CASE("dataset generation is deterministic and shaped by the profile") {
    const Dataset &a = tiny();
    const Dataset b = generate_dataset(tiny_profile(), 21);
    const Dataset c = generate_dataset(tiny_profile(), 22);
    REQUIRE(a.train.size() == 2);
    REQUIRE(a.test.size() == 1);
    for (std::size_t i = 0; i < a.train.size(); ++i) {
        CHECK(a.train[i].y == b.train[i].y);
        CHECK(a.train[i].x0 == b.train[i].x0);
        CHECK(a.train[i].excitation->r == b.train[i].excitation->r);
        CHECK(a.train[i].y != c.train[i].y);
        CHECK(a.train[i].y.size() == 21);
        CHECK(a.train[i].x_true.size() == 21);
        CHECK(a.train[i].excitation->rn.size() == 21);
    }
    // Test trajectories are noise free, training ones are not.
    for (std::size_t k = 0; k < a.samples(); ++k) {
        CHECK(a.test[0].y[k] == a.test[0].p_true(k));
    }
    double noise2 = 0.0;
    for (const auto &tr : a.train)
        for (std::size_t k = 0; k < a.samples(); ++k)
            for (std::size_t j = 0; j < 3; ++j)
                noise2 += std::pow(tr.y[k][j] - tr.p_true(k)[j], 2);
    const double noise_rms = std::sqrt(noise2 / (3.0 * 2.0 * 21.0));
    CHECK(noise_rms > 0.02);
    CHECK(noise_rms < 0.04);
}

TEST_CASE("dataset save and load round trip exactly") {
    const Dataset &a = tiny();
    const auto dir = scratch_dir("dataset");
    save_dataset(a, dir.string());
    CHECK(fs::exists(dir / "meta.json"));
    CHECK(fs::exists(dir / "train_000.csv"));
    CHECK(fs::exists(dir / "test_000.csv"));
    const Dataset b = load_dataset(dir.string());
    CHECK(b.seed == a.seed);
    CHECK(profile_to_json(b.profile) == profile_to_json(a.profile));
    CHECK(b.controller.gain == a.controller.gain);
    CHECK(b.controller.omega0 == a.controller.omega0);
    REQUIRE(b.train.size() == a.train.size());
    for (std::size_t i = 0; i < a.train.size(); ++i) {
        CHECK(b.train[i].x0 == a.train[i].x0);
        CHECK(b.train[i].y == a.train[i].y);
        CHECK(b.train[i].x_true == a.train[i].x_true);
        CHECK(b.train[i].excitation->r == a.train[i].excitation->r);
        CHECK(b.train[i].excitation->rn == a.train[i].excitation->rn);
    }
    const Parameterization m1(UncertaintyModel::Physical);
    const auto theta = m1.initial_guess(1);
    CHECK(loss(m1, theta, a) == loss(m1, theta, b));

    fs::remove(dir / "train_001.csv");
    CHECK_THROWS_AS(load_dataset(dir.string()), Error);
    fs::remove_all(dir);
    CHECK_THROWS_AS(load_dataset(dir.string()), Error);
}

TEST_CASE("prediction at the true parameters") {
    const Dataset &d = tiny();
    const Parameterization m1(UncertaintyModel::Physical);
    const auto truth = m1.truth(d.params);
    // Noise-free test data are reproduced to solver accuracy.
    const double rmse_test = rmse_from_loss(loss(m1, truth, d, {Split::Test, Target::Measured}));
    CHECK(rmse_test <= 1e-5);
    // Noisy loss at truth is about the noise variance per coordinate.
    const double noisy = loss(m1, truth, d);
    const double clean = loss(m1, truth, d, {Split::Train, Target::True});
    CHECK(clean < noisy);
    CHECK(rmse_from_loss(noisy) > 0.02);
    CHECK(rmse_from_loss(noisy) < 0.04);
    // A wrong drag coefficient fits worse.
    auto off = truth;
    for (std::size_t c = 0; c < 3; ++c)
        off[m1.layout().segment("k").offset + c] *= 1.1;
    CHECK(loss(m1, off, d, {Split::Train, Target::True}) > clean);
}

TEST_CASE("loss identities") {
    const Dataset &d = tiny_clean();
    const Parameterization m1(UncertaintyModel::Physical);
    const auto truth = m1.truth(d.params);
    CHECK(loss(m1, truth, d) == 0.0);

    // A constant offset δ on every coordinate gives L = 3δ² and RMSE = δ.
    Dataset shifted = d;
    const double delta = 0.01;
    for (auto &tr : shifted.train)
        for (auto &y : tr.y)
            for (auto &v : y)
                v -= delta;
    const double l = loss(m1, truth, shifted);
    CHECK(l == doctest::Approx(3.0 * delta * delta).epsilon(1e-9));
    CHECK(rmse_from_loss(l) == doctest::Approx(delta).epsilon(1e-9));

    // Trajectory-parallel evaluation reduces in the same order.
    const auto theta = m1.initial_guess(4);
    CHECK(loss(m1, theta, tiny(), {Split::Train, Target::Measured, 1}) ==
          loss(m1, theta, tiny(), {Split::Train, Target::Measured, 3}));
}

TEST_CASE("gradient vanishes at the truth on noise-free data") {
    const Dataset &d = tiny_clean();
    const Parameterization m1(UncertaintyModel::Physical);
    const auto truth = m1.truth(d.params);
    const auto g0 = loss_and_gradient(m1, truth, d);
    const auto g1 = loss_and_gradient(m1, perturbed(truth, 3, 0.1), d);
    CHECK(norm(g0.gradient) <= 1e-6 * norm(g1.gradient));
}

TEST_CASE("model-1 gradient matches finite differences at random parameters") {
    const Dataset &d = tiny();
    const Parameterization m1(UncertaintyModel::Physical);
    const auto truth = m1.truth(d.params);
    for (std::uint64_t s : {1, 2, 3}) {
        CAPTURE(s);
        const auto theta = perturbed(truth, 100 + s, 0.3);
        const auto g = gradient_check(m1, theta, d);
        CHECK(g.non_smooth == 0);
        CHECK(g.max_rel <= 1e-4);
        // Loss reported with the gradient matches the plain loss.
        CHECK(loss_and_gradient(m1, theta, d).loss == loss(m1, theta, d));
    }
}

TEST_CASE("network-model gradients match finite differences on a fixed step grid") {
    Profile p = tiny_profile();
    p.fixed_step = p.period / 4.0;
    const Dataset d = generate_dataset(p, 21);
    for (auto kind : {UncertaintyModel::RelativeAir, UncertaintyModel::BlackBox}) {
        const Parameterization m(kind);
        const auto theta = m.initial_guess(7);
        std::vector<std::size_t> coords;
        for (std::size_t i = 0; i < m.size(); i += m.size() / 12)
            coords.push_back(i);
        const auto g = gradient_check(m, theta, d, 1e-5, coords);
        CAPTURE(static_cast<int>(kind));
        CHECK(g.non_smooth < coords.size());
        CHECK(g.max_rel <= 1e-4);
        CHECK(g.eps_used.size() == coords.size());
    }
}

TEST_CASE("drag relative error identities") {
    std::vector<std::array<double, 3>> d{{0.1, -0.2, 0.05}, {0.3, 0.0, -0.4}, {-0.01, 0.02, 0.03}};
    std::vector<std::array<double, 3>> zero(d.size(), {0.0, 0.0, 0.0});
    auto scaled = d;
    for (auto &s : scaled)
        for (auto &v : s)
            v *= 1.1;
    CHECK(drag_relative_error(d, d) == 0.0);
    CHECK(drag_relative_error(zero, d) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(drag_relative_error(scaled, d) == doctest::Approx(0.1).epsilon(1e-12));

    // Sample order does not matter.
    auto est = scaled;
    est[0][1] += 0.05;
    const double e = drag_relative_error(est, d);
    std::swap(est[0], est[2]);
    auto d2 = d;
    std::swap(d2[0], d2[2]);
    CHECK(drag_relative_error(est, d2) == doctest::Approx(e).epsilon(1e-15));

    CHECK_THROWS_AS(drag_relative_error(d, zero), DataError);
    CHECK_THROWS_AS(drag_relative_error(std::span(d).first(2), d), ConfigError);

    // Physical model at the truth reproduces the true drag on the data.
    const Parameterization m1(UncertaintyModel::Physical);
    const auto truth = m1.truth(tiny().params);
    CHECK(drag_relative_error(m1, truth, tiny(), Split::Train) <= 1e-15);
    const auto theta0 = m1.initial_guess(1);
    CHECK(drag_relative_error(m1, theta0, tiny(), Split::Test) > 0.01);
}

TEST_CASE("metrics at the truth") {
    const Parameterization m1(UncertaintyModel::Physical);
    const auto truth = m1.truth(tiny().params);
    const Metrics m = evaluate(m1, truth, tiny());
    CHECK(m.rmse_test <= 1e-5);
    CHECK(m.rmse_clean_train <= 1e-5);
    CHECK(m.drag_train <= 1e-15);
    for (double v : m.inertia_rel)
        CHECK(v == 0.0);
    REQUIRE(m.drag_coeff_rel);
    REQUIRE(m.wind_rel);
    for (double v : *m.drag_coeff_rel)
        CHECK(v == 0.0);
    const Metrics back = metrics_from_json(metrics_to_json(m));
    CHECK(metrics_to_json(back) == metrics_to_json(m));

    const Parameterization m3(UncertaintyModel::BlackBox);
    const Metrics m3m = evaluate(m3, m3.initial_guess(2), tiny());
    CHECK_FALSE(m3m.drag_coeff_rel);
    CHECK_FALSE(m3m.wind_rel);
}

TEST_CASE("step scales per segment") {
    const Parameterization m1(UncertaintyModel::Physical);
    const auto s1 = step_scales(m1);
    REQUIRE(s1.size() == 9);
    CHECK(s1[m1.layout().segment("k").offset] == 0.01);
    CHECK(s1[m1.layout().segment("w").offset] == 1.0);
    const Parameterization m2(UncertaintyModel::RelativeAir);
    const auto s2 = step_scales(m2);
    CHECK(s2.size() == 849);
    CHECK(s2.back() == 0.1);
}

TEST_CASE("short training run") {
    const auto dir = scratch_dir("train");
    TrainConfig cfg;
    cfg.kind = UncertaintyModel::Physical;
    cfg.restarts = 2;
    cfg.iterations = 8;
    cfg.seed = 5;
    cfg.checkpoint_dir = dir.string();
    std::size_t calls = 0;
    cfg.progress = [&](std::size_t, std::size_t, double) { ++calls; };
    const RunResult run = train(tiny(), cfg);
    REQUIRE(run.restarts.size() == 2);
    CHECK(calls == 2 * 9);
    for (const auto &r : run.restarts) {
        CHECK_FALSE(r.failed);
        CHECK(r.history.size() == 9);
        CHECK(r.best_loss <= r.history.front());
        CHECK(r.best_loss == r.history[r.best_iteration]);
        CHECK(r.best_loss == loss(Parameterization(cfg.kind), r.theta, tiny()));
        REQUIRE(r.metrics);
    }
    CHECK(run.restarts[0].seed != run.restarts[1].seed);
    CHECK(restart_seed(5, 0) == run.restarts[0].seed);

    const auto ck = load_checkpoint((dir / "model1_restart1.json").string());
    CHECK(ck.theta.values == run.restarts[1].theta);
    CHECK(ck.meta["best_loss"].get<double>() == run.restarts[1].best_loss);

    const RunResult back = run_from_json(run_to_json(run));
    CHECK(run_to_json(back) == run_to_json(run));

    // Same seed, same result.
    cfg.checkpoint_dir.clear();
    cfg.progress = nullptr;
    const RunResult again = train(tiny(), cfg);
    CHECK(again.restarts[1].theta == run.restarts[1].theta);

    // Report files.
    const auto out = dir / "report";
    write_report({run}, tiny(), out.string());
    CHECK(fs::exists(out / "table3.csv"));
    CHECK(fs::exists(out / "drag_curves_model1_axis3.csv"));
    CHECK(fs::exists(out / "trajectory_example.csv"));
    fs::remove_all(dir);

    cfg.iterations = 0;
    CHECK_THROWS_AS(train(tiny(), cfg), ConfigError);
}

TEST_CASE("summary table and csv round trip") {
    RunResult run;
    run.kind = UncertaintyModel::RelativeAir;
    for (int r = 0; r < 3; ++r) {
        RestartResult rr;
        rr.index = static_cast<std::size_t>(r);
        Metrics m;
        m.rmse_noisy_train = 0.03 + 0.001 * r;
        m.rmse_test = 0.1 / (r + 1);
        m.inertia_rel = {0.1 * r, 1.0 / 3.0, 2.0};
        rr.metrics = m;
        run.restarts.push_back(rr);
    }
    RestartResult failed;
    failed.failed = true;
    run.restarts.push_back(failed);

    const Table t = summarize({run});
    REQUIRE(t.columns == std::vector<std::string>{"model2"});
    REQUIRE(t.rows.size() == 8);
    CHECK(t.rows.front() == "rmse_noisy_train");
    const auto &col = t.values.at("model2");
    CHECK(col[0].min == 0.03);
    CHECK(col[0].max == 0.032);
    CHECK(col[0].mean == doctest::Approx(0.031).epsilon(1e-14));
    CHECK(col[2].min == doctest::Approx(0.1 / 3.0).epsilon(1e-15));

    const auto path = (fs::temp_directory_path() / "hysid_test_table.csv").string();
    write_table_csv(t, path);
    const Table back = read_table_csv(path);
    fs::remove(path);
    CHECK(back.rows == t.rows);
    CHECK(back.columns == t.columns);
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        CHECK(back.values.at("model2")[i].min == col[i].min);
        CHECK(back.values.at("model2")[i].mean == col[i].mean);
        CHECK(back.values.at("model2")[i].max == col[i].max);
    }
}

TEST_CASE("drag curves") {
    const PhysParams p;
    const Parameterization m1(UncertaintyModel::Physical);
    const auto c = drag_curve(m1, m1.truth(p), p, 2, 2.0, 5);
    REQUIRE(c.v.size() == 5);
    CHECK(c.v.front() == -2.0);
    CHECK(c.v.back() == 2.0);
    CHECK(c.d_hat == c.d_true);
    CHECK(c.d_true[2] == 0.0);
    CHECK(c.d_true[0] == -c.d_true[4]);
    CHECK_THROWS_AS(drag_curve(m1, m1.truth(p), p, 3), ConfigError);
}
