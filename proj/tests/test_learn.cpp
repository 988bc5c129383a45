#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "hysid/adam.hpp"
#include "hysid/autodiff.hpp"
#include "hysid/errors.hpp"
#include "hysid/mlp.hpp"
#include "hysid/random.hpp"

using namespace hysid;

TEST_CASE("network parameter counts") {
    CHECK(Mlp({3, 120, 3}).parameter_count() == 843);
    CHECK(Mlp({6, 20, 120, 30, 3}).parameter_count() == 6383);
    CHECK(Mlp({2, 1}).parameter_count() == 3);

    ParameterLayout layout;
    Mlp({6, 20, 120, 30, 3}).extend_layout(layout, "nn");
    layout.validate();
    CHECK(layout.size() == 6383);
    CHECK(layout.segments().size() == 8);
    CHECK(layout.segment("nn.layer0.weight").size == 120);
    CHECK(layout.segment("nn.layer3.bias").size == 3);
}

TEST_CASE("network forward pass") {
    SUBCASE("all-zero parameters give a zero output") {
        const Mlp net({3, 5, 2});
        const std::vector<double> theta(net.parameter_count(), 0.0);
        const std::vector<double> x{1.0, -2.0, 3.0};
        for (double y : net.forward<double>(theta, x))
            CHECK(y == 0.0);
    }
    SUBCASE("identity network") {
        // Identity weights; positive inputs pass the LeakyReLU unchanged.
        const Mlp net({2, 2, 2});
        std::vector<double> theta(net.parameter_count(), 0.0);
        theta[0] = 1.0; // W1 = I
        theta[3] = 1.0;
        theta[6] = 1.0; // W2 = I (after b1 at 4..5)
        theta[9] = 1.0;
        const std::vector<double> x{0.7, 2.5};
        const auto y = net.forward<double>(theta, x);
        CHECK(y[0] == 0.7);
        CHECK(y[1] == 2.5);
    }
    SUBCASE("LeakyReLU negative slope is 0.01") {
        const Mlp net({1, 1, 1});
        const std::vector<double> theta{1.0, 0.0, 1.0, 0.0};
        CHECK(net.forward<double>(theta, std::vector<double>{-2.0})[0] == doctest::Approx(-0.02).epsilon(1e-15));
        CHECK(net.forward<double>(theta, std::vector<double>{3.0})[0] == 3.0);
    }
    SUBCASE("size mismatches throw") {
        const Mlp net({2, 3, 1});
        const std::vector<double> short_theta(net.parameter_count() - 1, 0.0);
        CHECK_THROWS_AS(net.forward<double>(short_theta, std::vector<double>{1.0, 2.0}), ConfigError);
        const std::vector<double> theta(net.parameter_count(), 0.0);
        CHECK_THROWS_AS(net.forward<double>(theta, std::vector<double>{1.0}), ConfigError);
    }
}

TEST_CASE("network initialization is deterministic") {
    const Mlp net({6, 20, 120, 30, 3});
    const auto a = mlp_init(net, 11);
    const auto b = mlp_init(net, 11);
    const auto c = mlp_init(net, 12);
    CHECK(a == b);
    CHECK(a != c);
    // Glorot bound of the first layer and zero biases.
    const double bound = std::sqrt(6.0 / (6.0 + 20.0));
    for (std::size_t i = 0; i < 120; ++i)
        CHECK(std::abs(a[i]) <= bound);
    for (std::size_t i = 120; i < 140; ++i)
        CHECK(a[i] == 0.0);
}

TEST_CASE("network gradient: tape, duals and finite differences agree") {
    const Mlp net({3, 7, 5, 2});
    auto theta = mlp_init(net, 3);
    CounterRng rng(5);
    for (auto &t : theta)
        t += 0.1 * rng.normal(); // nonzero biases
    const std::vector<double> x{0.3, -0.8, 1.1};
    auto f = [&](auto th) {
        using S = typename decltype(th)::value_type;
        const std::vector<S> in(x.begin(), x.end());
        const auto y = net.forward<S>(th, in);
        return y[0] * y[0] + S(3.0) * y[1];
    };
    const auto rev = grad_reverse(f, theta);
    const auto fwd = grad_forward(f, theta);
    const auto fd = grad_fd([&](std::span<const double> th) { return f(th); }, theta, 1e-6);
    double scale = 0.0;
    for (double g : fd)
        scale = std::max(scale, std::abs(g));
    for (std::size_t i = 0; i < theta.size(); ++i) {
        CHECK(std::abs(rev.gradient[i] - fwd.gradient[i]) <= 1e-12 * scale);
        CHECK(std::abs(rev.gradient[i] - fd[i]) <= 1e-6 * scale);
    }
    CHECK(rev.value == fwd.value);
}

TEST_CASE("affine tape node replays and differentiates") {
    Tape tape;
    ActiveTape scope(tape);
    const std::vector<double> wv{0.5, -1.5, 2.0}, av{1.0, 4.0, -3.0};
    const auto w = tape.inputs(wv);
    const auto a = tape.inputs(av);
    const Var b = tape.input(0.25);
    // Mix a constant into the operands.
    std::vector<Var> a2 = a;
    a2[1] = Var(4.0);
    const Var y = fused_affine(b, w, a2);
    const double expected = 0.25 + 0.5 * 1.0 + -1.5 * 4.0 + 2.0 * -3.0;
    CHECK(y.value() == expected);
    const auto replay = tape.replay();
    CHECK(replay[static_cast<std::size_t>(y.index())] == expected);
    const auto g = tape.gradient(y);
    CHECK(g[static_cast<std::size_t>(w[0].index())] == 1.0);
    CHECK(g[static_cast<std::size_t>(w[1].index())] == 4.0);
    CHECK(g[static_cast<std::size_t>(w[2].index())] == -3.0);
    CHECK(g[static_cast<std::size_t>(a[0].index())] == 0.5);
    CHECK(g[static_cast<std::size_t>(a[1].index())] == 0.0);
    CHECK(g[static_cast<std::size_t>(a[2].index())] == 2.0);
    CHECK(g[static_cast<std::size_t>(b.index())] == 1.0);

    // rewind drops the node and its terms.
    const auto m = tape.mark();
    const auto before = tape.bytes();
    (void)fused_affine(b, w, a);
    CHECK(tape.bytes() > before);
    tape.rewind(m);
    CHECK(tape.bytes() == before);
}

TEST_CASE("affine node without a tape evaluates constants") {
    const std::vector<Var> w{Var(2.0), Var(3.0)}, a{Var(-1.0), Var(0.5)};
    const Var y = fused_affine(Var(1.0), w, a);
    CHECK(y.is_constant());
    CHECK(y.value() == 1.0 - 2.0 + 1.5);
}

TEST_CASE("ADAM update") {
    SUBCASE("zero gradient leaves θ unchanged") {
        AdamState s(3);
        std::vector<double> theta{1.0, -2.0, 3.0};
        const auto before = theta;
        const std::vector<double> g(3, 0.0);
        adam_step(s, theta, g, 0.1);
        CHECK(theta == before);
        CHECK(s.iteration == 1);
    }
    SUBCASE("first step moves by the learning rate against the gradient sign") {
        AdamState s(3);
        std::vector<double> theta{0.0, 0.0, 0.0};
        const std::vector<double> g{2.0, -0.5, 1e-3};
        adam_step(s, theta, g, 0.1);
        CHECK(theta[0] == doctest::Approx(-0.1).epsilon(1e-7));
        CHECK(theta[1] == doctest::Approx(0.1).epsilon(1e-7));
        CHECK(theta[2] == doctest::Approx(-0.1).epsilon(1e-4));
    }
    SUBCASE("moment decay rates") {
        const AdamState s;
        CHECK(s.beta1 == 0.80);
        CHECK(s.beta2 == 0.92);
    }
    SUBCASE("minimizes a quadratic") {
        std::vector<double> theta{3.0, -1.0, 0.5, 2.0};
        AdamState s(theta.size());
        for (std::size_t it = 0; it < 500; ++it) {
            std::vector<double> g(theta.size());
            for (std::size_t i = 0; i < theta.size(); ++i)
                g[i] = 2.0 * theta[i];
            adam_step(s, theta, g, lr_schedule(it));
        }
        const double norm2 = std::inner_product(theta.begin(), theta.end(), theta.begin(), 0.0);
        CHECK(norm2 < 1e-3);
    }
    SUBCASE("coordinate permutation commutes with the update") {
        const std::vector<double> t0{0.4, -1.2, 2.2, 0.1, -0.7};
        const std::vector<std::size_t> perm{3, 0, 4, 2, 1};
        std::vector<double> a = t0, b(t0.size());
        for (std::size_t i = 0; i < perm.size(); ++i)
            b[i] = t0[perm[i]];
        AdamState sa(a.size()), sb(b.size());
        for (int it = 0; it < 20; ++it) {
            std::vector<double> ga(a.size()), gb(b.size());
            for (std::size_t i = 0; i < a.size(); ++i)
                ga[i] = std::sin(a[i]) + a[i] * a[i];
            for (std::size_t i = 0; i < b.size(); ++i)
                gb[i] = std::sin(b[i]) + b[i] * b[i];
            adam_step(sa, a, ga, 0.05);
            adam_step(sb, b, gb, 0.05);
        }
        for (std::size_t i = 0; i < perm.size(); ++i)
            CHECK(b[i] == a[perm[i]]);
    }
    SUBCASE("per-coordinate step scales") {
        AdamState s(2);
        std::vector<double> theta{0.0, 0.0};
        const std::vector<double> g{1.0, 1.0}, scale{1.0, 0.01};
        adam_step(s, theta, g, 0.1, nullptr, scale);
        CHECK(theta[1] == doctest::Approx(0.01 * theta[0]).epsilon(1e-15));
    }
    SUBCASE("non-finite gradient names the segment") {
        ParameterLayout layout;
        layout.add("k", 2).add("w", 2);
        AdamState s(4);
        std::vector<double> theta(4, 0.0);
        const std::vector<double> g{0.0, 0.0, 0.0, std::nan("")};
        try {
            adam_step(s, theta, g, 0.1, &layout);
            FAIL("expected OptimizerError");
        } catch (const OptimizerError &e) {
            CHECK(std::string(e.what()).find("segment 'w'") != std::string::npos);
        }
        CHECK(theta == std::vector<double>(4, 0.0));
    }
    SUBCASE("length mismatch") {
        AdamState s(2);
        std::vector<double> theta(3, 0.0);
        const std::vector<double> g(3, 0.0);
        CHECK_THROWS_AS(adam_step(s, theta, g, 0.1), ConfigError);
    }
}

TEST_CASE("learning-rate schedule") {
    CHECK(lr_schedule(0) == 0.1);
    CHECK(lr_schedule(99) == 0.1);
    CHECK(lr_schedule(100) == 0.01);
    CHECK(lr_schedule(399) == 0.01);
    CHECK(lr_schedule(400) == 0.001);
    CHECK(lr_schedule(900) == 0.0001);
    CHECK(lr_schedule(100000) == 0.0001);
    for (std::size_t i = 1; i < 2000; ++i) {
        CHECK(lr_schedule(i) <= lr_schedule(i - 1));
        CHECK(lr_schedule(i) >= 0.0001);
    }
}

TEST_CASE("checkpoint round trip is exact") {
    const Mlp net({3, 4, 3});
    Checkpoint c;
    c.theta.layout.add("w", 3);
    net.extend_layout(c.theta.layout, "nn");
    c.theta.values = {0.1, 1.0 / 3.0, -2.5e-17};
    const auto nn = mlp_init(net, 9);
    c.theta.values.insert(c.theta.values.end(), nn.begin(), nn.end());
    c.adam = AdamState(c.theta.values.size());
    std::vector<double> g(c.theta.values.size());
    for (std::size_t i = 0; i < g.size(); ++i)
        g[i] = std::cos(static_cast<double>(i));
    adam_step(c.adam, c.theta.values, g, 0.1);
    c.meta["note"] = "round trip";

    const auto path = (std::filesystem::temp_directory_path() / "hysid_test_checkpoint.json").string();
    save_checkpoint(path, c);
    const Checkpoint r = load_checkpoint(path);
    std::filesystem::remove(path);
    CHECK(r.theta.layout == c.theta.layout);
    CHECK(r.theta.values == c.theta.values);
    CHECK(r.adam.m == c.adam.m);
    CHECK(r.adam.v == c.adam.v);
    CHECK(r.adam.iteration == c.adam.iteration);
    CHECK(r.meta == c.meta);

    CHECK_THROWS_AS(load_checkpoint(path), Error);
}

TEST_CASE("pack and unpack are inverse") {
    ParameterLayout layout;
    layout.add("k", 3).add("w", 3).add("I", 3);
    std::vector<double> theta(9);
    std::iota(theta.begin(), theta.end(), 0.5);
    CHECK(pack(layout, unpack(layout, theta)) == theta);
    auto named = unpack(layout, theta);
    named["w"].pop_back();
    CHECK_THROWS_AS(pack(layout, named), ConfigError);
}
