#include "diffrx/error.hpp"
#include "diffrx/numcore/adam.hpp"
#include "diffrx/numcore/checkpoint.hpp"
#include "diffrx/numcore/ops.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <sstream>

using namespace diffrx;
using namespace diffrx::numcore;
using testsupport::grad_check;
using testsupport::naive_conv;
using testsupport::random_tensor;
using testsupport::weighted_sum;

namespace {

Tensor vec(std::vector<Scalar> v) {
    const std::size_t n = v.size();
    return Tensor({n}, std::move(v));
}

constexpr int kTrials = 20;
constexpr double kGradTol = 1e-4;

} // namespace

TEST_CASE("elementwise arithmetic") {
    Graph g(false);
    auto a = g.constant(vec({1, 2}));
    auto b = g.constant(vec({3, 4}));
    CHECK(add(a, b).value() == vec({4, 6}));
    CHECK(sub(a, b).value() == vec({-2, -2}));
    CHECK(mul(a, b).value() == vec({3, 8}));
    CHECK(scale(a, 0.0).value() == vec({0, 0}));

    auto s = g.constant(Tensor::scalar(10));
    CHECK(add(a, s).value() == vec({11, 12}));
}

TEST_CASE("per-channel and prefix broadcasting") {
    Graph g(false);
    Tensor x({2, 3, 1, 2}, 1.0);
    auto c = g.constant(vec({1, 2, 3}));
    auto y = add(g.constant(x), c).value();
    CHECK(y[0] == 2.0);
    CHECK(y[2] == 3.0);
    CHECK(y[11] == 4.0);

    auto per_sample = g.constant(Tensor({2}, std::vector<Scalar>{0, 5}));
    auto z = mul(g.constant(x), per_sample).value();
    CHECK(z[0] == 0.0);
    CHECK(z[6] == 5.0);
}

TEST_CASE("shape mismatch names both shapes") {
    Graph g(false);
    auto a = g.constant(Tensor({2, 3}));
    auto b = g.constant(Tensor({4}));
    try {
        add(a, b);
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2,3]") != std::string::npos);
        CHECK(msg.find("[4]") != std::string::npos);
    }
}

TEST_CASE("mul backward matches hand derivative") {
    Graph g;
    auto a = g.leaf(vec({1, 2}), true);
    auto b = g.constant(vec({3, 5}));
    g.backward(mean(mul(a, b)));
    CHECK(a.grad()[0] == doctest::Approx(1.5));
    CHECK(a.grad()[1] == doctest::Approx(2.5));

    const double fd = grad_check([&](Graph& h, const std::vector<Var>& v) { return mean(mul(v[0], h.constant(vec({3, 5})))); },
                                 {vec({1, 2})}, 1e-5);
    CHECK(fd < 1e-8);
}

TEST_CASE("grad of sum(w*x) is x") {
    Parameter w{"w", vec({0.5, -1, 2}), {}};
    Graph g;
    auto x = vec({3, -4, 7});
    g.backward(sum(mul(g.parameter(w), g.constant(x))));
    CHECK(w.grad == x);
}

TEST_CASE("conv2d zero-padding counts") {
    Graph g(false);
    auto x = g.constant(Tensor({1, 1, 3, 3}, 1.0));
    auto w = g.constant(Tensor({1, 1, 3, 3}, 1.0));
    auto b = g.constant(Tensor({1}, 0.0));
    auto y = conv2d(x, w, b).value();
    CHECK(y.shape() == Shape{1, 1, 3, 3});
    CHECK(y[4] == 9.0);
    CHECK(y[0] == 4.0);
    CHECK(y[2] == 4.0);
    CHECK(y[6] == 4.0);
    CHECK(y[8] == 4.0);
    CHECK(y[1] == 6.0);
}

TEST_CASE("conv2d identity kernel") {
    Rng rng(3);
    Tensor x = random_tensor({2, 1, 4, 5}, rng);
    Tensor w({1, 1, 3, 3});
    w[4] = 1.0;
    Graph g(false);
    CHECK(conv2d(g.constant(x), g.constant(w), g.constant(Tensor({1}))).value() == x);
}

TEST_CASE("conv2d matches nested-loop reference") {
    Rng rng(11);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t k = trial % 2 ? 3 : 5;
        Tensor x = random_tensor({1, 2, 5, 5}, rng);
        Tensor w = random_tensor({3, 2, k, k}, rng);
        Tensor b = random_tensor({3}, rng);
        Graph g(false);
        Tensor y = conv2d(g.constant(x), g.constant(w), g.constant(b)).value();
        Tensor ref = naive_conv(x, w, b);
        for (std::size_t i = 0; i < y.numel(); ++i) REQUIRE(std::abs(y[i] - ref[i]) < 1e-6);
    }
    // Non-square spatial extents, including the M = 1 case.
    Tensor x = random_tensor({2, 3, 8, 1}, rng);
    Tensor w = random_tensor({4, 3, 3, 3}, rng);
    Tensor b = random_tensor({4}, rng);
    Graph g(false);
    Tensor y = conv2d(g.constant(x), g.constant(w), g.constant(b)).value();
    Tensor ref = naive_conv(x, w, b);
    for (std::size_t i = 0; i < y.numel(); ++i) CHECK(std::abs(y[i] - ref[i]) < 1e-6);
}

TEST_CASE("conv2d rejects channel mismatch") {
    Graph g(false);
    CHECK_THROWS_AS(conv2d(g.constant(Tensor({1, 2, 3, 3})), g.constant(Tensor({1, 3, 3, 3})),
                           g.constant(Tensor({1}))),
                    DimensionError);
}

TEST_CASE("nonlinearities and groupnorm") {
    Graph g(false);
    CHECK(relu(g.constant(vec({-1, 2}))).value() == vec({0, 2}));
    CHECK(silu(g.constant(vec({0}))).value()[0] == 0.0);
    CHECK(silu(g.constant(vec({1}))).value()[0] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));

    auto x = g.constant(Tensor({2, 4, 3, 2}, 7.5));
    auto y = groupnorm(x, g.constant(Tensor({4}, 1.0)), g.constant(Tensor({4}, 0.0)), 2).value();
    for (auto v : y.data()) CHECK(v == 0.0);

    Rng rng(5);
    auto r = groupnorm(g.constant(random_tensor({1, 4, 3, 3}, rng, -3, 9)), g.constant(Tensor({4}, 1.0)),
                       g.constant(Tensor({4}, 0.0)), 2)
                 .value();
    for (std::size_t grp = 0; grp < 2; ++grp) {
        double m = 0, v = 0;
        for (std::size_t i = 0; i < 18; ++i) m += r[grp * 18 + i];
        m /= 18;
        for (std::size_t i = 0; i < 18; ++i) v += (r[grp * 18 + i] - m) * (r[grp * 18 + i] - m);
        v /= 18;
        CHECK(std::abs(m) < 1e-12);
        CHECK(v == doctest::Approx(1.0).epsilon(1e-3));
    }

    CHECK_THROWS_AS(groupnorm(g.constant(Tensor({1, 6, 2, 2})), g.constant(Tensor({6})), g.constant(Tensor({6})), 4),
                    ConfigError);
}

TEST_CASE("linear") {
    Graph g(false);
    auto x = g.constant(Tensor({1, 2}, std::vector<Scalar>{1, 2}));
    auto w = g.constant(Tensor({3, 2}, std::vector<Scalar>{1, 0, 0, 1, 1, 1}));
    auto b = g.constant(vec({0, 0, 10}));
    CHECK(linear(x, w, b).value() == Tensor({1, 3}, std::vector<Scalar>{1, 2, 13}));
}

TEST_CASE("pool, upsample, concat") {
    Graph g(false);
    Tensor x({1, 1, 4, 2}, std::vector<Scalar>{1, 2, 3, 4, 5, 6, 7, 8});
    auto p = avg_pool2(g.constant(x)).value();
    CHECK(p.shape() == Shape{1, 1, 2, 1});
    CHECK(p[0] == 2.5);
    CHECK(p[1] == 6.5);

    // An extent-1 axis is left alone.
    auto q = avg_pool2(g.constant(Tensor({1, 1, 4, 1}, std::vector<Scalar>{1, 3, 5, 7}))).value();
    CHECK(q == Tensor({1, 1, 2, 1}, std::vector<Scalar>{2, 6}));

    auto u = upsample_nearest(g.constant(q), 4, 1).value();
    CHECK(u == Tensor({1, 1, 4, 1}, std::vector<Scalar>{2, 2, 6, 6}));

    auto c = concat_channels(g.constant(Tensor({1, 1, 2, 1}, 1.0)), g.constant(Tensor({1, 2, 2, 1}, 2.0))).value();
    CHECK(c == Tensor({1, 3, 2, 1}, std::vector<Scalar>{1, 1, 2, 2, 2, 2}));
}

TEST_CASE("gradient check: every layer type") {
    Rng rng(2024);
    for (const auto& [name, worst] : testsupport::layer_gradient_errors(rng, kTrials)) {
        INFO(name << " worst relative error " << worst);
        CHECK(worst < kGradTol);
    }
}

TEST_CASE("backward contract") {
    SUBCASE("non-scalar loss") {
        Graph g;
        auto a = g.leaf(vec({1, 2}), true);
        CHECK_THROWS_AS(g.backward(scale(a, 2.0)), UsageError);
    }
    SUBCASE("second backward") {
        Graph g;
        auto a = g.leaf(vec({1, 2}), true);
        auto l = sum(a);
        g.backward(l);
        CHECK_THROWS_AS(g.backward(l), UsageError);
    }
    SUBCASE("reverse recording order") {
        Graph g;
        auto a = g.leaf(vec({1, 2}), true);
        auto b = silu(a);
        auto c = mul(b, a);
        auto l = sum(c);
        g.backward(l);
        const auto& order = g.backward_order();
        REQUIRE(order.size() == g.tape_size());
        for (std::size_t i = 1; i < order.size(); ++i) CHECK(order[i - 1] > order[i]);
    }
}

TEST_CASE("adam") {
    AdamConfig cfg;
    cfg.lr = 0.1;
    SUBCASE("first step moves by lr") {
        std::vector<Parameter> p{{"x", Tensor::scalar(1.0), Tensor::scalar(1.0)}};
        auto st = AdamState::for_params(p);
        adam_step(p, st, cfg);
        CHECK(p[0].value[0] == doctest::Approx(0.9).epsilon(1e-6));
    }
    SUBCASE("zero gradient") {
        std::vector<Parameter> p{{"x", Tensor::scalar(1.0), Tensor::scalar(0.0)}};
        auto st = AdamState::for_params(p);
        adam_step(p, st, cfg);
        CHECK(p[0].value[0] == 1.0);
    }
    SUBCASE("quadratic decreases") {
        std::vector<Parameter> p{{"x", Tensor::scalar(3.0), {}}};
        auto st = AdamState::for_params(p);
        double prev = 9.0;
        for (int i = 0; i < 2; ++i) {
            Graph g;
            auto x = g.parameter(p[0]);
            g.backward(sum(mul(x, x)));
            adam_step(p, st, cfg);
            const double now = p[0].value[0] * p[0].value[0];
            CHECK(now < prev);
            prev = now;
        }
    }
    SUBCASE("state shape mismatch") {
        std::vector<Parameter> p{{"x", Tensor::scalar(1.0), Tensor::scalar(1.0)}};
        std::vector<Parameter> q{{"y", Tensor({2}), Tensor({2})}};
        auto st = AdamState::for_params(q);
        CHECK_THROWS_AS(adam_step(p, st, cfg), DimensionError);
    }
}

TEST_CASE("determinism") {
    Rng a(9), b(9);
    Tensor x = random_tensor({1, 2, 6, 3}, a);
    Tensor w = random_tensor({2, 2, 3, 3}, a);
    Tensor y = random_tensor({1, 2, 6, 3}, b);
    Tensor v = random_tensor({2, 2, 3, 3}, b);
    Graph g1(false), g2(false);
    auto r1 = silu(conv2d(g1.constant(x), g1.constant(w), g1.constant(Tensor({2})))).value();
    auto r2 = silu(conv2d(g2.constant(y), g2.constant(v), g2.constant(Tensor({2})))).value();
    CHECK(r1 == r2);
}

TEST_CASE("checkpoint round trip") {
    Rng rng(1);
    std::vector<NamedTensor> ts{{"a.w", random_tensor({2, 3, 3, 3}, rng)}, {"b", Tensor::scalar(-0.125)}, {"", Tensor({1})}};
    std::stringstream ss;
    write_checkpoint(ss, ts);
    const std::string bytes = ss.str();
    CHECK(bytes.substr(0, 8) == "DIFFRX01");
    auto back = read_checkpoint(ss);
    REQUIRE(back.size() == ts.size());
    for (std::size_t i = 0; i < ts.size(); ++i) {
        CHECK(back[i].name == ts[i].name);
        CHECK(back[i].tensor == ts[i].tensor);
    }
    REQUIRE(find_tensor(back, "b") != nullptr);
    CHECK(find_tensor(back, "zzz") == nullptr);

    std::stringstream bad("NOTMAGIC");
    CHECK_THROWS_AS(read_checkpoint(bad), FormatError);
    std::stringstream cut(bytes.substr(0, bytes.size() - 3));
    CHECK_THROWS_AS(read_checkpoint(cut), FormatError);
}
