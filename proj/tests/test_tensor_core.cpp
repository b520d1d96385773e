#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "test_util.hpp"

#include "cfw/adam.hpp"
#include "cfw/gradcheck.hpp"
#include "cfw/ops.hpp"

using namespace cfw;

TEST_CASE("tensor storage matches its shape") {
    auto t = TensorF::zeros({2, 3, 4, 5});
    CHECK(t.numel() == 120);
    CHECK(t.rank() == 4);
    CHECK_FALSE(t.has_grad());
    CHECK_ERROR(TensorF::from_data({2, 2}, std::vector<float>(3)), ErrorCode::ShapeMismatch);
}

TEST_CASE("backward through a diamond visits each node once") {
    auto a = TensorD::from_data({2}, {1.0, 2.0}, true);
    auto b = add(a, a);
    auto c = add(b, scale(b, 3.0));
    sum(c).backward();
    // c = 4b = 8a
    CHECK(a.grad()[0] == 8.0);
    CHECK(a.grad()[1] == 8.0);
}

TEST_CASE("sum loss over linear chain has unit-slope gradients") {
    std::mt19937_64 rng(1);
    auto x = TensorD::from_data({1, 2, 2, 2}, oracle::random_values(rng, 8), true);
    auto y = concat_channels<double>({x});
    sum(y).backward();
    for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("no-grad guard records nothing") {
    auto a = TensorD::from_data({1}, {2.0}, true);
    NoGradGuard guard;
    auto b = scale(a, 2.0);
    CHECK_FALSE(b.requires_grad());
    CHECK(b.node()->inputs.empty());
}

TEST_CASE("backward leaves gradients only on leaves") {
    auto a = TensorD::from_data({1}, {2.0}, true);
    auto b = scale(a, 3.0);
    auto loss = sum(b);
    loss.backward();
    CHECK(a.grad()[0] == 3.0);
    CHECK_FALSE(b.has_grad());
}

TEST_SUITE("conv3d") {
    TEST_CASE("zero input gives the bias") {
        auto x = TensorF::zeros({2, 3, 3, 3});
        auto w = TensorF::full({4, 2, 3, 3, 3}, 0.7f);
        auto b = TensorF::from_data({4}, {1.f, -2.f, 3.f, 0.5f});
        auto y = conv3d(x, w, b, 1);
        CHECK(y.shape() == Shape{4, 3, 3, 3});
        for (std::int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == b.data()[i / 27]);
    }

    TEST_CASE("stride 2 halves and rounds up") {
        auto w = TensorF::zeros({1, 1, 3, 3, 3});
        auto b = TensorF::zeros({1});
        CHECK(conv3d(TensorF::zeros({1, 4, 4, 4}), w, b, 2).shape() == Shape{1, 2, 2, 2});
        CHECK(conv3d(TensorF::zeros({1, 5, 3, 1}), w, b, 2).shape() == Shape{1, 3, 2, 1});
    }

    TEST_CASE("center-tap kernel is the identity") {
        std::mt19937_64 rng(2);
        auto x = TensorD::from_data({1, 4, 5, 3}, oracle::random_values(rng, 60));
        std::vector<double> w(27, 0.0);
        w[13] = 1.0;
        auto y = conv3d(x, TensorD::from_data({1, 1, 3, 3, 3}, w), TensorD::zeros({1}), 1);
        CHECK(to_vec(y) == to_vec(x));
    }

    TEST_CASE("matches the seven-loop oracle") {
        std::mt19937_64 rng(3);
        for (int trial = 0; trial < 20; ++trial) {
            std::uniform_int_distribution<int> dim(1, 5);
            const oracle::Dims di{1 + trial % 3, dim(rng), dim(rng), dim(rng)};
            const int cout = 1 + trial % 4;
            const int stride = 1 + trial % 2;
            const auto x = oracle::random_values(rng, di.size());
            const auto w = oracle::random_values(rng, cout * di.c * 27);
            const auto b = oracle::random_values(rng, cout);
            const auto y = conv3d(TensorD::from_data({di.c, di.d, di.h, di.w}, x),
                                  TensorD::from_data({cout, di.c, 3, 3, 3}, w), TensorD::from_data({cout}, b), stride);
            CHECK(oracle::max_rel_diff(oracle::conv3d(x, di, w, b, cout, stride), y.data()) < 1e-12);
        }
    }

    TEST_CASE("float path agrees with the oracle") {
        std::mt19937_64 rng(4);
        const oracle::Dims di{2, 5, 5, 5};
        const auto x = oracle::random_values(rng, di.size());
        const auto w = oracle::random_values(rng, 3 * 2 * 27);
        const auto b = oracle::random_values(rng, 3);
        auto f = [](const std::vector<double> &v) { return std::vector<float>(v.begin(), v.end()); };
        const auto y = conv3d(TensorF::from_data({2, 5, 5, 5}, f(x)), TensorF::from_data({3, 2, 3, 3, 3}, f(w)),
                              TensorF::from_data({3}, f(b)), 1);
        const auto ref = oracle::conv3d(x, di, w, b, 3, 1);
        for (std::size_t i = 0; i < ref.size(); ++i) CHECK(y.data()[i] == doctest::Approx(ref[i]).epsilon(1e-5));
    }

    TEST_CASE("gradients pass finite differences") {
        std::mt19937_64 rng(5);
        auto x = TensorD::from_data({2, 4, 4, 4}, oracle::random_values(rng, 128));
        auto w = TensorD::from_data({2, 2, 3, 3, 3}, oracle::random_values(rng, 108));
        auto b = TensorD::from_data({2}, oracle::random_values(rng, 2));
        CHECK(gradcheck([&](const TensorD &in) { return conv3d(in, w, b, 1); }, x, 1e-3).max_rel_error < 1e-5);
        CHECK(gradcheck([&](const TensorD &in) { return conv3d(x, in, b, 2); }, w, 1e-3).max_rel_error < 1e-5);
    }

    TEST_CASE("rejects bad shapes and strides") {
        auto x = TensorF::zeros({2, 4, 4, 4});
        auto b = TensorF::zeros({1});
        CHECK_ERROR(conv3d(x, TensorF::zeros({1, 3, 3, 3, 3}), b, 1), ErrorCode::ShapeMismatch);
        CHECK_ERROR(conv3d(x, TensorF::zeros({1, 2, 3, 3, 3}), b, 3), ErrorCode::InvalidArgument);
        CHECK_ERROR(conv3d(x, TensorF::zeros({1, 2, 3, 3, 3}), TensorF::zeros({2}), 1), ErrorCode::ShapeMismatch);
    }
}

TEST_SUITE("leaky_relu") {
    TEST_CASE("definition") {
        auto y = leaky_relu(TensorD::from_data({3}, {-2.0, 0.0, 3.0}), 0.1);
        CHECK(y.data()[0] == doctest::Approx(-0.2));
        CHECK(y.data()[1] == 0.0);
        CHECK(y.data()[2] == 3.0);
    }

    TEST_CASE("slope one is the identity") {
        std::mt19937_64 rng(6);
        auto x = TensorD::from_data({10}, oracle::random_values(rng, 10));
        CHECK(to_vec(leaky_relu(x, 1.0)) == to_vec(x));
    }

    TEST_CASE("subgradient at zero takes the positive branch") {
        auto x = TensorD::from_data({1}, {0.0}, true);
        sum(leaky_relu(x, 0.1)).backward();
        CHECK(x.grad()[0] == 1.0);
    }

    TEST_CASE("finite differences away from the kink") {
        std::mt19937_64 rng(7);
        std::vector<double> v = oracle::random_values(rng, 50, 0.1, 1.0);
        for (std::size_t i = 0; i < v.size(); i += 2) v[i] = -v[i];
        auto r = gradcheck([](const TensorD &in) { return leaky_relu(in, 0.1); }, TensorD::from_data({50}, v), 1e-6);
        CHECK(r.max_rel_error < 1e-6);
    }
}

TEST_SUITE("avg_downsample2") {
    TEST_CASE("block of 0..7 averages to 3.5") {
        auto y = avg_downsample2(TensorD::from_data({1, 2, 2, 2}, {0, 1, 2, 3, 4, 5, 6, 7}));
        CHECK(y.shape() == Shape{1, 1, 1, 1});
        CHECK(y.item() == 3.5);
    }

    TEST_CASE("constants stay constant") {
        auto y = avg_downsample2(TensorF::full({2, 4, 6, 2}, 0.25f));
        CHECK(y.shape() == Shape{2, 2, 3, 1});
        for (float v : y.data()) CHECK(v == 0.25f);
    }

    TEST_CASE("matches the block-mean oracle") {
        std::mt19937_64 rng(8);
        const oracle::Dims di{2, 4, 4, 4};
        const auto x = oracle::random_values(rng, di.size());
        auto y = avg_downsample2(TensorD::from_data({2, 4, 4, 4}, x));
        CHECK(oracle::max_rel_diff(oracle::avg_downsample2(x, di), y.data()) < 1e-15);
    }

    TEST_CASE("odd dims are rejected") {
        CHECK_ERROR(avg_downsample2(TensorF::zeros({1, 4, 3, 4})), ErrorCode::ShapeMismatch);
    }
}

TEST_SUITE("concat_channels") {
    TEST_CASE("channel counts add up") {
        auto y = concat_channels<float>({TensorF::zeros({3, 2, 2, 2}), TensorF::zeros({27, 2, 2, 2}),
                                         TensorF::zeros({3, 2, 2, 2}), TensorF::zeros({3, 2, 2, 2})});
        CHECK(y.dim(0) == 36);
    }

    TEST_CASE("slices appear in order") {
        auto y = concat_channels<float>({TensorF::full({1, 1, 2, 1}, 1.f), TensorF::full({1, 1, 2, 1}, 2.f)});
        CHECK(std::vector<float>(y.data().begin(), y.data().end()) == std::vector<float>{1, 1, 2, 2});
    }

    TEST_CASE("gradient routes to each slice") {
        auto a = TensorD::zeros({1, 1, 1, 2}, true);
        auto b = TensorD::zeros({2, 1, 1, 2}, true);
        auto y = concat_channels<double>({a, b});
        dot(y, TensorD::from_data({3, 1, 1, 2}, {1, 2, 3, 4, 5, 6})).backward();
        CHECK(std::vector<double>(a.grad().begin(), a.grad().end()) == std::vector<double>{1, 2});
        CHECK(std::vector<double>(b.grad().begin(), b.grad().end()) == std::vector<double>{3, 4, 5, 6});
    }

    TEST_CASE("spatial mismatch is rejected") {
        CHECK_ERROR(concat_channels<float>({TensorF::zeros({1, 2, 2, 2}), TensorF::zeros({1, 2, 2, 3})}),
                    ErrorCode::ShapeMismatch);
    }
}

TEST_SUITE("adam") {
    TEST_CASE("zero gradients leave parameters unchanged") {
        auto x = TensorD::from_data({3}, {1.0, -2.0, 0.5}, true);
        ParameterList<double> params{{"x", x}};
        AdamState<double> state;
        for (int i = 0; i < 3; ++i) {
            x.grad_buffer();
            state.step(params);
        }
        CHECK(to_vec(x) == std::vector<double>{1.0, -2.0, 0.5});
        CHECK(state.step_count() == 3);
    }

    TEST_CASE("constant gradient follows the scalar recurrence") {
        const double g = 0.37, lr = 1e-2, b1 = 0.9, b2 = 0.999, eps = 1e-8;
        auto x = TensorD::from_data({1}, {1.5}, true);
        ParameterList<double> params{{"x", x}};
        AdamState<double> state({lr, b1, b2, eps});
        double ref = 1.5, m = 0, v = 0;
        for (int t = 1; t <= 25; ++t) {
            x.grad_buffer()[0] = g;
            adam_step(params, state);
            m = b1 * m + (1 - b1) * g;
            v = b2 * v + (1 - b2) * g * g;
            ref -= lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
            CHECK(std::abs(x.data()[0] - ref) < 1e-12);
            CHECK_FALSE(x.has_grad());
        }
        CHECK(state.first_moments()[0].size() == 1);
        CHECK(state.second_moments()[0].size() == 1);
    }

    TEST_CASE("minimizes a quadratic") {
        auto x = TensorD::from_data({1}, {0.0}, true);
        ParameterList<double> params{{"x", x}};
        AdamState<double> state({0.1, 0.9, 0.999, 1e-8});
        for (int i = 0; i < 500; ++i) {
            auto d = add(x, TensorD::from_data({1}, {-3.0}));
            dot(d, d).backward();
            state.step(params);
        }
        CHECK(std::abs(x.data()[0] - 3.0) < 1e-2);
    }

    TEST_CASE("a missing gradient names the parameter") {
        ParameterList<float> params{{"encoder.level1.conv1.weight", TensorF::zeros({2}, true)}};
        AdamState<float> state;
        try {
            state.step(params);
            FAIL("expected an error");
        } catch (const Error &e) {
            CHECK(e.code() == ErrorCode::MissingGradient);
            CHECK(std::string(e.what()).find("encoder.level1.conv1.weight") != std::string::npos);
        }
    }
}

TEST_SUITE("gradcheck") {
    TEST_CASE("exact for a linear op") {
        std::mt19937_64 rng(9);
        auto r = gradcheck([](const TensorD &in) { return scale(in, 2.0); },
                           TensorD::from_data({6}, oracle::random_values(rng, 6)), 1e-3);
        CHECK(r.max_rel_error < 1e-10);
    }

    TEST_CASE("catches a wrong backward rule") {
        auto bad = [](const TensorD &in) {
            auto n = in.node();
            std::vector<double> out(in.data().begin(), in.data().end());
            for (auto &v : out) v *= 2.0;
            return TensorD::make_result(in.shape(), std::move(out), {in}, [n](std::span<const double> g) {
                std::vector<double> wrong(g.begin(), g.end());  // should be 2 * g
                accumulate_grad<double>(n, wrong);
            });
        };
        auto r = gradcheck(bad, TensorD::full({4}, 1.0), 1e-3);
        CHECK(r.max_rel_error == doctest::Approx(0.5));
    }

    TEST_CASE("a step across a kink is retried with a shorter one") {
        TensorD x = TensorD::from_data({3}, {5e-5, 0.7, -0.4});
        auto loss = [&] { return sum(leaky_relu(x, 0.1)); };
        GradcheckOptions o;
        o.perturbation = 1e-4;
        CHECK(gradcheck_scalar(loss, x, o).max_rel_error > 0.1);
        o.fallback = {1e-5};
        o.tolerance = 1e-5;
        const auto r = gradcheck_scalar(loss, x, o);
        CHECK(r.max_rel_error < 1e-10);
        CHECK(r.refined == 1);
        CHECK(r.checked == 3);
    }

    TEST_CASE("retries do not hide a wrong backward rule") {
        auto bad = [](const TensorD &in) {
            auto n = in.node();
            std::vector<double> out(in.data().begin(), in.data().end());
            for (auto &v : out) v = v * v;
            return TensorD::make_result(in.shape(), std::move(out), {in}, [n, in](std::span<const double> g) {
                std::vector<double> wrong(g.size());
                for (std::size_t i = 0; i < g.size(); ++i) wrong[i] = 2.02 * in.data()[i] * g[i];  // 1% off
                accumulate_grad<double>(n, wrong);
            });
        };
        TensorD x = TensorD::from_data({4}, {0.3, -0.8, 1.1, 0.5});
        GradcheckOptions o;
        o.perturbation = 1e-4;
        o.fallback = {1e-3, 3e-4, 3e-5, 1e-5, 3e-6, 1e-6, 3e-7, 1e-7};
        o.tolerance = 1e-5;
        o.floor_fraction = 1.0;
        const auto r = gradcheck_scalar([&] { return sum(bad(x)); }, x, o);
        CHECK(r.max_rel_error > 5e-3);
        CHECK(r.refined == 0);
    }

    TEST_CASE("floor fraction one measures against the largest entry") {
        TensorD x = TensorD::from_data({2}, {1.0, 1e-6});
        auto loss = [&] { return dot(x, x); };  // gradients 2 and 2e-6
        GradcheckOptions o;
        o.perturbation = 1e-3;
        o.floor_fraction = 1.0;
        CHECK(gradcheck_scalar(loss, x, o).max_rel_error < 1e-12);
    }

    TEST_CASE("non-finite forward is an error") {
        auto nan_op = [](const TensorD &in) { return scale(in, std::nan("")); };
        CHECK_ERROR(gradcheck(nan_op, TensorD::full({2}, 1.0), 1e-3), ErrorCode::NonFinite);
    }
}

TEST_CASE("backward is bit-reproducible") {
    std::mt19937_64 rng(10);
    const auto xv = oracle::random_values(rng, 2 * 125);
    const auto wv = oracle::random_values(rng, 3 * 2 * 27);
    auto run = [&] {
        auto x = TensorF::from_data({2, 5, 5, 5}, std::vector<float>(xv.begin(), xv.end()), true);
        auto w = TensorF::from_data({3, 2, 3, 3, 3}, std::vector<float>(wv.begin(), wv.end()), true);
        sum(leaky_relu(conv3d(x, w, TensorF::zeros({3}), 2), 0.1f)).backward();
        std::vector<float> g(x.grad().begin(), x.grad().end());
        g.insert(g.end(), w.grad().begin(), w.grad().end());
        return g;
    };
    CHECK(run() == run());
}
