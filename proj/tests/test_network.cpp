#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "test_util.hpp"

#include "cfw/network.hpp"
#include "cfw/ops.hpp"
#include "cfw/training.hpp"

using namespace cfw;

namespace {

TensorF random_image(std::mt19937_64 &rng, std::int64_t n) {
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    std::vector<float> v(static_cast<std::size_t>(n * n * n));
    for (auto &x : v) x = u(rng);
    return TensorF::from_data({1, n, n, n}, v);
}

NetworkConfig small_config(Ablation ablation = Ablation::Full) {
    NetworkConfig cfg;
    cfg.encoder_channels = {4, 6, 8};
    cfg.estimator_widths = {8, 6};
    cfg.ablation = ablation;
    return cfg;
}

bool all_zero(const TensorF &t) {
    return std::all_of(t.data().begin(), t.data().end(), [](float v) { return v == 0.0f; });
}

std::string temp_path(const std::string &name) {
    return (std::filesystem::temp_directory_path() / ("cfw_test_" + name)).string();
}

std::vector<std::uint8_t> read_bytes(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_bytes(const std::string &path, const std::vector<std::uint8_t> &bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_SUITE("config") {
    TEST_CASE("estimator input channel arithmetic") {
        NetworkConfig cfg;
        CHECK(cfg.estimator_input_channels(1) == 27 + 8 + 8 + 3);
        cfg.ablation = Ablation::Baseline2;
        CHECK(cfg.estimator_input_channels(1) == 8 + 8 + 3);
        cfg.ablation = Ablation::Baseline1;
        CHECK(cfg.estimator_input_channels(1) == 8 + 8 + 3);
        cfg.search_range = 2;
        cfg.ablation = Ablation::Full;
        CHECK(cfg.estimator_input_channels(3) == 125 + 32 + 32 + 3);
    }

    TEST_CASE("invariants are enforced") {
        NetworkConfig cfg;
        cfg.encoder_channels = {8, 16};
        CHECK_ERROR(cfg.validate(), ErrorCode::Config);
        cfg = NetworkConfig{};
        cfg.search_range = -1;
        CHECK_ERROR(cfg.validate(), ErrorCode::Config);
        cfg = NetworkConfig{};
        cfg.leaky_slope = -0.5;
        CHECK_ERROR(cfg.validate(), ErrorCode::Config);
    }

    TEST_CASE("key-value round trip") {
        NetworkConfig cfg = small_config(Ablation::Baseline2);
        cfg.search_range = 2;
        KeyValues kv = cfg.to_key_values();
        NetworkConfig back;
        NetworkConfig::apply_key_values(back, kv);
        CHECK(kv.empty());
        CHECK(back == cfg);
    }

    TEST_CASE("ablation names") {
        for (auto a : {Ablation::Full, Ablation::Baseline1, Ablation::Baseline2}) CHECK(parse_ablation(to_string(a)) == a);
        CHECK_ERROR(parse_ablation("baseline3"), ErrorCode::Config);
    }
}

TEST_SUITE("encoder") {
    TEST_CASE("pyramid halves per level") {
        std::mt19937_64 rng(1);
        const auto net = CascadeNetwork<float>::initialize(NetworkConfig{}, {1});
        const auto pyr = net.encode(random_image(rng, 32));
        REQUIRE(pyr.levels.size() == 3);
        CHECK(pyr.levels[0].shape() == Shape{8, 32, 32, 32});
        CHECK(pyr.levels[1].shape() == Shape{16, 16, 16, 16});
        CHECK(pyr.levels[2].shape() == Shape{32, 8, 8, 8});
    }

    TEST_CASE("same weights, same image, same bits") {
        std::mt19937_64 rng(2);
        const auto net = CascadeNetwork<float>::initialize(small_config(), {2});
        const auto img = random_image(rng, 16);
        const auto a = net.encode(img), b = net.encode(img);
        for (std::size_t i = 0; i < a.levels.size(); ++i) {
            CHECK(std::equal(a.levels[i].data().begin(), a.levels[i].data().end(), b.levels[i].data().begin()));
        }
    }

    TEST_CASE("indivisible dims are rejected") {
        const auto net = CascadeNetwork<float>::initialize(NetworkConfig{}, {3});
        CHECK_ERROR(net.encode(TensorF::zeros({1, 30, 32, 32})), ErrorCode::ShapeMismatch);
        CHECK_ERROR(net.encode(TensorF::zeros({2, 32, 32, 32})), ErrorCode::ShapeMismatch);
    }
}

TEST_SUITE("cascade") {
    TEST_CASE("shape ladder on 32^3") {
        std::mt19937_64 rng(4);
        const auto net = CascadeNetwork<float>::initialize(small_config(), {4});
        const auto fields = net.forward(random_image(rng, 32), random_image(rng, 32));
        REQUIRE(fields.levels.size() == 3);
        CHECK(fields.levels[0].spatial() == Shape{32, 32, 32});
        CHECK(fields.levels[1].spatial() == Shape{16, 16, 16});
        CHECK(fields.levels[2].spatial() == Shape{8, 8, 8});
    }

    TEST_CASE("identity at initialization") {
        std::mt19937_64 rng(5);
        for (auto ablation : {Ablation::Full, Ablation::Baseline1, Ablation::Baseline2}) {
            const auto net = CascadeNetwork<float>::initialize(small_config(ablation), {5});
            const auto moving = random_image(rng, 16);
            const auto fields = net.forward(moving, random_image(rng, 16));
            for (const auto &f : fields.levels) CHECK(all_zero(f.tensor()));
            const auto warped = warp(moving, fields.finest());
            CHECK(std::equal(warped.data().begin(), warped.data().end(), moving.data().begin()));
        }
    }

    TEST_CASE("coarsest step with zero output layer returns zeros") {
        std::mt19937_64 rng(6);
        const auto net = CascadeNetwork<float>::initialize(small_config(), {6});
        const auto fm = net.encode(random_image(rng, 16));
        const auto ff = net.encode(random_image(rng, 16));
        const auto phi = net.fwr_step(3, fm.levels[2], ff.levels[2], std::nullopt);
        CHECK(phi.spatial() == Shape{4, 4, 4});
        CHECK(all_zero(phi.tensor()));
        CHECK_ERROR(net.fwr_step(2, fm.levels[1], ff.levels[2], std::nullopt), ErrorCode::ShapeMismatch);
    }

    TEST_CASE("single level is a plain single-scale estimator") {
        NetworkConfig cfg;
        cfg.levels = 1;
        cfg.encoder_channels = {4};
        cfg.estimator_widths = {4};
        const auto net = CascadeNetwork<float>::initialize(cfg, {7});
        std::mt19937_64 rng(7);
        const auto fields = net.forward(random_image(rng, 9), random_image(rng, 9));
        REQUIRE(fields.levels.size() == 1);
        CHECK(fields.finest().spatial() == Shape{9, 9, 9});
    }

    TEST_CASE("parameter count does not depend on volume size") {
        const auto net = CascadeNetwork<float>::initialize(small_config(), {8});
        const auto count = net.parameter_count();
        std::mt19937_64 rng(8);
        (void)net.forward(random_image(rng, 8), random_image(rng, 8));
        (void)net.forward(random_image(rng, 16), random_image(rng, 16));
        CHECK(net.parameter_count() == count);
        std::int64_t total = 0;
        for (const auto &p : net.parameters()) total += p.value.numel();
        CHECK(total == count);
    }

    TEST_CASE("every parameter receives a gradient") {
        std::mt19937_64 rng(9);
        for (auto ablation : {Ablation::Full, Ablation::Baseline1, Ablation::Baseline2}) {
            auto net = CascadeNetwork<float>::initialize(small_config(ablation), {9});
            const auto moving = random_image(rng, 16), fixed = random_image(rng, 16);
            auto params = net.parameters();
            AdamState<float> adam({1e-2});
            // The zero output layers block the gradient at step 0; one update opens it.
            for (int step = 0; step < 2; ++step) {
                multi_scale_loss(moving, fixed, net.forward(moving, fixed), LossConfig{}).total.backward();
                if (step == 1) {
                    for (const auto &p : params) {
                        CAPTURE(p.name);
                        REQUIRE(p.value.has_grad());
                        double norm = 0.0;
                        for (float g : p.value.grad()) norm += std::abs(g);
                        CHECK(norm > 0.0);
                    }
                }
                adam.step(params);
            }
        }
    }

    TEST_CASE("Full and Baseline1 diverge after one update") {
        std::mt19937_64 rng(10);
        const auto moving = random_image(rng, 16), fixed = random_image(rng, 16);
        std::vector<std::vector<float>> fields;
        for (auto ablation : {Ablation::Full, Ablation::Baseline1}) {
            auto net = CascadeNetwork<float>::initialize(small_config(ablation), {10});
            auto params = net.parameters();
            AdamState<float> adam({1e-2});
            multi_scale_loss(moving, fixed, net.forward(moving, fixed), LossConfig{}).total.backward();
            adam.step(params);
            NoGradGuard no_grad;
            const auto phi = net.forward(moving, fixed).finest().tensor();
            CHECK_FALSE(all_zero(phi));
            fields.emplace_back(phi.data().begin(), phi.data().end());
        }
        CHECK(fields[0] != fields[1]);
    }

    TEST_CASE("double copy computes the same field") {
        std::mt19937_64 rng(11);
        InitOptions init{11, false, 0.1};
        const auto net = CascadeNetwork<float>::initialize(small_config(), init);
        const auto net_d = net.cast<double>();
        const auto m = random_image(rng, 8), f = random_image(rng, 8);
        auto to_d = [](const TensorF &t) {
            return TensorD::from_data(t.shape(), std::vector<double>(t.data().begin(), t.data().end()));
        };
        const auto a = net.forward(m, f).finest().tensor();
        const auto b = net_d.forward(to_d(m), to_d(f)).finest().tensor();
        for (std::int64_t i = 0; i < a.numel(); ++i) CHECK(a.data()[i] == doctest::Approx(b.data()[i]).epsilon(1e-4));
    }
}

TEST_SUITE("checkpoint") {
    TEST_CASE("round trip preserves config and weights") {
        InitOptions init{12, false, 0.05};
        const auto net = CascadeNetwork<float>::initialize(small_config(Ablation::Baseline2), init);
        const std::string path = temp_path("roundtrip.ckpt");
        save_checkpoint(net, path);
        const auto back = load_checkpoint(path);
        CHECK(back.config() == net.config());
        const auto a = net.parameters(), b = back.parameters();
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i].name == b[i].name);
            CHECK(a[i].value.shape() == b[i].value.shape());
            CHECK(std::equal(a[i].value.data().begin(), a[i].value.data().end(), b[i].value.data().begin()));
        }
        CHECK(serialize_checkpoint(back) == read_bytes(path));
        std::remove(path.c_str());
    }

    TEST_CASE("shapes are validated against the stored config") {
        const auto net = CascadeNetwork<float>::initialize(NetworkConfig{}, {13});
        auto bytes = serialize_checkpoint(net);
        std::string text(bytes.begin(), bytes.end());
        const auto pos = text.find("encoder_channels = 8,16,32");
        REQUIRE(pos != std::string::npos);
        bytes[pos + std::string("encoder_channels = 8,16,3").size()] = '3';  // 32 -> 33, same length
        const std::string path = temp_path("tampered.ckpt");
        write_bytes(path, bytes);
        CHECK(error_code_of([&] { load_checkpoint(path); }).has_value());
        std::remove(path.c_str());
    }

    TEST_CASE("corrupt files are format errors") {
        const auto net = CascadeNetwork<float>::initialize(small_config(), {14});
        auto bytes = serialize_checkpoint(net);
        const std::string path = temp_path("corrupt.ckpt");

        auto bad_magic = bytes;
        bad_magic[0] = 'X';
        write_bytes(path, bad_magic);
        CHECK_ERROR(load_checkpoint(path), ErrorCode::Format);

        bytes.resize(bytes.size() - 3);
        write_bytes(path, bytes);
        CHECK_ERROR(load_checkpoint(path), ErrorCode::Format);
        std::remove(path.c_str());
        CHECK_ERROR(load_checkpoint(path), ErrorCode::Io);
    }

    TEST_CASE("same seed, same bytes") {
        CHECK(serialize_checkpoint(CascadeNetwork<float>::initialize(NetworkConfig{}, {15})) ==
              serialize_checkpoint(CascadeNetwork<float>::initialize(NetworkConfig{}, {15})));
        CHECK(serialize_checkpoint(CascadeNetwork<float>::initialize(NetworkConfig{}, {15})) !=
              serialize_checkpoint(CascadeNetwork<float>::initialize(NetworkConfig{}, {16})));
    }
}
