#include "cfw/gradcheck_suite.hpp"

#include <algorithm>
#include <random>

#include "cfw/network.hpp"
#include "cfw/ops.hpp"
#include "cfw/reg_ops.hpp"
#include "cfw/training.hpp"

namespace cfw {

namespace {

constexpr double kLinearStep = 1e-3;     // exact for ops linear in the checked input
constexpr double kNonlinearStep = 1e-6;
// Through the whole network the error is taken against each tensor's largest
// gradient entry: entries 1e4 times smaller sit at the roundoff floor of a
// central difference. Elements are retried with longer steps (roundoff) and
// shorter ones (a step straddling a leaky_relu or trilinear kink).
constexpr double kNetworkStep = 1e-4;
constexpr double kNetworkFallback[] = {1e-3, 3e-4, 3e-5, 1e-5, 3e-6, 1e-6, 3e-7, 1e-7};

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    TensorD uniform(Shape shape, double lo, double hi) {
        std::uniform_real_distribution<double> uni(lo, hi);
        std::vector<double> v(static_cast<std::size_t>(numel(shape)));
        for (auto &x : v) x = uni(engine_);
        return TensorD::from_data(std::move(shape), std::move(v));
    }

    // Values with |x| in [0.1, 1], random sign.
    TensorD away_from_zero(Shape shape) {
        std::uniform_real_distribution<double> mag(0.1, 1.0);
        std::bernoulli_distribution sign(0.5);
        std::vector<double> v(static_cast<std::size_t>(numel(shape)));
        for (auto &x : v) x = sign(engine_) ? mag(engine_) : -mag(engine_);
        return TensorD::from_data(std::move(shape), std::move(v));
    }

    std::mt19937_64 &engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

using Suite = std::vector<GradcheckEntry>;

void add(Suite &out, const std::string &op, const std::string &target, GradcheckResult r) {
    out.push_back({op, target, r});
}

void check_conv3d(Suite &out, Rng &rng) {
    for (int stride : {1, 2}) {
        const TensorD x = rng.uniform({2, 4, 4, 4}, -1, 1);
        const TensorD w = rng.uniform({3, 2, 3, 3, 3}, -0.5, 0.5);
        const TensorD b = rng.uniform({3}, -0.5, 0.5);
        const std::string tag = "stride" + std::to_string(stride);
        add(out, "conv3d", "input/" + tag,
            gradcheck([&](const TensorD &in) { return conv3d(in, w, b, stride); }, x, kLinearStep));
        add(out, "conv3d", "weight/" + tag,
            gradcheck([&](const TensorD &in) { return conv3d(x, in, b, stride); }, w, kLinearStep));
        add(out, "conv3d", "bias/" + tag,
            gradcheck([&](const TensorD &in) { return conv3d(x, w, in, stride); }, b, kLinearStep));
    }
}

void check_leaky_relu(Suite &out, Rng &rng) {
    add(out, "leaky_relu", "input",
        gradcheck([](const TensorD &in) { return leaky_relu(in, 0.1); }, rng.away_from_zero({2, 5, 5, 5}),
                  kNonlinearStep));
}

void check_avg_downsample2(Suite &out, Rng &rng) {
    add(out, "avg_downsample2", "input",
        gradcheck([](const TensorD &in) { return avg_downsample2(in); }, rng.uniform({2, 4, 4, 4}, -1, 1),
                  kLinearStep));
}

void check_concat(Suite &out, Rng &rng) {
    const TensorD a = rng.uniform({2, 3, 4, 5}, -1, 1);
    const TensorD c = rng.uniform({3, 3, 4, 5}, -1, 1);
    add(out, "concat_channels", "middle",
        gradcheck([&](const TensorD &in) { return concat_channels<double>({a, in, c}); }, rng.uniform({1, 3, 4, 5}, -1, 1),
                  kLinearStep));
}

void check_warp(Suite &out, Rng &rng) {
    const TensorD img = rng.uniform({2, 5, 4, 5}, -1, 1);
    // Non-integer displacements keep samples off the trilinear kinks; some
    // reach outside the volume to exercise the clamp.
    const TensorD phi = rng.uniform({3, 5, 4, 5}, -1.7, 1.7);
    add(out, "warp", "input",
        gradcheck([&](const TensorD &in) { return warp(in, DisplacementField<double>(phi)); }, img, kLinearStep));
    add(out, "warp", "field",
        gradcheck([&](const TensorD &in) { return warp(img, DisplacementField<double>(in)); }, phi, kNonlinearStep));
}

void check_upsample(Suite &out, Rng &rng) {
    add(out, "upsample_field", "field",
        gradcheck([](const TensorD &in) { return upsample_field(DisplacementField<double>(in)).tensor(); },
                  rng.uniform({3, 2, 3, 2}, -1, 1), kLinearStep));
}

void check_correlation(Suite &out, Rng &rng) {
    const TensorD f = rng.uniform({3, 4, 5, 4}, -1, 1);
    const TensorD m = rng.uniform({3, 4, 5, 4}, -1, 1);
    add(out, "correlation", "fixed",
        gradcheck([&](const TensorD &in) { return correlation(in, m, 1); }, f, kLinearStep));
    add(out, "correlation", "warped",
        gradcheck([&](const TensorD &in) { return correlation(f, in, 1); }, m, kLinearStep));
}

void check_nlcc(Suite &out, Rng &rng) {
    const TensorD f = rng.uniform({1, 5, 5, 5}, 0, 1);
    const TensorD m = rng.uniform({1, 5, 5, 5}, 0, 1);
    for (int window : {3, 5}) {
        const std::string tag = "/window" + std::to_string(window);
        add(out, "nlcc", "warped" + tag,
            gradcheck([&](const TensorD &in) { return nlcc(in, f, window); }, m, kNonlinearStep));
        add(out, "nlcc", "fixed" + tag,
            gradcheck([&](const TensorD &in) { return nlcc(m, in, window); }, f, kNonlinearStep));
    }
}

void check_diffusion(Suite &out, Rng &rng) {
    add(out, "diffusion_reg", "field",
        gradcheck([](const TensorD &in) { return diffusion_reg(DisplacementField<double>(in)); },
                  rng.uniform({3, 5, 4, 3}, -1, 1), kLinearStep));
}

void check_multi_scale_loss(Suite &out, Rng &rng) {
    NetworkConfig cfg;
    cfg.levels = 2;
    cfg.encoder_channels = {2, 3};
    cfg.estimator_widths = {3};
    cfg.search_range = 1;
    InitOptions init;
    init.seed = rng.engine()();
    init.zero_output_layer = false;
    init.output_init_range = 0.1;
    const auto net = CascadeNetwork<double>::initialize(cfg, init);
    // A quarter-voxel offset at the coarse level puts every warp sample near
    // the middle of a trilinear cell at both levels, away from its kinks.
    for (auto p : net.parameters()) {
        if (p.name == "estimator.level2.out.bias") {
            for (auto &v : p.value.mutable_data()) v = 0.25;
        }
    }
    LossConfig loss_cfg;
    loss_cfg.nlcc_windows = {5, 3};

    TensorD moving = rng.uniform({1, 8, 8, 8}, 0, 1);
    TensorD fixed = rng.uniform({1, 8, 8, 8}, 0, 1);
    auto loss = [&]() { return multi_scale_loss(moving, fixed, net.forward(moving, fixed), loss_cfg).total; };
    GradcheckOptions opts;
    opts.perturbation = kNetworkStep;
    opts.floor_fraction = 1.0;
    opts.fallback.assign(std::begin(kNetworkFallback), std::end(kNetworkFallback));
    opts.tolerance = kGradcheckTolerance;
    auto check = [&](const TensorD &wrt, std::span<const std::int64_t> idx) {
        return gradcheck_scalar(loss, wrt, opts, idx);
    };

    add(out, "multi_scale_loss", "moving", check(moving, {}));
    add(out, "multi_scale_loss", "fixed", check(fixed, {}));
    for (const auto &p : net.parameters()) {
        // A fixed sample per tensor keeps the run short.
        std::vector<std::int64_t> idx;
        const std::int64_t n = p.value.numel();
        const std::int64_t stride = std::max<std::int64_t>(1, n / 24);
        for (std::int64_t i = 0; i < n; i += stride) idx.push_back(i);
        add(out, "multi_scale_loss", p.name, check(p.value, idx));
    }
}

struct Check {
    const char *name;
    void (*run)(Suite &, Rng &);
};

constexpr Check kChecks[] = {
    {"conv3d", check_conv3d},
    {"leaky_relu", check_leaky_relu},
    {"avg_downsample2", check_avg_downsample2},
    {"concat_channels", check_concat},
    {"warp", check_warp},
    {"upsample_field", check_upsample},
    {"correlation", check_correlation},
    {"nlcc", check_nlcc},
    {"diffusion_reg", check_diffusion},
    {"multi_scale_loss", check_multi_scale_loss},
};

}  // namespace

std::vector<std::string> gradcheck_op_names() {
    std::vector<std::string> names;
    for (const auto &c : kChecks) names.emplace_back(c.name);
    return names;
}

std::vector<GradcheckEntry> run_gradcheck_suite(std::uint64_t seed, const std::string &only) {
    if (!only.empty()) {
        const auto names = gradcheck_op_names();
        if (std::find(names.begin(), names.end(), only) == names.end()) {
            throw Error(ErrorCode::InvalidArgument, "unknown op '" + only + "' for gradcheck");
        }
    }
    Suite out;
    for (std::size_t i = 0; i < std::size(kChecks); ++i) {
        if (!only.empty() && only != kChecks[i].name) continue;
        // Per-op stream so filtering does not change the inputs an op sees.
        Rng rng(seed * 1000003ULL + i);
        kChecks[i].run(out, rng);
    }
    return out;
}

}  // namespace cfw
