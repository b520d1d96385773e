#include "cfw/network.hpp"

#include <cmath>
#include <random>

#include "binary_io.hpp"
#include "cfw/ops.hpp"

namespace cfw {

std::string to_string(Ablation a) {
    switch (a) {
        case Ablation::Full: return "full";
        case Ablation::Baseline1: return "baseline1";
        case Ablation::Baseline2: return "baseline2";
    }
    return "full";
}

Ablation parse_ablation(const std::string &text) {
    if (text == "full") return Ablation::Full;
    if (text == "baseline1") return Ablation::Baseline1;
    if (text == "baseline2") return Ablation::Baseline2;
    throw Error(ErrorCode::Config, "ablation must be full, baseline1 or baseline2, got '" + text + "'");
}

void NetworkConfig::validate() const {
    if (levels < 1 || levels > 8) throw Error(ErrorCode::Config, "levels must be in [1, 8]");
    if (encoder_channels.size() != static_cast<std::size_t>(levels)) {
        throw Error(ErrorCode::Config, "encoder_channels needs one entry per level (" + std::to_string(levels) + ")");
    }
    for (int c : encoder_channels)
        if (c < 1) throw Error(ErrorCode::Config, "encoder_channels entries must be >= 1");
    for (int c : estimator_widths)
        if (c < 1) throw Error(ErrorCode::Config, "estimator_widths entries must be >= 1");
    if (search_range < 0) throw Error(ErrorCode::Config, "search_range must be >= 0");
    if (!(leaky_slope >= 0.0)) throw Error(ErrorCode::Config, "leaky_slope must be >= 0");
}

std::int64_t NetworkConfig::estimator_input_channels(int level) const {
    const std::int64_t feat = encoder_channels.at(static_cast<std::size_t>(level - 1));
    std::int64_t n = 2 * feat + 3;
    if (ablation == Ablation::Full) {
        const std::int64_t side = 2 * search_range + 1;
        n += side * side * side;
    }
    return n;
}

KeyValues NetworkConfig::to_key_values() const {
    return {{"levels", std::to_string(levels)},
            {"encoder_channels", format_int_list(encoder_channels)},
            {"search_range", std::to_string(search_range)},
            {"estimator_widths", estimator_widths.empty() ? std::string("none") : format_int_list(estimator_widths)},
            {"ablation", to_string(ablation)},
            {"leaky_slope", format_double(leaky_slope)}};
}

void NetworkConfig::apply_key_values(NetworkConfig &cfg, KeyValues &kv) {
    auto take = [&kv](const char *key) -> std::optional<std::string> {
        auto it = kv.find(key);
        if (it == kv.end()) return std::nullopt;
        std::string v = it->second;
        kv.erase(it);
        return v;
    };
    if (auto v = take("levels")) cfg.levels = parse_int("levels", *v);
    if (auto v = take("encoder_channels")) cfg.encoder_channels = parse_int_list("encoder_channels", *v);
    if (auto v = take("search_range")) cfg.search_range = parse_int("search_range", *v);
    if (auto v = take("estimator_widths")) {
        cfg.estimator_widths = *v == "none" ? std::vector<int>{} : parse_int_list("estimator_widths", *v);
    }
    if (auto v = take("ablation")) cfg.ablation = parse_ablation(*v);
    if (auto v = take("leaky_slope")) cfg.leaky_slope = parse_double("leaky_slope", *v);
}

template <typename T>
CascadeNetwork<T> CascadeNetwork<T>::initialize(const NetworkConfig &config, const InitOptions &init) {
    config.validate();
    CascadeNetwork net;
    net.config_ = config;
    std::mt19937_64 rng(init.seed);

    auto make_conv = [&rng](std::int64_t cin, std::int64_t cout, double range) {
        std::uniform_real_distribution<double> uni(-range, range);
        std::vector<T> w(static_cast<std::size_t>(cout * cin * 27));
        if (range > 0.0)
            for (auto &v : w) v = static_cast<T>(uni(rng));
        return ConvLayer<T>{Tensor<T>::from_data({cout, cin, 3, 3, 3}, std::move(w), true),
                            Tensor<T>::zeros({cout}, true)};
    };
    auto fan_in_range = [](std::int64_t cin) { return std::sqrt(1.0 / static_cast<double>(cin * 27)); };

    std::int64_t prev = 1;
    for (int i = 0; i < config.levels; ++i) {
        const std::int64_t c = config.encoder_channels[static_cast<std::size_t>(i)];
        net.encoder_.push_back({make_conv(prev, c, fan_in_range(prev)), make_conv(c, c, fan_in_range(c))});
        prev = c;
    }
    for (int level = 1; level <= config.levels; ++level) {
        std::vector<ConvLayer<T>> blocks;
        std::int64_t cin = config.estimator_input_channels(level);
        for (int width : config.estimator_widths) {
            blocks.push_back(make_conv(cin, width, fan_in_range(cin)));
            cin = width;
        }
        blocks.push_back(make_conv(cin, 3, init.zero_output_layer ? 0.0 : init.output_init_range));
        net.estimators_.push_back(std::move(blocks));
    }
    return net;
}

template <typename T>
void CascadeNetwork<T>::validate_image(const Tensor<T> &image, const char *what) const {
    if (!image.defined() || image.rank() != 4 || image.dim(0) != 1) {
        throw Error(ErrorCode::ShapeMismatch, std::string(what) + " must be a [1,D,H,W] volume");
    }
    const auto div = config_.size_divisor();
    for (std::size_t a = 1; a < 4; ++a) {
        if (image.dim(a) < div || image.dim(a) % div != 0) {
            throw Error(ErrorCode::ShapeMismatch, std::string(what) + " dims " + shape_str(image.shape()) +
                                                      " are not divisible by " + std::to_string(div) + " (levels=" +
                                                      std::to_string(config_.levels) + ")");
        }
    }
}

template <typename T>
FeaturePyramid<T> CascadeNetwork<T>::encode(const Tensor<T> &image) const {
    validate_image(image, "encoder input");
    const T slope = static_cast<T>(config_.leaky_slope);
    FeaturePyramid<T> pyramid;
    Tensor<T> x = image;
    for (std::size_t i = 0; i < encoder_.size(); ++i) {
        const int first_stride = i == 0 ? 1 : 2;
        x = leaky_relu(conv3d(x, encoder_[i][0].weight, encoder_[i][0].bias, first_stride), slope);
        x = leaky_relu(conv3d(x, encoder_[i][1].weight, encoder_[i][1].bias, 1), slope);
        pyramid.levels.push_back(x);
    }
    return pyramid;
}

template <typename T>
DisplacementField<T> CascadeNetwork<T>::fwr_step(int level, const Tensor<T> &moving_features,
                                                 const Tensor<T> &fixed_features,
                                                 const std::optional<DisplacementField<T>> &prev_field) const {
    if (level < 1 || level > config_.levels) {
        throw Error(ErrorCode::InvalidArgument, "fwr_step level " + std::to_string(level) + " out of range");
    }
    require_4d(moving_features, "fwr_step moving features");
    if (moving_features.shape() != fixed_features.shape()) {
        throw Error(ErrorCode::ShapeMismatch, "fwr_step feature shapes differ: " + shape_str(moving_features.shape()) +
                                                  " vs " + shape_str(fixed_features.shape()));
    }
    const std::int64_t d = fixed_features.dim(1), h = fixed_features.dim(2), w = fixed_features.dim(3);

    DisplacementField<T> upsampled;
    if (prev_field) {
        if (prev_field->spatial() != Shape{d / 2, h / 2, w / 2} || d % 2 || h % 2 || w % 2) {
            throw Error(ErrorCode::ShapeMismatch, "fwr_step level " + std::to_string(level) + ": previous field " +
                                                      shape_str(prev_field->tensor().shape()) +
                                                      " is not half of features " + shape_str(fixed_features.shape()));
        }
        upsampled = upsample_field(*prev_field);
    } else {
        upsampled = DisplacementField<T>::zeros(d, h, w);
    }

    const bool warp_features = config_.ablation != Ablation::Baseline1 && prev_field.has_value();
    const Tensor<T> warped = warp_features ? warp(moving_features, upsampled) : moving_features;

    std::vector<Tensor<T>> parts;
    if (config_.ablation == Ablation::Full) parts.push_back(correlation(fixed_features, warped, config_.search_range));
    parts.push_back(fixed_features);
    parts.push_back(warped);
    parts.push_back(upsampled.tensor());
    Tensor<T> x = concat_channels(parts);

    const auto &blocks = estimators_[static_cast<std::size_t>(level - 1)];
    const T slope = static_cast<T>(config_.leaky_slope);
    for (std::size_t b = 0; b + 1 < blocks.size(); ++b) {
        x = leaky_relu(conv3d(x, blocks[b].weight, blocks[b].bias, 1), slope);
    }
    Tensor<T> residual = conv3d(x, blocks.back().weight, blocks.back().bias, 1);
    return DisplacementField<T>(add(residual, upsampled.tensor()));
}

template <typename T>
MultiScaleField<T> CascadeNetwork<T>::forward(const Tensor<T> &moving, const Tensor<T> &fixed) const {
    validate_image(moving, "moving image");
    validate_image(fixed, "fixed image");
    if (moving.shape() != fixed.shape()) {
        throw Error(ErrorCode::ShapeMismatch,
                    "moving " + shape_str(moving.shape()) + " and fixed " + shape_str(fixed.shape()) + " differ");
    }
    const auto fm = encode(moving);
    const auto ff = encode(fixed);
    MultiScaleField<T> out;
    out.levels.resize(static_cast<std::size_t>(config_.levels));
    std::optional<DisplacementField<T>> prev;
    for (int level = config_.levels; level >= 1; --level) {
        const auto idx = static_cast<std::size_t>(level - 1);
        prev = fwr_step(level, fm.levels[idx], ff.levels[idx], prev);
        out.levels[idx] = *prev;
    }
    return out;
}

template <typename T>
ParameterList<T> CascadeNetwork<T>::parameters() const {
    ParameterList<T> params;
    for (std::size_t i = 0; i < encoder_.size(); ++i) {
        for (std::size_t b = 0; b < encoder_[i].size(); ++b) {
            const std::string prefix = "encoder.level" + std::to_string(i + 1) + ".conv" + std::to_string(b + 1);
            params.push_back({prefix + ".weight", encoder_[i][b].weight});
            params.push_back({prefix + ".bias", encoder_[i][b].bias});
        }
    }
    for (std::size_t i = 0; i < estimators_.size(); ++i) {
        const auto &blocks = estimators_[i];
        for (std::size_t b = 0; b < blocks.size(); ++b) {
            const std::string prefix = "estimator.level" + std::to_string(i + 1) +
                                       (b + 1 == blocks.size() ? std::string(".out") : ".block" + std::to_string(b + 1));
            params.push_back({prefix + ".weight", blocks[b].weight});
            params.push_back({prefix + ".bias", blocks[b].bias});
        }
    }
    return params;
}

template <typename T>
std::int64_t CascadeNetwork<T>::parameter_count() const {
    std::int64_t n = 0;
    for (const auto &p : parameters()) n += p.value.numel();
    return n;
}

template <typename T>
template <typename U>
CascadeNetwork<U> CascadeNetwork<T>::cast() const {
    CascadeNetwork<U> out;
    out.config_ = config_;
    auto convert = [](const std::vector<std::vector<ConvLayer<T>>> &src) {
        std::vector<std::vector<ConvLayer<U>>> dst;
        for (const auto &level : src) {
            std::vector<ConvLayer<U>> blocks;
            for (const auto &layer : level) {
                auto conv_tensor = [](const Tensor<T> &t) {
                    return Tensor<U>::from_data(t.shape(), std::vector<U>(t.data().begin(), t.data().end()), true);
                };
                blocks.push_back({conv_tensor(layer.weight), conv_tensor(layer.bias)});
            }
            dst.push_back(std::move(blocks));
        }
        return dst;
    };
    out.encoder_ = convert(encoder_);
    out.estimators_ = convert(estimators_);
    return out;
}

namespace {
constexpr char kCheckpointMagic[] = "CFWC";
constexpr std::uint32_t kCheckpointVersion = 1;
}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const CascadeNetwork<float> &net) {
    std::vector<std::uint8_t> out;
    detail::put_bytes(out, kCheckpointMagic);
    detail::put_u32(out, kCheckpointVersion);
    const std::string cfg = format_key_values(net.config().to_key_values());
    detail::put_u32(out, static_cast<std::uint32_t>(cfg.size()));
    detail::put_bytes(out, cfg);
    const auto params = net.parameters();
    detail::put_u32(out, static_cast<std::uint32_t>(params.size()));
    for (const auto &p : params) {
        detail::put_u32(out, static_cast<std::uint32_t>(p.name.size()));
        detail::put_bytes(out, p.name);
        detail::put_u32(out, static_cast<std::uint32_t>(p.value.rank()));
        for (auto dim : p.value.shape()) detail::put_u32(out, static_cast<std::uint32_t>(dim));
        for (float v : p.value.data()) detail::put_f32(out, v);
    }
    return out;
}

void save_checkpoint(const CascadeNetwork<float> &net, const std::string &path) {
    detail::write_file(path, serialize_checkpoint(net));
}

CascadeNetwork<float> load_checkpoint(const std::string &path) {
    const auto bytes = detail::read_file(path);
    detail::ByteReader in(bytes, path);
    if (in.str(4) != kCheckpointMagic) in.fail("not a checkpoint (bad magic)");
    const auto version = in.u32();
    if (version != kCheckpointVersion) in.fail("unsupported checkpoint version " + std::to_string(version));
    auto kv = parse_key_values(in.str(in.u32()));
    NetworkConfig cfg;
    NetworkConfig::apply_key_values(cfg, kv);
    if (!kv.empty()) in.fail("unknown config key '" + kv.begin()->first + "'");

    auto net = CascadeNetwork<float>::initialize(cfg, {});
    auto params = net.parameters();
    const auto count = in.u32();
    if (count != params.size()) {
        in.fail("expected " + std::to_string(params.size()) + " entries for this config, found " + std::to_string(count));
    }
    for (auto &p : params) {
        const std::string name = in.str(in.u32());
        if (name != p.name) in.fail("expected entry '" + p.name + "', found '" + name + "'");
        Shape shape(in.u32());
        for (auto &dim : shape) dim = in.u32();
        if (shape != p.value.shape()) {
            in.fail("entry '" + name + "' has shape " + shape_str(shape) + ", config expects " +
                    shape_str(p.value.shape()));
        }
        for (auto &v : p.value.mutable_data()) v = in.f32();
    }
    if (in.remaining() != 0) in.fail("trailing bytes after last entry");
    return net;
}

template class CascadeNetwork<float>;
template class CascadeNetwork<double>;
template CascadeNetwork<double> CascadeNetwork<float>::cast<double>() const;
template CascadeNetwork<float> CascadeNetwork<double>::cast<float>() const;

}  // namespace cfw
