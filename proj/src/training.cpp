#include "cfw/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "json.hpp"

#include "cfw/ops.hpp"

namespace cfw {

std::vector<int> LossConfig::default_windows(int levels) {
    if (levels == 1) return {9};
    std::vector<int> out;
    for (int i = 1; i <= levels; ++i) out.push_back(3 + 2 * ((3 * (levels - i)) / (levels - 1)));
    return out;
}

std::vector<int> LossConfig::windows_for(int levels) const {
    return nlcc_windows.empty() ? default_windows(levels) : nlcc_windows;
}

void LossConfig::validate(int levels) const {
    const auto windows = windows_for(levels);
    if (windows.size() != static_cast<std::size_t>(levels)) {
        throw Error(ErrorCode::Config, "nlcc_windows needs one entry per level (" + std::to_string(levels) + ")");
    }
    for (int w : windows) {
        if (w < 3 || w % 2 == 0) throw Error(ErrorCode::Config, "nlcc windows must be odd and >= 3");
    }
    if (!(lambda >= 0.0)) throw Error(ErrorCode::Config, "lambda must be >= 0");
}

std::string TrainRecord::to_json() const {
    nlohmann::ordered_json j;
    j["step"] = step;
    j["total"] = total;
    j["sim"] = similarity;
    j["reg"] = regularizer;
    j["millis"] = millis;
    return j.dump();
}

NonFiniteLossError::NonFiniteLossError(long step, std::optional<TrainRecord> last_finite)
    : Error(ErrorCode::NonFinite,
            "non-finite loss at step " + std::to_string(step) +
                (last_finite ? "; last finite record: " + last_finite->to_json() : std::string("; no finite record"))),
      step_(step),
      last_(std::move(last_finite)) {}

template <typename T>
std::vector<Tensor<T>> image_pyramid(const Tensor<T> &image, int levels) {
    std::vector<Tensor<T>> out{image};
    for (int i = 1; i < levels; ++i) out.push_back(avg_downsample2(out.back()));
    return out;
}

template <typename T>
LossResult<T> multi_scale_loss(const Tensor<T> &moving, const Tensor<T> &fixed, const MultiScaleField<T> &fields,
                               const LossConfig &cfg) {
    const int levels = static_cast<int>(fields.levels.size());
    if (levels < 1) throw Error(ErrorCode::InvalidArgument, "multi_scale_loss needs at least one field");
    cfg.validate(levels);
    if (moving.shape() != fixed.shape()) {
        throw Error(ErrorCode::ShapeMismatch,
                    "multi_scale_loss: moving " + shape_str(moving.shape()) + " vs fixed " + shape_str(fixed.shape()));
    }
    const auto windows = cfg.windows_for(levels);
    const auto mov = image_pyramid(moving, levels);
    const auto fix = image_pyramid(fixed, levels);

    LossResult<T> result;
    for (int level = 1; level <= levels; ++level) {
        const auto idx = static_cast<std::size_t>(level - 1);
        const auto &field = fields.levels[idx];
        if (field.spatial() != Shape{fix[idx].dim(1), fix[idx].dim(2), fix[idx].dim(3)}) {
            throw Error(ErrorCode::ShapeMismatch, "level " + std::to_string(level) + ": field " +
                                                      shape_str(field.tensor().shape()) + " vs image " +
                                                      shape_str(fix[idx].shape()));
        }
        Tensor<T> sim = nlcc(warp(mov[idx], field), fix[idx], windows[idx]);
        Tensor<T> reg = diffusion_reg(field);
        result.similarity.push_back(static_cast<double>(sim.item()));
        result.regularizer.push_back(static_cast<double>(reg.item()));
        Tensor<T> term = scale(add(sim, scale(reg, static_cast<T>(cfg.lambda))),
                               static_cast<T>(LossConfig::level_weight(level)));
        result.total = result.total.defined() ? add(result.total, term) : term;
    }
    return result;
}

std::vector<std::size_t> pair_schedule(std::size_t count, long steps, std::uint64_t seed) {
    std::vector<std::size_t> order;
    if (count == 0) return order;
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<std::size_t> perm(count);
    while (static_cast<long>(order.size()) < steps) {
        std::iota(perm.begin(), perm.end(), 0);
        // Fisher-Yates with raw engine output; std::shuffle's draw pattern is
        // implementation-defined.
        for (std::size_t i = count; i > 1; --i) std::swap(perm[i - 1], perm[rng() % i]);
        order.insert(order.end(), perm.begin(), perm.end());
    }
    order.resize(static_cast<std::size_t>(steps));
    return order;
}

std::vector<TrainRecord> train(CascadeNetwork<float> &net, const std::vector<ImagePair<float>> &pairs,
                               const LossConfig &loss_cfg, const TrainOptions &options) {
    loss_cfg.validate(net.config().levels);
    if (options.steps < 0) throw Error(ErrorCode::InvalidArgument, "steps must be >= 0");
    if (options.steps > 0 && pairs.empty()) throw Error(ErrorCode::InvalidArgument, "no training pairs");
    for (const auto &p : pairs) {
        net.validate_image(p.moving, "training moving image");
        net.validate_image(p.fixed, "training fixed image");
        if (p.moving.shape() != pairs.front().moving.shape() || p.fixed.shape() != p.moving.shape()) {
            throw Error(ErrorCode::ShapeMismatch, "training pairs must share one shape");
        }
    }

    auto params = net.parameters();
    AdamState<float> adam(options.adam);
    std::vector<TrainRecord> records;
    const auto schedule = pair_schedule(pairs.size(), options.steps, options.seed);

    for (long step = 0; step < options.steps; ++step) {
        const auto start = std::chrono::steady_clock::now();
        const auto &pair = pairs[schedule[static_cast<std::size_t>(step)]];
        const auto fields = net.forward(pair.moving, pair.fixed);
        auto loss = multi_scale_loss(pair.moving, pair.fixed, fields, loss_cfg);

        TrainRecord rec;
        rec.step = step;
        rec.total = static_cast<double>(loss.total.item());
        rec.similarity = loss.similarity;
        rec.regularizer = loss.regularizer;
        if (!std::isfinite(rec.total)) {
            throw NonFiniteLossError(step, records.empty() ? std::nullopt : std::optional(records.back()));
        }

        loss.total.backward();
        adam.step(params);
        rec.millis = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        if (options.on_record) options.on_record(rec);
        records.push_back(std::move(rec));

        const bool last = step + 1 == options.steps;
        if (options.on_checkpoint && (last || (options.checkpoint_every > 0 && (step + 1) % options.checkpoint_every == 0))) {
            options.on_checkpoint(step + 1, net);
        }
    }
    if (options.steps == 0 && options.on_checkpoint) options.on_checkpoint(0, net);
    return records;
}

template std::vector<Tensor<float>> image_pyramid<float>(const Tensor<float> &, int);
template std::vector<Tensor<double>> image_pyramid<double>(const Tensor<double> &, int);
template LossResult<float> multi_scale_loss<float>(const Tensor<float> &, const Tensor<float> &,
                                                   const MultiScaleField<float> &, const LossConfig &);
template LossResult<double> multi_scale_loss<double>(const Tensor<double> &, const Tensor<double> &,
                                                     const MultiScaleField<double> &, const LossConfig &);

}  // namespace cfw
