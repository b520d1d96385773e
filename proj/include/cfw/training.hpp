#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cfw/adam.hpp"
#include "cfw/network.hpp"

namespace cfw {

struct LossConfig {
    double lambda = 1.0;
    // Window per level, index 0 = level 1 (finest). Empty means the default
    // schedule for the network's level count.
    std::vector<int> nlcc_windows;

    // Windows decreasing linearly (odd) from 9 at level 1 to 3 at level N:
    // N=3 gives [9, 5, 3].
    static std::vector<int> default_windows(int levels);
    std::vector<int> windows_for(int levels) const;
    void validate(int levels) const;

    static double level_weight(int level) { return 1.0 / static_cast<double>(std::int64_t{1} << (level - 1)); }
};

struct TrainRecord {
    long step = 0;
    double total = 0.0;
    std::vector<double> similarity;  // per level, index 0 = level 1
    std::vector<double> regularizer;
    double millis = 0.0;

    // One JSON object, no trailing newline.
    std::string to_json() const;
};

template <typename T>
struct LossResult {
    Tensor<T> total;
    std::vector<double> similarity;
    std::vector<double> regularizer;
};

template <typename T>
struct ImagePair {
    Tensor<T> moving;
    Tensor<T> fixed;
};

// Downsampled image pyramid by repeated 2x average pooling; index 0 is the
// input itself.
template <typename T>
std::vector<Tensor<T>> image_pyramid(const Tensor<T> &image, int levels);

// sum_i 2^-(i-1) * (nlcc(warp(I_m^i, phi^i), I_f^i) + lambda * diffusion(phi^i))
template <typename T>
LossResult<T> multi_scale_loss(const Tensor<T> &moving, const Tensor<T> &fixed, const MultiScaleField<T> &fields,
                               const LossConfig &cfg);

struct TrainOptions {
    long steps = 300;
    std::uint64_t seed = 0;
    AdamOptions adam{};
    long checkpoint_every = 100;
    // Called after every step.
    std::function<void(const TrainRecord &)> on_record;
    // Called every checkpoint_every steps and once after the final step.
    std::function<void(long step, const CascadeNetwork<float> &)> on_checkpoint;
};

class NonFiniteLossError : public Error {
public:
    NonFiniteLossError(long step, std::optional<TrainRecord> last_finite);
    long step() const { return step_; }
    const std::optional<TrainRecord> &last_finite() const { return last_; }

private:
    long step_;
    std::optional<TrainRecord> last_;
};

// Visit order over `count` training pairs: one seeded permutation per pass.
std::vector<std::size_t> pair_schedule(std::size_t count, long steps, std::uint64_t seed);

// Batch-size-1 training: forward, multi-scale loss, backward, Adam.
std::vector<TrainRecord> train(CascadeNetwork<float> &net, const std::vector<ImagePair<float>> &pairs,
                               const LossConfig &loss_cfg, const TrainOptions &options);

}  // namespace cfw
