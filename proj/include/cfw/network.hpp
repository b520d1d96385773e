#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cfw/adam.hpp"
#include "cfw/keyvalue.hpp"
#include "cfw/reg_ops.hpp"
#include "cfw/tensor.hpp"

namespace cfw {

// Full: warp the moving features and feed the cost volume.
// Baseline1: no moving-feature warping, no cost volume.
// Baseline2: warping kept, cost volume removed.
enum class Ablation { Full, Baseline1, Baseline2 };

std::string to_string(Ablation a);
Ablation parse_ablation(const std::string &text);

struct NetworkConfig {
    int levels = 3;
    std::vector<int> encoder_channels{8, 16, 32};
    int search_range = 1;
    std::vector<int> estimator_widths{32, 32, 16};
    Ablation ablation = Ablation::Full;
    double leaky_slope = 0.1;

    // Throws Config on a violated invariant.
    void validate() const;

    // Voxel count every input dim must be divisible by: 2^(levels-1).
    std::int64_t size_divisor() const { return std::int64_t{1} << (levels - 1); }

    // Channel count of the estimator input at `level` (1-based).
    std::int64_t estimator_input_channels(int level) const;

    KeyValues to_key_values() const;
    // Consumes recognized keys from `kv`, leaving the rest.
    static void apply_key_values(NetworkConfig &cfg, KeyValues &kv);

    bool operator==(const NetworkConfig &) const = default;
};

// Level i (1-based) lives at index i-1.
template <typename T>
struct FeaturePyramid {
    std::vector<Tensor<T>> levels;
};

template <typename T>
struct MultiScaleField {
    std::vector<DisplacementField<T>> levels;
    const DisplacementField<T> &finest() const { return levels.front(); }
};

template <typename T>
struct ConvLayer {
    Tensor<T> weight;
    Tensor<T> bias;
};

struct InitOptions {
    std::uint64_t seed = 0;
    // Zero output layer makes the untrained cascade the identity transform.
    bool zero_output_layer = true;
    // Half-width of the uniform output-layer init when not zeroed.
    double output_init_range = 1e-2;
};

// Shared-weight pyramid encoder plus one feature-warping registration
// estimator per level, cascaded from the coarsest level to the finest.
template <typename T>
class CascadeNetwork {
public:
    CascadeNetwork() = default;

    static CascadeNetwork initialize(const NetworkConfig &config, const InitOptions &init);

    const NetworkConfig &config() const { return config_; }

    FeaturePyramid<T> encode(const Tensor<T> &image) const;

    // One level of the cascade. `prev_field` is the field from level + 1, or
    // nullopt at the coarsest level.
    DisplacementField<T> fwr_step(int level, const Tensor<T> &moving_features, const Tensor<T> &fixed_features,
                                  const std::optional<DisplacementField<T>> &prev_field) const;

    MultiScaleField<T> forward(const Tensor<T> &moving, const Tensor<T> &fixed) const;

    // Named handles onto the weights, in a fixed order (encoder levels, then
    // estimator levels). Updating the handles updates the network.
    ParameterList<T> parameters() const;
    std::int64_t parameter_count() const;

    // Checks that an image fits the pyramid (4-D, one channel, dims divisible
    // by 2^(levels-1)).
    void validate_image(const Tensor<T> &image, const char *what) const;

    template <typename U>
    CascadeNetwork<U> cast() const;

private:
    template <typename>
    friend class CascadeNetwork;
    friend CascadeNetwork<float> load_checkpoint(const std::string &path);

    NetworkConfig config_;
    std::vector<std::vector<ConvLayer<T>>> encoder_;     // [level][block]
    std::vector<std::vector<ConvLayer<T>>> estimators_;  // [level][block], last block is the field output
};

// Versioned binary checkpoint: magic "CFWC", u32 version, u32 config length +
// key-value config text, u32 entry count, then per entry u32 name length,
// name, u32 rank, u32 dims, little-endian f32 values.
void save_checkpoint(const CascadeNetwork<float> &net, const std::string &path);
CascadeNetwork<float> load_checkpoint(const std::string &path);
std::vector<std::uint8_t> serialize_checkpoint(const CascadeNetwork<float> &net);

extern template class CascadeNetwork<float>;
extern template class CascadeNetwork<double>;

}  // namespace cfw
