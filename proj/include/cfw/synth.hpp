#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "cfw/network.hpp"
#include "cfw/reg_ops.hpp"

namespace cfw {

// Intensity [1, D, H, W] in [0, 1] plus a matching label volume.
struct LabeledVolume {
    TensorF intensity;
    LabelVolume labels;
};

struct SynthDeformSpec {
    double grid_spacing = 8.0;      // control-point spacing in voxels
    double max_displacement = 2.0;  // per-component bound at control points, voxels
    double smoothing = 1.0;         // Gaussian sigma in voxels applied to the dense field; 0 disables
    std::uint64_t seed = 0;

    void validate() const;
};

struct SynthPair {
    LabeledVolume moving;
    LabeledVolume fixed;
    DisplacementField<float> truth;  // fixed(x) = moving(x + truth(x))
};

// Derives independent seeds from one root seed (splitmix64).
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream);

// `num_labels` smooth ellipsoidal regions with distinct mean intensities on a
// textured background, plus mild noise.
LabeledVolume make_phantom(const Shape &dims, int num_labels, std::uint64_t seed);

SynthPair make_pair(const LabeledVolume &base, const SynthDeformSpec &spec);

// Smallest Jacobian determinant of x -> x + field(x) over interior voxels,
// by central differences. Infinite when there are no interior voxels.
double min_jacobian_determinant(const DisplacementField<float> &field);

struct DiceResult {
    std::map<std::uint32_t, double> per_label;
    double mean = 0.0;  // unweighted over per_label; 0 if empty
};

// 2|A n B| / (|A| + |B|) for each requested label except 0. Labels absent
// from both volumes are left out.
DiceResult dice(const LabelVolume &warped, const LabelVolume &fixed, const std::vector<std::uint32_t> &label_set);

struct EvalRow {
    std::string id;
    DiceResult identity;
    DiceResult model;
};

struct EvalReport {
    std::vector<std::uint32_t> labels;
    std::vector<EvalRow> rows;
    double identity_mean = 0.0, identity_std = 0.0;
    double model_mean = 0.0, model_std = 0.0;

    // Tab-separated rows with a header and an aggregate footer; fixed
    // precision so identical inputs give identical bytes.
    std::string to_text() const;
};

struct EvalPair {
    std::string id;
    LabeledVolume moving;
    LabeledVolume fixed;
};

// Scores the finest-level field returned by `field_for(i)` for pair i.
EvalReport evaluate_fields(const std::vector<EvalPair> &pairs, const std::vector<std::uint32_t> &labels,
                           const std::function<DisplacementField<float>(std::size_t)> &field_for);

EvalReport evaluate(const CascadeNetwork<float> &net, const std::vector<EvalPair> &pairs,
                    const std::vector<std::uint32_t> &labels);

}  // namespace cfw
