#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cfw/synth.hpp"
#include "cfw/training.hpp"

namespace cfw {

struct DatasetEntry {
    std::string id;
    // File names relative to the dataset directory.
    std::string moving, fixed, moving_labels, fixed_labels, truth;
};

// manifest.json of a synthetic dataset directory.
struct Manifest {
    Shape dims;  // D, H, W
    int labels = 0;
    double max_displacement = 0.0;
    double grid_spacing = 0.0;
    std::uint64_t seed = 0;
    std::vector<DatasetEntry> pairs;

    std::string to_json() const;
    static Manifest parse(const std::string &text, const std::string &source);
    std::vector<std::uint32_t> label_set() const;  // 1..labels
};

struct SynthDatasetSpec {
    Shape dims{32, 32, 32};
    int pairs = 1;
    int labels = 4;
    double max_displacement = 2.0;
    double grid_spacing = 8.0;
    std::uint64_t seed = 0;
    std::int64_t size_divisor = 4;  // 2^(N-1) of the intended network

    void validate() const;
};

struct SynthDataset {
    Manifest manifest;
    std::vector<SynthPair> pairs;
};

// Pair i uses phantom seed derive_seed(seed, 2i) and deformation seed
// derive_seed(seed, 2i + 1).
SynthDataset generate_dataset(const SynthDatasetSpec &spec);

// Creates `dir` if needed, writes the volumes, then the manifest.
void write_dataset(const std::string &dir, const SynthDataset &data);

Manifest read_manifest(const std::string &dir);
std::vector<ImagePair<float>> load_training_pairs(const std::string &dir, const Manifest &manifest);
std::vector<EvalPair> load_eval_pairs(const std::string &dir, const Manifest &manifest);

}  // namespace cfw
