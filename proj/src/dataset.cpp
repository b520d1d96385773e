#include "cfw/dataset.hpp"

#include <cstdio>
#include <filesystem>

#include "json.hpp"

#include "binary_io.hpp"
#include "cfw/volume_io.hpp"

namespace cfw {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr const char *kManifestName = "manifest.json";

std::string pair_id(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "pair%03zu", i);
    return buf;
}

std::string path_in(const std::string &dir, const std::string &name) { return (fs::path(dir) / name).string(); }

}  // namespace

std::string Manifest::to_json() const {
    json j;
    j["format"] = "cfw-synth";
    j["version"] = 1;
    j["dims"] = dims;
    j["labels"] = labels;
    j["max_displacement"] = max_displacement;
    j["grid_spacing"] = grid_spacing;
    j["seed"] = seed;
    json arr = json::array();
    for (const auto &p : pairs) {
        arr.push_back({{"id", p.id},
                       {"moving", p.moving},
                       {"fixed", p.fixed},
                       {"moving_labels", p.moving_labels},
                       {"fixed_labels", p.fixed_labels},
                       {"truth", p.truth}});
    }
    j["pairs"] = std::move(arr);
    return j.dump(2) + "\n";
}

Manifest Manifest::parse(const std::string &text, const std::string &source) {
    Manifest m;
    try {
        const json j = json::parse(text);
        if (j.at("format").get<std::string>() != "cfw-synth" || j.at("version").get<int>() != 1) {
            throw Error(ErrorCode::Format, source + ": not a version 1 cfw-synth manifest");
        }
        m.dims = j.at("dims").get<Shape>();
        m.labels = j.at("labels").get<int>();
        m.max_displacement = j.at("max_displacement").get<double>();
        m.grid_spacing = j.at("grid_spacing").get<double>();
        m.seed = j.at("seed").get<std::uint64_t>();
        for (const auto &p : j.at("pairs")) {
            m.pairs.push_back({p.at("id").get<std::string>(), p.at("moving").get<std::string>(),
                               p.at("fixed").get<std::string>(), p.at("moving_labels").get<std::string>(),
                               p.at("fixed_labels").get<std::string>(), p.at("truth").get<std::string>()});
        }
    } catch (const json::exception &e) {
        throw Error(ErrorCode::Format, source + ": " + e.what());
    }
    if (m.dims.size() != 3) throw Error(ErrorCode::Format, source + ": dims must have 3 entries");
    if (m.pairs.empty()) throw Error(ErrorCode::Format, source + ": no pairs listed");
    return m;
}

std::vector<std::uint32_t> Manifest::label_set() const {
    std::vector<std::uint32_t> out;
    for (int l = 1; l <= labels; ++l) out.push_back(static_cast<std::uint32_t>(l));
    return out;
}

void SynthDatasetSpec::validate() const {
    if (dims.size() != 3) throw Error(ErrorCode::InvalidArgument, "dims must be D,H,W");
    for (auto d : dims) {
        if (d < 8 || d % size_divisor != 0) {
            throw Error(ErrorCode::InvalidArgument, "each dim must be >= 8 and divisible by " +
                                                        std::to_string(size_divisor) + ", got " + shape_str(dims));
        }
    }
    if (pairs < 1) throw Error(ErrorCode::InvalidArgument, "pairs must be >= 1");
    if (labels < 2) throw Error(ErrorCode::InvalidArgument, "labels must be >= 2");
    SynthDeformSpec deform;
    deform.grid_spacing = grid_spacing;
    deform.max_displacement = max_displacement;
    deform.validate();
}

SynthDataset generate_dataset(const SynthDatasetSpec &spec) {
    spec.validate();
    SynthDataset out;
    out.manifest.dims = spec.dims;
    out.manifest.labels = spec.labels;
    out.manifest.max_displacement = spec.max_displacement;
    out.manifest.grid_spacing = spec.grid_spacing;
    out.manifest.seed = spec.seed;
    for (int i = 0; i < spec.pairs; ++i) {
        const auto base = make_phantom(spec.dims, spec.labels, derive_seed(spec.seed, 2 * static_cast<std::uint64_t>(i)));
        SynthDeformSpec deform;
        deform.grid_spacing = spec.grid_spacing;
        deform.max_displacement = spec.max_displacement;
        deform.seed = derive_seed(spec.seed, 2 * static_cast<std::uint64_t>(i) + 1);
        out.pairs.push_back(make_pair(base, deform));
        const std::string id = pair_id(static_cast<std::size_t>(i));
        out.manifest.pairs.push_back({id, id + "_moving.cwv", id + "_fixed.cwv", id + "_moving_labels.cwv",
                                      id + "_fixed_labels.cwv", id + "_truth.cwv"});
    }
    return out;
}

void write_dataset(const std::string &dir, const SynthDataset &data) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw Error(ErrorCode::Io, "cannot create directory '" + dir + "'");
    for (std::size_t i = 0; i < data.pairs.size(); ++i) {
        const auto &e = data.manifest.pairs[i];
        const auto &p = data.pairs[i];
        write_volume(path_in(dir, e.moving), VolumeFile::from_tensor(p.moving.intensity));
        write_volume(path_in(dir, e.fixed), VolumeFile::from_tensor(p.fixed.intensity));
        write_volume(path_in(dir, e.moving_labels), VolumeFile::from_labels(p.moving.labels));
        write_volume(path_in(dir, e.fixed_labels), VolumeFile::from_labels(p.fixed.labels));
        write_volume(path_in(dir, e.truth), VolumeFile::from_tensor(p.truth.tensor()));
    }
    const std::string text = data.manifest.to_json();
    detail::write_file(path_in(dir, kManifestName),
                       std::span(reinterpret_cast<const std::uint8_t *>(text.data()), text.size()));
}

Manifest read_manifest(const std::string &dir) {
    const std::string path = path_in(dir, kManifestName);
    const auto bytes = detail::read_file(path);
    return Manifest::parse(std::string(bytes.begin(), bytes.end()), path);
}

namespace {

TensorF load_image(const std::string &dir, const std::string &name, const Manifest &m) {
    const std::string path = path_in(dir, name);
    TensorF t = read_volume(path).to_tensor(path);
    if (t.shape() != Shape{1, m.dims[0], m.dims[1], m.dims[2]}) {
        throw Error(ErrorCode::ShapeMismatch, path + ": expected a 1-channel " + shape_str(m.dims) + " volume, got " +
                                                  shape_str(t.shape()));
    }
    return t;
}

LabelVolume load_labels(const std::string &dir, const std::string &name, const Manifest &m) {
    const std::string path = path_in(dir, name);
    LabelVolume l = read_volume(path).to_labels(path);
    if (l.d != m.dims[0] || l.h != m.dims[1] || l.w != m.dims[2]) {
        throw Error(ErrorCode::ShapeMismatch, path + ": label volume does not match dims " + shape_str(m.dims));
    }
    return l;
}

}  // namespace

std::vector<ImagePair<float>> load_training_pairs(const std::string &dir, const Manifest &manifest) {
    std::vector<ImagePair<float>> out;
    for (const auto &e : manifest.pairs) {
        out.push_back({load_image(dir, e.moving, manifest), load_image(dir, e.fixed, manifest)});
    }
    return out;
}

std::vector<EvalPair> load_eval_pairs(const std::string &dir, const Manifest &manifest) {
    std::vector<EvalPair> out;
    for (const auto &e : manifest.pairs) {
        out.push_back({e.id,
                       {load_image(dir, e.moving, manifest), load_labels(dir, e.moving_labels, manifest)},
                       {load_image(dir, e.fixed, manifest), load_labels(dir, e.fixed_labels, manifest)}});
    }
    return out;
}

}  // namespace cfw
