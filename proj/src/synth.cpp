#include "cfw/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <random>

#include "cfw/parallel.hpp"

namespace cfw {

namespace {

// Separable Gaussian blur of a [D, H, W] volume with clamped borders.
void gaussian_blur(std::vector<float> &vol, std::int64_t d, std::int64_t h, std::int64_t w, double sigma) {
    if (sigma <= 0.0) return;
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
        total += kernel[static_cast<std::size_t>(i + radius)];
    }
    for (auto &k : kernel) k /= total;

    const std::int64_t extents[3] = {d, h, w};
    const std::int64_t strides[3] = {h * w, w, 1};
    std::vector<float> tmp(vol.size());
    for (int axis = 0; axis < 3; ++axis) {
        const std::int64_t n = extents[axis], stride = strides[axis];
        parallel_for(d * h * w, [&](std::int64_t idx) {
            const std::int64_t coord = (idx / stride) % n;
            const std::int64_t base = idx - coord * stride;
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                const std::int64_t j = std::clamp<std::int64_t>(coord + i, 0, n - 1);
                acc += kernel[static_cast<std::size_t>(i + radius)] * vol[static_cast<std::size_t>(base + j * stride)];
            }
            tmp[static_cast<std::size_t>(idx)] = static_cast<float>(acc);
        });
        vol.swap(tmp);
    }
}

void require_dims(const Shape &dims) {
    if (dims.size() != 3) throw Error(ErrorCode::InvalidArgument, "phantom dims must be D,H,W");
    for (auto v : dims) {
        if (v < 8) throw Error(ErrorCode::InvalidArgument, "phantom dims must be >= 8, got " + shape_str(dims));
    }
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) {
    std::uint64_t z = root + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

void SynthDeformSpec::validate() const {
    if (!(grid_spacing >= 2.0)) throw Error(ErrorCode::InvalidArgument, "grid spacing must be >= 2 voxels");
    if (!(max_displacement >= 0.0)) throw Error(ErrorCode::InvalidArgument, "max displacement must be >= 0");
    if (!(max_displacement < grid_spacing / 2.0)) {
        throw Error(ErrorCode::InvalidArgument, "max displacement must be below half the grid spacing");
    }
    if (!(smoothing >= 0.0)) throw Error(ErrorCode::InvalidArgument, "smoothing must be >= 0");
}

LabeledVolume make_phantom(const Shape &dims, int num_labels, std::uint64_t seed) {
    require_dims(dims);
    if (num_labels < 2) throw Error(ErrorCode::InvalidArgument, "phantom needs at least 2 labels");
    const std::int64_t d = dims[0], h = dims[1], w = dims[2], vox = d * h * w;
    if (static_cast<std::int64_t>(num_labels) * 64 > vox / 2) {
        throw Error(ErrorCode::InvalidArgument, "volume " + shape_str(dims) + " is too small for " +
                                                    std::to_string(num_labels) + " labels");
    }

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double ext[3] = {static_cast<double>(d), static_cast<double>(h), static_cast<double>(w)};

    for (int attempt = 0; attempt < 32; ++attempt) {
        LabelVolume labels(d, h, w);
        for (int label = 1; label <= num_labels; ++label) {
            double center[3], radius[3], freq[3];
            for (int a = 0; a < 3; ++a) {
                center[a] = (0.2 + 0.6 * uni(rng)) * ext[a];
                radius[a] = std::max(2.0, (0.12 + 0.14 * uni(rng)) * ext[a]);
                freq[a] = (0.5 + uni(rng)) * 2.0 * std::numbers::pi / ext[a] * 2.0;
            }
            const double phase = 2.0 * std::numbers::pi * uni(rng);
            const double wobble = 0.1 + 0.2 * uni(rng);
            for (std::int64_t z = 0; z < d; ++z)
                for (std::int64_t y = 0; y < h; ++y)
                    for (std::int64_t x = 0; x < w; ++x) {
                        const double p[3] = {z + 0.5, y + 0.5, x + 0.5};
                        double rho = 0.0;
                        for (int a = 0; a < 3; ++a) rho += std::pow((p[a] - center[a]) / radius[a], 2);
                        const double bound =
                            1.0 + wobble * std::sin(freq[0] * p[0] + freq[1] * p[1] + freq[2] * p[2] + phase);
                        if (rho <= bound) labels.at(z, y, x) = static_cast<std::uint32_t>(label);
                    }
        }
        std::vector<std::int64_t> counts(static_cast<std::size_t>(num_labels + 1), 0);
        for (auto l : labels.labels) ++counts[l];
        if (std::any_of(counts.begin() + 1, counts.end(), [](std::int64_t c) { return c < 8; })) continue;

        // Distinct region means spread over [0.25, 0.9] in shuffled order.
        std::vector<double> means(static_cast<std::size_t>(num_labels + 1));
        means[0] = 0.08;
        std::vector<int> order(static_cast<std::size_t>(num_labels));
        for (int i = 0; i < num_labels; ++i) order[static_cast<std::size_t>(i)] = i;
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
        for (int l = 1; l <= num_labels; ++l) {
            means[static_cast<std::size_t>(l)] = 0.25 + 0.65 * order[static_cast<std::size_t>(l - 1)] / (num_labels - 1);
        }

        double tex_freq[3], tex_phase[3];
        for (int a = 0; a < 3; ++a) {
            tex_freq[a] = (1.0 + 2.0 * uni(rng)) * 2.0 * std::numbers::pi / ext[a];
            tex_phase[a] = 2.0 * std::numbers::pi * uni(rng);
        }
        std::vector<float> img(static_cast<std::size_t>(vox));
        for (std::int64_t z = 0; z < d; ++z)
            for (std::int64_t y = 0; y < h; ++y)
                for (std::int64_t x = 0; x < w; ++x) {
                    const double texture = 0.05 * std::sin(tex_freq[0] * z + tex_phase[0]) *
                                           std::sin(tex_freq[1] * y + tex_phase[1]) *
                                           std::sin(tex_freq[2] * x + tex_phase[2]);
                    img[static_cast<std::size_t>((z * h + y) * w + x)] =
                        static_cast<float>(means[labels.at(z, y, x)] + texture + 0.02 * gauss(rng));
                }
        gaussian_blur(img, d, h, w, 0.6);
        for (auto &v : img) v = std::clamp(v, 0.0f, 1.0f);
        return {TensorF::from_data({1, d, h, w}, std::move(img)), std::move(labels)};
    }
    throw Error(ErrorCode::InvalidArgument, "could not place " + std::to_string(num_labels) + " visible regions in " +
                                                shape_str(dims));
}

SynthPair make_pair(const LabeledVolume &base, const SynthDeformSpec &spec) {
    spec.validate();
    const std::int64_t d = base.labels.d, h = base.labels.h, w = base.labels.w, vox = d * h * w;
    if (base.intensity.shape() != Shape{1, d, h, w}) {
        throw Error(ErrorCode::ShapeMismatch, "phantom intensity and labels disagree on shape");
    }

    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> uni(-spec.max_displacement, spec.max_displacement);
    const double s = spec.grid_spacing;
    const std::int64_t gd = static_cast<std::int64_t>((d - 1) / s) + 2;
    const std::int64_t gh = static_cast<std::int64_t>((h - 1) / s) + 2;
    const std::int64_t gw = static_cast<std::int64_t>((w - 1) / s) + 2;
    std::vector<double> grid(static_cast<std::size_t>(3 * gd * gh * gw), 0.0);
    if (spec.max_displacement > 0.0)
        for (auto &v : grid) v = uni(rng);

    std::vector<float> dense(static_cast<std::size_t>(3 * vox));
    for (std::int64_t c = 0; c < 3; ++c) {
        const double *g = grid.data() + c * gd * gh * gw;
        for (std::int64_t z = 0; z < d; ++z)
            for (std::int64_t y = 0; y < h; ++y)
                for (std::int64_t x = 0; x < w; ++x) {
                    const double u[3] = {z / s, y / s, x / s};
                    std::int64_t i0[3];
                    double t[3];
                    for (int a = 0; a < 3; ++a) {
                        i0[a] = static_cast<std::int64_t>(std::floor(u[a]));
                        t[a] = u[a] - static_cast<double>(i0[a]);
                    }
                    double acc = 0.0;
                    for (int a = 0; a < 2; ++a)
                        for (int b = 0; b < 2; ++b)
                            for (int e = 0; e < 2; ++e) {
                                const double wgt = (a ? t[0] : 1 - t[0]) * (b ? t[1] : 1 - t[1]) * (e ? t[2] : 1 - t[2]);
                                acc += wgt * g[((i0[0] + a) * gh + i0[1] + b) * gw + i0[2] + e];
                            }
                    dense[static_cast<std::size_t>(c * vox + (z * h + y) * w + x)] = static_cast<float>(acc);
                }
    }
    for (std::int64_t c = 0; c < 3; ++c) {
        std::vector<float> channel(dense.begin() + c * vox, dense.begin() + (c + 1) * vox);
        gaussian_blur(channel, d, h, w, spec.smoothing);
        std::copy(channel.begin(), channel.end(), dense.begin() + c * vox);
    }

    DisplacementField<float> truth(TensorF::from_data({3, d, h, w}, std::move(dense)));
    NoGradGuard no_grad;
    LabeledVolume fixed{warp(base.intensity, truth), warp_labels(base.labels, truth)};
    return {base, std::move(fixed), std::move(truth)};
}

double min_jacobian_determinant(const DisplacementField<float> &field) {
    const std::int64_t d = field.depth(), h = field.height(), w = field.width(), vox = d * h * w;
    const auto phi = field.tensor().data();
    auto at = [&](int c, std::int64_t z, std::int64_t y, std::int64_t x) {
        return static_cast<double>(phi[static_cast<std::size_t>(c * vox + (z * h + y) * w + x)]);
    };
    double best = std::numeric_limits<double>::infinity();
    for (std::int64_t z = 1; z + 1 < d; ++z)
        for (std::int64_t y = 1; y + 1 < h; ++y)
            for (std::int64_t x = 1; x + 1 < w; ++x) {
                double j[3][3];
                for (int c = 0; c < 3; ++c) {
                    j[c][0] = (at(c, z + 1, y, x) - at(c, z - 1, y, x)) / 2.0 + (c == 0);
                    j[c][1] = (at(c, z, y + 1, x) - at(c, z, y - 1, x)) / 2.0 + (c == 1);
                    j[c][2] = (at(c, z, y, x + 1) - at(c, z, y, x - 1)) / 2.0 + (c == 2);
                }
                const double det = j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1]) -
                                   j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0]) +
                                   j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0]);
                best = std::min(best, det);
            }
    return best;
}

DiceResult dice(const LabelVolume &warped, const LabelVolume &fixed, const std::vector<std::uint32_t> &label_set) {
    if (warped.spatial() != fixed.spatial()) {
        throw Error(ErrorCode::ShapeMismatch,
                    "dice: " + shape_str(warped.spatial()) + " vs " + shape_str(fixed.spatial()));
    }
    DiceResult result;
    for (auto label : label_set) {
        if (label == 0) continue;
        std::int64_t a = 0, b = 0, both = 0;
        for (std::size_t i = 0; i < warped.labels.size(); ++i) {
            const bool in_a = warped.labels[i] == label, in_b = fixed.labels[i] == label;
            a += in_a;
            b += in_b;
            both += in_a && in_b;
        }
        if (a + b == 0) continue;
        result.per_label[label] = 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
    }
    if (!result.per_label.empty()) {
        double total = 0.0;
        for (const auto &[label, score] : result.per_label) total += score;
        result.mean = total / static_cast<double>(result.per_label.size());
    }
    return result;
}

std::string EvalReport::to_text() const {
    auto fmt = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.6f", v);
        return std::string(buf);
    };
    std::string out = "# cfw evaluation report\npair\tidentity_mean";
    for (auto l : labels) out += "\tmodel_l" + std::to_string(l);
    out += "\tmodel_mean\n";
    for (const auto &row : rows) {
        out += row.id + "\t" + fmt(row.identity.mean);
        for (auto l : labels) {
            auto it = row.model.per_label.find(l);
            out += "\t" + (it == row.model.per_label.end() ? std::string("-") : fmt(it->second));
        }
        out += "\t" + fmt(row.model.mean) + "\n";
    }
    out += "# aggregate\tpairs=" + std::to_string(rows.size()) + "\tidentity_mean=" + fmt(identity_mean) +
           "\tidentity_std=" + fmt(identity_std) + "\tmodel_mean=" + fmt(model_mean) + "\tmodel_std=" + fmt(model_std) +
           "\n";
    return out;
}

EvalReport evaluate_fields(const std::vector<EvalPair> &pairs, const std::vector<std::uint32_t> &labels,
                           const std::function<DisplacementField<float>(std::size_t)> &field_for) {
    EvalReport report;
    report.labels = labels;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto &p = pairs[i];
        const auto field = field_for(i);
        EvalRow row{p.id, dice(p.moving.labels, p.fixed.labels, labels),
                    dice(warp_labels(p.moving.labels, field), p.fixed.labels, labels)};
        report.rows.push_back(std::move(row));
    }
    auto stats = [&](auto pick, double &mean, double &sd) {
        mean = sd = 0.0;
        if (report.rows.empty()) return;
        for (const auto &r : report.rows) mean += pick(r);
        mean /= static_cast<double>(report.rows.size());
        for (const auto &r : report.rows) sd += (pick(r) - mean) * (pick(r) - mean);
        sd = std::sqrt(sd / static_cast<double>(report.rows.size()));
    };
    stats([](const EvalRow &r) { return r.identity.mean; }, report.identity_mean, report.identity_std);
    stats([](const EvalRow &r) { return r.model.mean; }, report.model_mean, report.model_std);
    return report;
}

EvalReport evaluate(const CascadeNetwork<float> &net, const std::vector<EvalPair> &pairs,
                    const std::vector<std::uint32_t> &labels) {
    for (const auto &p : pairs) {
        net.validate_image(p.moving.intensity, ("pair " + p.id + " moving").c_str());
        net.validate_image(p.fixed.intensity, ("pair " + p.id + " fixed").c_str());
    }
    return evaluate_fields(pairs, labels, [&](std::size_t i) {
        NoGradGuard no_grad;
        return net.forward(pairs[i].moving.intensity, pairs[i].fixed.intensity).finest();
    });
}

}  // namespace cfw
