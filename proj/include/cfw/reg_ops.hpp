#pragma once

#include <cstdint>
#include <vector>

#include "cfw/tensor.hpp"

namespace cfw {

// Dense voxel-displacement volume [3, D, H, W]. Channel k is the displacement
// along spatial axis k (0 = depth, 1 = height, 2 = width) in voxels of the
// field's own resolution. The all-zero field is the identity transform.
template <typename T>
class DisplacementField {
public:
    DisplacementField() = default;
    explicit DisplacementField(Tensor<T> tensor);

    static DisplacementField zeros(std::int64_t d, std::int64_t h, std::int64_t w, bool requires_grad = false);

    const Tensor<T> &tensor() const { return tensor_; }
    Tensor<T> &tensor() { return tensor_; }
    std::int64_t depth() const { return tensor_.dim(1); }
    std::int64_t height() const { return tensor_.dim(2); }
    std::int64_t width() const { return tensor_.dim(3); }
    Shape spatial() const { return {depth(), height(), width()}; }
    bool defined() const { return tensor_.defined(); }

private:
    Tensor<T> tensor_;
};

// Integer label volume, row-major [D, H, W]. Label 0 is background.
struct LabelVolume {
    std::int64_t d = 0, h = 0, w = 0;
    std::vector<std::uint32_t> labels;

    LabelVolume() = default;
    LabelVolume(std::int64_t d_, std::int64_t h_, std::int64_t w_, std::uint32_t fill = 0)
        : d(d_), h(h_), w(w_), labels(static_cast<std::size_t>(d_ * h_ * w_), fill) {}

    Shape spatial() const { return {d, h, w}; }
    std::uint32_t &at(std::int64_t z, std::int64_t y, std::int64_t x) { return labels[(z * h + y) * w + x]; }
    std::uint32_t at(std::int64_t z, std::int64_t y, std::int64_t x) const { return labels[(z * h + y) * w + x]; }
    bool operator==(const LabelVolume &) const = default;
};

// out(x) = input(x + field(x)) by trilinear interpolation. Sample coordinates
// are clamped to the volume (border padding).
template <typename T>
Tensor<T> warp(const Tensor<T> &input, const DisplacementField<T> &field);

// Doubles the spatial resolution (trilinear, half-voxel aligned to match 2x
// average pooling, edge-clamped) and doubles the displacement values.
template <typename T>
DisplacementField<T> upsample_field(const DisplacementField<T> &field);

// Cost volume [(2d+1)^3, D, H, W]. Channel index enumerates offsets
// (dz, dy, dx) in [-d, d]^3 lexicographically with dz slowest:
//   out(o, x) = (1/C) sum_c fixed(c, x) * warped(c, x + o),
// with out-of-volume x + o contributing 0.
template <typename T>
Tensor<T> correlation(const Tensor<T> &fixed, const Tensor<T> &warped, int search_range);

inline constexpr double kNlccEpsilon = 1e-5;

// Negative mean squared local correlation coefficient over window^3
// neighborhoods clipped to the volume; value in [-1, 0].
//   cc(p) = cross(p)^2 / (var_f(p) * var_m(p) + eps)
// Internally accumulated in double precision.
template <typename T>
Tensor<T> nlcc(const Tensor<T> &warped, const Tensor<T> &fixed, int window, double eps = kNlccEpsilon);

// Sum of squared forward differences along every axis of every channel,
// divided by the element count 3*D*H*W.
template <typename T>
Tensor<T> diffusion_reg(const DisplacementField<T> &field);

// Nearest-neighbor label resampling at x + field(x), border clamped.
template <typename T>
LabelVolume warp_labels(const LabelVolume &mask, const DisplacementField<T> &field);

extern template class DisplacementField<float>;
extern template class DisplacementField<double>;

}  // namespace cfw
