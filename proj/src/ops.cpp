#include "cfw/ops.hpp"

#include <algorithm>

#include <Eigen/Core>

#include "cfw/parallel.hpp"

namespace cfw {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

struct ConvGeometry {
    std::int64_t cin, d, h, w;
    std::int64_t od, oh, ow;
    int stride;
    std::int64_t in_vox() const { return d * h * w; }
    std::int64_t out_vox() const { return od * oh * ow; }
};

// Output voxels are processed in tiles of whole output rows (fixed z, y) so
// the column block stays in cache.
constexpr std::int64_t kConvTile = 512;

std::int64_t rows_per_tile(const ConvGeometry &g) { return std::max<std::int64_t>(1, kConvTile / g.ow); }

// Valid output x range [lo, hi) for kernel offset kx, i.e. 0 <= x*stride + kx - 1 < w.
void x_range(const ConvGeometry &g, int kx, std::int64_t &lo, std::int64_t &hi) {
    lo = (kx == 0) ? 1 : 0;
    hi = (g.w - kx < 0) ? 0 : std::min(g.ow, (g.w - kx) / g.stride + 1);
    if (hi < lo) hi = lo;
}

// Column block [C_in * 27, rows * ow] for output rows [r0, r0 + rows) where
// row r covers z = r / oh, y = r % oh. Row ci*27 + k of the block holds the
// value read by kernel tap k, 0 outside the volume.
template <typename T>
void im2col_tile(const ConvGeometry &g, const T *in, T *col, std::int64_t r0, std::int64_t rows) {
    const std::int64_t n = rows * g.ow;
    parallel_for(g.cin * 27, [&](std::int64_t row) {
        const std::int64_t ci = row / 27;
        const int k = static_cast<int>(row % 27);
        const int kz = k / 9, ky = (k / 3) % 3, kx = k % 3;
        std::int64_t lo, hi;
        x_range(g, kx, lo, hi);
        T *dst = col + row * n;
        for (std::int64_t r = 0; r < rows; ++r, dst += g.ow) {
            const std::int64_t iz = ((r0 + r) / g.oh) * g.stride + kz - 1;
            const std::int64_t iy = ((r0 + r) % g.oh) * g.stride + ky - 1;
            if (iz < 0 || iz >= g.d || iy < 0 || iy >= g.h) {
                std::fill(dst, dst + g.ow, T(0));
                continue;
            }
            const T *src = in + ci * g.in_vox() + (iz * g.h + iy) * g.w + kx - 1;
            std::fill(dst, dst + lo, T(0));
            if (g.stride == 1) {
                for (std::int64_t x = lo; x < hi; ++x) dst[x] = src[x];
            } else {
                for (std::int64_t x = lo; x < hi; ++x) dst[x] = src[2 * x];
            }
            std::fill(dst + hi, dst + g.ow, T(0));
        }
    });
}

// Adjoint of im2col_tile. Parallel over input channels so each input
// element has a single writer.
template <typename T>
void col2im_tile_add(const ConvGeometry &g, const T *col, T *in_grad, std::int64_t r0, std::int64_t rows) {
    const std::int64_t n = rows * g.ow;
    parallel_for(g.cin, [&](std::int64_t ci) {
        for (int k = 0; k < 27; ++k) {
            const int kz = k / 9, ky = (k / 3) % 3, kx = k % 3;
            std::int64_t lo, hi;
            x_range(g, kx, lo, hi);
            const T *src = col + (ci * 27 + k) * n;
            for (std::int64_t r = 0; r < rows; ++r, src += g.ow) {
                const std::int64_t iz = ((r0 + r) / g.oh) * g.stride + kz - 1;
                const std::int64_t iy = ((r0 + r) % g.oh) * g.stride + ky - 1;
                if (iz < 0 || iz >= g.d || iy < 0 || iy >= g.h) continue;
                T *dst = in_grad + ci * g.in_vox() + (iz * g.h + iy) * g.w + kx - 1;
                if (g.stride == 1) {
                    for (std::int64_t x = lo; x < hi; ++x) dst[x] += src[x];
                } else {
                    for (std::int64_t x = lo; x < hi; ++x) dst[2 * x] += src[x];
                }
            }
        }
    });
}

template <typename T>
std::vector<T> &scratch(std::size_t n) {
    thread_local std::vector<T> buf;
    if (buf.size() < n) buf.resize(n);
    return buf;
}

std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

}  // namespace

template <typename T>
void require_4d(const Tensor<T> &t, const char *what) {
    if (!t.defined() || t.rank() != 4) {
        throw Error(ErrorCode::ShapeMismatch,
                    std::string(what) + " must be a [C,D,H,W] tensor, got " +
                        (t.defined() ? shape_str(t.shape()) : std::string("undefined")));
    }
}

template <typename T>
Tensor<T> conv3d(const Tensor<T> &input, const Tensor<T> &weight, const Tensor<T> &bias, int stride) {
    require_4d(input, "conv3d input");
    if (stride != 1 && stride != 2) {
        throw Error(ErrorCode::InvalidArgument, "conv3d stride must be 1 or 2, got " + std::to_string(stride));
    }
    const auto &ws = weight.shape();
    if (ws.size() != 5 || ws[2] != 3 || ws[3] != 3 || ws[4] != 3) {
        throw Error(ErrorCode::ShapeMismatch, "conv3d weight must be [C_out,C_in,3,3,3], got " + shape_str(ws));
    }
    if (ws[1] != input.dim(0)) {
        throw Error(ErrorCode::ShapeMismatch, "conv3d weight expects C_in=" + std::to_string(ws[1]) +
                                                  " but input has " + std::to_string(input.dim(0)) + " channels");
    }
    const std::int64_t cout = ws[0];
    if (bias.shape() != Shape{cout}) {
        throw Error(ErrorCode::ShapeMismatch, "conv3d bias must be [" + std::to_string(cout) + "], got " +
                                                  shape_str(bias.shape()));
    }
    for (std::size_t a = 1; a < 4; ++a) {
        if (input.dim(a) < 1) throw Error(ErrorCode::ShapeMismatch, "conv3d input has an empty spatial axis");
    }

    ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3),
                   ceil_div(input.dim(1), stride), ceil_div(input.dim(2), stride), ceil_div(input.dim(3), stride),
                   stride};
    const std::int64_t ov = g.out_vox();
    const std::int64_t k = g.cin * 27;

    std::vector<T> out(static_cast<std::size_t>(cout * ov));
    MapMat<T> out_m(out.data(), cout, ov);
    auto &col = scratch<T>(static_cast<std::size_t>(k * rows_per_tile(g) * g.ow));
    CMapMat<T> w_m(weight.data().data(), cout, k);
    const std::int64_t tile_rows = rows_per_tile(g);
    const std::int64_t total_rows = g.od * g.oh;
    for (std::int64_t r0 = 0; r0 < total_rows; r0 += tile_rows) {
        const std::int64_t rows = std::min(tile_rows, total_rows - r0);
        const std::int64_t v0 = r0 * g.ow, n = rows * g.ow;
        im2col_tile(g, input.data().data(), col.data(), r0, rows);
        out_m.middleCols(v0, n).noalias() = w_m * CMapMat<T>(col.data(), k, n);
    }
    const auto b = bias.data();
    for (std::int64_t c = 0; c < cout; ++c) out_m.row(c).array() += b[c];

    auto in_n = input.node();
    auto w_n = weight.node();
    auto b_n = bias.node();
    return Tensor<T>::make_result(
        {cout, g.od, g.oh, g.ow}, std::move(out), {input, weight, bias},
        [g, cout, in_n, w_n, b_n](std::span<const T> gout) {
            const std::int64_t ov = g.out_vox();
            const std::int64_t k = g.cin * 27;
            CMapMat<T> go(gout.data(), cout, ov);
            if (b_n->requires_grad) {
                auto gb = b_n->grad_buffer();
                // Plain loop: Eigen's vectorised sum peels by alignment, so its
                // rounding would depend on where the buffer landed.
                for (std::int64_t c = 0; c < cout; ++c) {
                    T acc = 0;
                    for (T v : gout.subspan(static_cast<std::size_t>(c * ov), static_cast<std::size_t>(ov))) acc += v;
                    gb[c] += acc;
                }
            }
            if (!w_n->requires_grad && !in_n->requires_grad) return;
            auto &col = scratch<T>(static_cast<std::size_t>(k * rows_per_tile(g) * g.ow));
            CMapMat<T> w_m(w_n->data.data(), cout, k);
            T *gw = w_n->requires_grad ? w_n->grad_buffer().data() : nullptr;
            T *gi = in_n->requires_grad ? in_n->grad_buffer().data() : nullptr;
            const std::int64_t tile_rows = rows_per_tile(g);
            const std::int64_t total_rows = g.od * g.oh;
            for (std::int64_t r0 = 0; r0 < total_rows; r0 += tile_rows) {
                const std::int64_t rows = std::min(tile_rows, total_rows - r0);
                const std::int64_t v0 = r0 * g.ow, n = rows * g.ow;
                const auto go_tile = go.middleCols(v0, n);
                if (gw) {
                    im2col_tile(g, in_n->data.data(), col.data(), r0, rows);
                    MapMat<T>(gw, cout, k).noalias() += go_tile * CMapMat<T>(col.data(), k, n).transpose();
                }
                if (gi) {
                    MapMat<T>(col.data(), k, n).noalias() = w_m.transpose() * go_tile;
                    col2im_tile_add(g, col.data(), gi, r0, rows);
                }
            }
        });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T> &input, T slope) {
    if (!(slope >= T(0))) throw Error(ErrorCode::InvalidArgument, "leaky_relu slope must be >= 0");
    const auto x = input.data();
    std::vector<T> out(x.size());
    parallel_for(static_cast<std::int64_t>(x.size()), [&](std::int64_t i) {
        out[i] = x[i] >= T(0) ? x[i] : slope * x[i];
    });
    auto in_n = input.node();
    return Tensor<T>::make_result(input.shape(), std::move(out), {input}, [in_n, slope](std::span<const T> g) {
        auto gi = in_n->grad_buffer();
        const auto &xv = in_n->data;
        parallel_for(static_cast<std::int64_t>(g.size()), [&](std::int64_t i) {
            gi[i] += xv[i] >= T(0) ? g[i] : slope * g[i];
        });
    });
}

template <typename T>
Tensor<T> avg_downsample2(const Tensor<T> &input) {
    require_4d(input, "avg_downsample2 input");
    const std::int64_t c = input.dim(0), d = input.dim(1), h = input.dim(2), w = input.dim(3);
    if (d % 2 || h % 2 || w % 2) {
        throw Error(ErrorCode::ShapeMismatch, "avg_downsample2 needs even spatial dims, got " + shape_str(input.shape()));
    }
    const std::int64_t od = d / 2, oh = h / 2, ow = w / 2;
    const auto x = input.data();
    std::vector<T> out(static_cast<std::size_t>(c * od * oh * ow));
    parallel_for(c * od, [&](std::int64_t cz) {
        const std::int64_t ch = cz / od, z = cz % od;
        for (std::int64_t y = 0; y < oh; ++y) {
            for (std::int64_t xx = 0; xx < ow; ++xx) {
                T acc = 0;
                for (int dz = 0; dz < 2; ++dz)
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx)
                            acc += x[((ch * d + 2 * z + dz) * h + 2 * y + dy) * w + 2 * xx + dx];
                out[((ch * od + z) * oh + y) * ow + xx] = acc / T(8);
            }
        }
    });
    auto in_n = input.node();
    return Tensor<T>::make_result({c, od, oh, ow}, std::move(out), {input}, [in_n, c, d, h, w](std::span<const T> g) {
        auto gi = in_n->grad_buffer();
        const std::int64_t od = d / 2, oh = h / 2, ow = w / 2;
        parallel_for(c * d, [&](std::int64_t cz) {
            const std::int64_t ch = cz / d, z = cz % d;
            for (std::int64_t y = 0; y < h; ++y)
                for (std::int64_t x = 0; x < w; ++x)
                    gi[((ch * d + z) * h + y) * w + x] += g[((ch * od + z / 2) * oh + y / 2) * ow + x / 2] / T(8);
        });
    });
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>> &inputs) {
    if (inputs.empty()) throw Error(ErrorCode::InvalidArgument, "concat_channels needs at least one input");
    for (const auto &t : inputs) require_4d(t, "concat_channels input");
    const Shape spatial{inputs[0].dim(1), inputs[0].dim(2), inputs[0].dim(3)};
    std::int64_t channels = 0;
    for (const auto &t : inputs) {
        if (Shape{t.dim(1), t.dim(2), t.dim(3)} != spatial) {
            throw Error(ErrorCode::ShapeMismatch, "concat_channels spatial mismatch: " + shape_str(inputs[0].shape()) +
                                                      " vs " + shape_str(t.shape()));
        }
        channels += t.dim(0);
    }
    std::vector<T> out;
    out.reserve(static_cast<std::size_t>(channels * numel(spatial)));
    std::vector<std::shared_ptr<Node<T>>> nodes;
    for (const auto &t : inputs) {
        out.insert(out.end(), t.data().begin(), t.data().end());
        nodes.push_back(t.node());
    }
    return Tensor<T>::make_result({channels, spatial[0], spatial[1], spatial[2]}, std::move(out), inputs,
                                  [nodes](std::span<const T> g) {
                                      std::size_t offset = 0;
                                      for (const auto &n : nodes) {
                                          accumulate_grad(n, g.subspan(offset, n->data.size()));
                                          offset += n->data.size();
                                      }
                                  });
}

template <typename T>
Tensor<T> add(const Tensor<T> &a, const Tensor<T> &b) {
    if (a.shape() != b.shape()) {
        throw Error(ErrorCode::ShapeMismatch, "add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    std::vector<T> out(a.data().begin(), a.data().end());
    const auto bv = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    auto an = a.node(), bn = b.node();
    return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, [an, bn](std::span<const T> g) {
        accumulate_grad(an, g);
        accumulate_grad(bn, g);
    });
}

template <typename T>
Tensor<T> scale(const Tensor<T> &a, T factor) {
    std::vector<T> out(a.data().begin(), a.data().end());
    for (auto &v : out) v *= factor;
    auto an = a.node();
    return Tensor<T>::make_result(a.shape(), std::move(out), {a}, [an, factor](std::span<const T> g) {
        auto ga = an->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += factor * g[i];
    });
}

template <typename T>
Tensor<T> sum(const Tensor<T> &a) {
    T acc = 0;
    for (auto v : a.data()) acc += v;
    auto an = a.node();
    return Tensor<T>::make_result({1}, {acc}, {a}, [an](std::span<const T> g) {
        auto ga = an->grad_buffer();
        for (auto &v : ga) v += g[0];
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T> &a) {
    return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> dot(const Tensor<T> &a, const Tensor<T> &b) {
    if (a.shape() != b.shape()) {
        throw Error(ErrorCode::ShapeMismatch, "dot: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    T acc = 0;
    const auto av = a.data(), bv = b.data();
    for (std::size_t i = 0; i < av.size(); ++i) acc += av[i] * bv[i];
    auto an = a.node(), bn = b.node();
    return Tensor<T>::make_result({1}, {acc}, {a, b}, [an, bn](std::span<const T> g) {
        if (an->requires_grad) {
            auto ga = an->grad_buffer();
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0] * bn->data[i];
        }
        if (bn->requires_grad) {
            auto gb = bn->grad_buffer();
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[0] * an->data[i];
        }
    });
}

#define CFW_INSTANTIATE_OPS(T)                                                                 \
    template void require_4d<T>(const Tensor<T> &, const char *);                              \
    template Tensor<T> conv3d<T>(const Tensor<T> &, const Tensor<T> &, const Tensor<T> &, int); \
    template Tensor<T> leaky_relu<T>(const Tensor<T> &, T);                                    \
    template Tensor<T> avg_downsample2<T>(const Tensor<T> &);                                  \
    template Tensor<T> concat_channels<T>(const std::vector<Tensor<T>> &);                     \
    template Tensor<T> add<T>(const Tensor<T> &, const Tensor<T> &);                           \
    template Tensor<T> scale<T>(const Tensor<T> &, T);                                         \
    template Tensor<T> sum<T>(const Tensor<T> &);                                              \
    template Tensor<T> mean<T>(const Tensor<T> &);                                             \
    template Tensor<T> dot<T>(const Tensor<T> &, const Tensor<T> &);

CFW_INSTANTIATE_OPS(float)
CFW_INSTANTIATE_OPS(double)

}  // namespace cfw
