#include "cfw/reg_ops.hpp"

#include <algorithm>
#include <cmath>

#include "cfw/ops.hpp"
#include "cfw/parallel.hpp"

namespace cfw {

namespace {

// Linear interpolation stencil along one axis of length n at coordinate s,
// after clamping s into [0, n-1]. `slope` is d(clamped s)/ds.
template <typename T>
struct Stencil {
    std::int64_t i0 = 0, i1 = 0;
    T t = 0;
    T slope = 0;
};

template <typename T>
Stencil<T> clamp_stencil(T s, std::int64_t n) {
    Stencil<T> st;
    if (n == 1) return st;
    const T hi = static_cast<T>(n - 1);
    st.slope = (s >= T(0) && s <= hi) ? T(1) : T(0);
    const T sc = std::clamp(s, T(0), hi);
    st.i0 = std::min(static_cast<std::int64_t>(std::floor(sc)), n - 2);
    st.i1 = st.i0 + 1;
    st.t = sc - static_cast<T>(st.i0);
    return st;
}

void require_same_spatial(const Shape &a, const Shape &b, const char *what) {
    if (a.size() < 3 || b.size() < 3 || !std::equal(a.end() - 3, a.end(), b.end() - 3)) {
        throw Error(ErrorCode::ShapeMismatch, std::string(what) + ": spatial dims " + shape_str(a) + " vs " + shape_str(b));
    }
}

// Sum over the clipped window [i - r, i + r] along one axis of a
// [D, H, W] volume, out of place.
void box_axis(const std::vector<double> &in, std::vector<double> &out, std::int64_t d, std::int64_t h,
              std::int64_t w, int axis, int r) {
    const std::int64_t n = axis == 0 ? d : axis == 1 ? h : w;
    const std::int64_t stride = axis == 0 ? h * w : axis == 1 ? w : 1;
    out.assign(in.size(), 0.0);
    parallel_for(d * h * w, [&](std::int64_t idx) {
        const std::int64_t coord = axis == 0 ? idx / (h * w) : axis == 1 ? (idx / w) % h : idx % w;
        const std::int64_t lo = std::max<std::int64_t>(0, coord - r);
        const std::int64_t hi = std::min<std::int64_t>(n - 1, coord + r);
        const std::int64_t base = idx - coord * stride;
        double acc = 0.0;
        for (std::int64_t j = lo; j <= hi; ++j) acc += in[static_cast<std::size_t>(base + j * stride)];
        out[static_cast<std::size_t>(idx)] = acc;
    });
}

std::vector<double> box_sum(const std::vector<double> &in, std::int64_t d, std::int64_t h, std::int64_t w, int r) {
    std::vector<double> a, b;
    box_axis(in, a, d, h, w, 0, r);
    box_axis(a, b, d, h, w, 1, r);
    box_axis(b, a, d, h, w, 2, r);
    return a;
}

}  // namespace

template <typename T>
DisplacementField<T>::DisplacementField(Tensor<T> tensor) : tensor_(std::move(tensor)) {
    if (!tensor_.defined() || tensor_.rank() != 4 || tensor_.dim(0) != 3) {
        throw Error(ErrorCode::ShapeMismatch,
                    "displacement field must be [3,D,H,W], got " +
                        (tensor_.defined() ? shape_str(tensor_.shape()) : std::string("undefined")));
    }
}

template <typename T>
DisplacementField<T> DisplacementField<T>::zeros(std::int64_t d, std::int64_t h, std::int64_t w, bool requires_grad) {
    return DisplacementField(Tensor<T>::zeros({3, d, h, w}, requires_grad));
}

template <typename T>
Tensor<T> warp(const Tensor<T> &input, const DisplacementField<T> &field) {
    require_4d(input, "warp input");
    require_same_spatial(input.shape(), field.tensor().shape(), "warp");
    const std::int64_t c = input.dim(0), d = input.dim(1), h = input.dim(2), w = input.dim(3);
    const std::int64_t vox = d * h * w;

    // Stencils depend only on the field; shared between channels and backward.
    struct Sample {
        Stencil<T> z, y, x;
    };
    auto samples = std::make_shared<std::vector<Sample>>(static_cast<std::size_t>(vox));
    const auto phi = field.tensor().data();
    parallel_for(vox, [&](std::int64_t p) {
        const std::int64_t z = p / (h * w), y = (p / w) % h, x = p % w;
        (*samples)[p] = {clamp_stencil(static_cast<T>(z) + phi[p], d), clamp_stencil(static_cast<T>(y) + phi[vox + p], h),
                         clamp_stencil(static_cast<T>(x) + phi[2 * vox + p], w)};
    });

    const auto src = input.data();
    std::vector<T> out(static_cast<std::size_t>(c * vox));
    parallel_for(c * d, [&](std::int64_t cz) {
        const std::int64_t ch = cz / d;
        const T *v = src.data() + ch * vox;
        for (std::int64_t p = (cz % d) * h * w, end = p + h * w; p < end; ++p) {
            const auto &s = (*samples)[p];
            const T z0 = T(1) - s.z.t, y0 = T(1) - s.y.t, x0 = T(1) - s.x.t;
            const std::int64_t a00 = (s.z.i0 * h + s.y.i0) * w, a01 = (s.z.i0 * h + s.y.i1) * w;
            const std::int64_t a10 = (s.z.i1 * h + s.y.i0) * w, a11 = (s.z.i1 * h + s.y.i1) * w;
            out[ch * vox + p] = z0 * (y0 * (x0 * v[a00 + s.x.i0] + s.x.t * v[a00 + s.x.i1]) +
                                      s.y.t * (x0 * v[a01 + s.x.i0] + s.x.t * v[a01 + s.x.i1])) +
                                s.z.t * (y0 * (x0 * v[a10 + s.x.i0] + s.x.t * v[a10 + s.x.i1]) +
                                         s.y.t * (x0 * v[a11 + s.x.i0] + s.x.t * v[a11 + s.x.i1]));
        }
    });

    auto in_n = input.node();
    auto f_n = field.tensor().node();
    return Tensor<T>::make_result(input.shape(), std::move(out), {input, field.tensor()},
                                  [in_n, f_n, samples, c, d, h, w](std::span<const T> g) {
        const std::int64_t vox = d * h * w;
        if (in_n->requires_grad) {
            auto gi = in_n->grad_buffer();
            parallel_for(c, [&](std::int64_t ch) {
                T *dst = gi.data() + ch * vox;
                const T *gc = g.data() + ch * vox;
                for (std::int64_t p = 0; p < vox; ++p) {
                    const auto &s = (*samples)[p];
                    const T gv = gc[p];
                    const T zw[2] = {T(1) - s.z.t, s.z.t}, yw[2] = {T(1) - s.y.t, s.y.t}, xw[2] = {T(1) - s.x.t, s.x.t};
                    const std::int64_t zi[2] = {s.z.i0, s.z.i1}, yi[2] = {s.y.i0, s.y.i1}, xi[2] = {s.x.i0, s.x.i1};
                    for (int a = 0; a < 2; ++a)
                        for (int b = 0; b < 2; ++b)
                            for (int e = 0; e < 2; ++e)
                                dst[(zi[a] * h + yi[b]) * w + xi[e]] += gv * zw[a] * yw[b] * xw[e];
                }
            });
        }
        if (f_n->requires_grad) {
            auto gf = f_n->grad_buffer();
            const auto &src = in_n->data;
            parallel_for(vox, [&](std::int64_t p) {
                const auto &s = (*samples)[p];
                const T zw[2] = {T(1) - s.z.t, s.z.t}, yw[2] = {T(1) - s.y.t, s.y.t}, xw[2] = {T(1) - s.x.t, s.x.t};
                const T dz[2] = {-s.z.slope, s.z.slope}, dy[2] = {-s.y.slope, s.y.slope}, dx[2] = {-s.x.slope, s.x.slope};
                const std::int64_t zi[2] = {s.z.i0, s.z.i1}, yi[2] = {s.y.i0, s.y.i1}, xi[2] = {s.x.i0, s.x.i1};
                T acc_z = 0, acc_y = 0, acc_x = 0;
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    const T *v = src.data() + ch * vox;
                    const T gv = g[ch * vox + p];
                    if (gv == T(0)) continue;
                    for (int a = 0; a < 2; ++a)
                        for (int b = 0; b < 2; ++b)
                            for (int e = 0; e < 2; ++e) {
                                const T val = gv * v[(zi[a] * h + yi[b]) * w + xi[e]];
                                acc_z += val * dz[a] * yw[b] * xw[e];
                                acc_y += val * zw[a] * dy[b] * xw[e];
                                acc_x += val * zw[a] * yw[b] * dx[e];
                            }
                }
                gf[p] += acc_z;
                gf[vox + p] += acc_y;
                gf[2 * vox + p] += acc_x;
            });
        }
    });
}

template <typename T>
DisplacementField<T> upsample_field(const DisplacementField<T> &field) {
    const std::int64_t d = field.depth(), h = field.height(), w = field.width();
    const std::int64_t od = 2 * d, oh = 2 * h, ow = 2 * w;
    // Output index i sits at input coordinate (i + 0.5) / 2 - 0.5.
    auto axis_stencils = [](std::int64_t n_in) {
        std::vector<Stencil<T>> st(static_cast<std::size_t>(2 * n_in));
        for (std::int64_t i = 0; i < 2 * n_in; ++i) {
            st[i] = clamp_stencil((static_cast<T>(i) + T(0.5)) / T(2) - T(0.5), n_in);
        }
        return st;
    };
    auto sz = std::make_shared<std::vector<Stencil<T>>>(axis_stencils(d));
    auto sy = std::make_shared<std::vector<Stencil<T>>>(axis_stencils(h));
    auto sx = std::make_shared<std::vector<Stencil<T>>>(axis_stencils(w));

    const auto src = field.tensor().data();
    std::vector<T> out(static_cast<std::size_t>(3 * od * oh * ow));
    parallel_for(3 * od, [&](std::int64_t cz) {
        const std::int64_t ch = cz / od, z = cz % od;
        const T *v = src.data() + ch * d * h * w;
        const auto &a = (*sz)[z];
        for (std::int64_t y = 0; y < oh; ++y) {
            const auto &b = (*sy)[y];
            for (std::int64_t x = 0; x < ow; ++x) {
                const auto &e = (*sx)[x];
                auto at = [&](std::int64_t i, std::int64_t j, std::int64_t k) { return v[(i * h + j) * w + k]; };
                const T val = (T(1) - a.t) * ((T(1) - b.t) * ((T(1) - e.t) * at(a.i0, b.i0, e.i0) + e.t * at(a.i0, b.i0, e.i1)) +
                                              b.t * ((T(1) - e.t) * at(a.i0, b.i1, e.i0) + e.t * at(a.i0, b.i1, e.i1))) +
                              a.t * ((T(1) - b.t) * ((T(1) - e.t) * at(a.i1, b.i0, e.i0) + e.t * at(a.i1, b.i0, e.i1)) +
                                     b.t * ((T(1) - e.t) * at(a.i1, b.i1, e.i0) + e.t * at(a.i1, b.i1, e.i1)));
                out[((ch * od + z) * oh + y) * ow + x] = T(2) * val;
            }
        }
    });

    auto f_n = field.tensor().node();
    return DisplacementField<T>(Tensor<T>::make_result(
        {3, od, oh, ow}, std::move(out), {field.tensor()}, [f_n, sz, sy, sx, d, h, w](std::span<const T> g) {
            auto gf = f_n->grad_buffer();
            const std::int64_t od = 2 * d, oh = 2 * h, ow = 2 * w;
            parallel_for(3, [&](std::int64_t ch) {
                T *dst = gf.data() + ch * d * h * w;
                for (std::int64_t z = 0; z < od; ++z) {
                    const auto &a = (*sz)[z];
                    for (std::int64_t y = 0; y < oh; ++y) {
                        const auto &b = (*sy)[y];
                        for (std::int64_t x = 0; x < ow; ++x) {
                            const auto &e = (*sx)[x];
                            const T gv = T(2) * g[((ch * od + z) * oh + y) * ow + x];
                            const T zw[2] = {T(1) - a.t, a.t}, yw[2] = {T(1) - b.t, b.t}, xw[2] = {T(1) - e.t, e.t};
                            const std::int64_t zi[2] = {a.i0, a.i1}, yi[2] = {b.i0, b.i1}, xi[2] = {e.i0, e.i1};
                            for (int p = 0; p < 2; ++p)
                                for (int q = 0; q < 2; ++q)
                                    for (int r = 0; r < 2; ++r)
                                        dst[(zi[p] * h + yi[q]) * w + xi[r]] += gv * zw[p] * yw[q] * xw[r];
                        }
                    }
                }
            });
        }));
}

template <typename T>
Tensor<T> correlation(const Tensor<T> &fixed, const Tensor<T> &warped, int search_range) {
    require_4d(fixed, "correlation fixed");
    require_4d(warped, "correlation warped");
    if (fixed.shape() != warped.shape()) {
        throw Error(ErrorCode::ShapeMismatch,
                    "correlation: " + shape_str(fixed.shape()) + " vs " + shape_str(warped.shape()));
    }
    if (search_range < 0) throw Error(ErrorCode::InvalidArgument, "correlation search range must be >= 0");
    const std::int64_t c = fixed.dim(0), d = fixed.dim(1), h = fixed.dim(2), w = fixed.dim(3);
    const std::int64_t vox = d * h * w;
    const int side = 2 * search_range + 1;
    const std::int64_t offsets = static_cast<std::int64_t>(side) * side * side;
    const T inv_c = T(1) / static_cast<T>(c);

    // Visits every (x1, x1 + o) pair with both ends inside the volume.
    auto for_each_pair = [d, h, w, side, search_range](std::int64_t o, auto &&fn) {
        const std::int64_t oz = o / (side * side) - search_range, oy = (o / side) % side - search_range,
                           ox = o % side - search_range;
        for (std::int64_t z = std::max<std::int64_t>(0, -oz); z < std::min(d, d - oz); ++z)
            for (std::int64_t y = std::max<std::int64_t>(0, -oy); y < std::min(h, h - oy); ++y) {
                const std::int64_t p1 = (z * h + y) * w, p2 = ((z + oz) * h + y + oy) * w + ox;
                for (std::int64_t x = std::max<std::int64_t>(0, -ox); x < std::min(w, w - ox); ++x) fn(p1 + x, p2 + x);
            }
    };

    const auto f = fixed.data(), m = warped.data();
    std::vector<T> out(static_cast<std::size_t>(offsets * vox), T(0));
    parallel_for(offsets, [&](std::int64_t o) {
        T *dst = out.data() + o * vox;
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const T *fc = f.data() + ch * vox;
            const T *mc = m.data() + ch * vox;
            for_each_pair(o, [&](std::int64_t p1, std::int64_t p2) { dst[p1] += fc[p1] * mc[p2]; });
        }
        for (std::int64_t p = 0; p < vox; ++p) dst[p] *= inv_c;
    });

    auto f_n = fixed.node(), m_n = warped.node();
    return Tensor<T>::make_result(
        {offsets, d, h, w}, std::move(out), {fixed, warped},
        [f_n, m_n, c, vox, offsets, inv_c, for_each_pair](std::span<const T> g) {
            const auto &fv = f_n->data;
            const auto &mv = m_n->data;
            if (f_n->requires_grad) {
                auto gf = f_n->grad_buffer();
                parallel_for(c, [&](std::int64_t ch) {
                    for (std::int64_t o = 0; o < offsets; ++o) {
                        const T *go = g.data() + o * vox;
                        const T *mc = mv.data() + ch * vox;
                        T *dst = gf.data() + ch * vox;
                        for_each_pair(o, [&](std::int64_t p1, std::int64_t p2) { dst[p1] += inv_c * go[p1] * mc[p2]; });
                    }
                });
            }
            if (m_n->requires_grad) {
                auto gm = m_n->grad_buffer();
                parallel_for(c, [&](std::int64_t ch) {
                    for (std::int64_t o = 0; o < offsets; ++o) {
                        const T *go = g.data() + o * vox;
                        const T *fc = fv.data() + ch * vox;
                        T *dst = gm.data() + ch * vox;
                        for_each_pair(o, [&](std::int64_t p1, std::int64_t p2) { dst[p2] += inv_c * go[p1] * fc[p1]; });
                    }
                });
            }
        });
}

template <typename T>
Tensor<T> nlcc(const Tensor<T> &warped, const Tensor<T> &fixed, int window, double eps) {
    require_4d(warped, "nlcc warped");
    require_4d(fixed, "nlcc fixed");
    if (warped.shape() != fixed.shape() || warped.dim(0) != 1) {
        throw Error(ErrorCode::ShapeMismatch, "nlcc needs two [1,D,H,W] images of equal shape, got " +
                                                  shape_str(warped.shape()) + " and " + shape_str(fixed.shape()));
    }
    const std::int64_t d = fixed.dim(1), h = fixed.dim(2), w = fixed.dim(3);
    if (window < 1 || window % 2 == 0) {
        throw Error(ErrorCode::InvalidArgument, "nlcc window must be odd and positive, got " + std::to_string(window));
    }
    if (window > std::min({d, h, w})) {
        throw Error(ErrorCode::InvalidArgument, "nlcc window " + std::to_string(window) + " exceeds volume " +
                                                    shape_str(fixed.shape()));
    }
    const int r = window / 2;
    const auto vox = static_cast<std::size_t>(d * h * w);

    std::vector<double> m(warped.data().begin(), warped.data().end());
    std::vector<double> f(fixed.data().begin(), fixed.data().end());
    std::vector<double> ff(vox), mm(vox), fm(vox);
    for (std::size_t i = 0; i < vox; ++i) {
        ff[i] = f[i] * f[i];
        mm[i] = m[i] * m[i];
        fm[i] = f[i] * m[i];
    }
    const auto sf = box_sum(f, d, h, w, r), sm = box_sum(m, d, h, w, r);
    const auto sff = box_sum(ff, d, h, w, r), smm = box_sum(mm, d, h, w, r), sfm = box_sum(fm, d, h, w, r);

    // Per-voxel statistics kept for the backward pass.
    auto mean_f = std::make_shared<std::vector<double>>(vox);
    auto mean_m = std::make_shared<std::vector<double>>(vox);
    auto coef_a = std::make_shared<std::vector<double>>(vox);   // 2 cross / den
    auto coef_bm = std::make_shared<std::vector<double>>(vox);  // 2 cross^2 var_f / den^2
    auto coef_bf = std::make_shared<std::vector<double>>(vox);  // 2 cross^2 var_m / den^2
    double total = 0.0;
    for (std::int64_t z = 0; z < d; ++z) {
        const double nz = static_cast<double>(std::min(d - 1, z + r) - std::max<std::int64_t>(0, z - r) + 1);
        for (std::int64_t y = 0; y < h; ++y) {
            const double ny = static_cast<double>(std::min(h - 1, y + r) - std::max<std::int64_t>(0, y - r) + 1);
            for (std::int64_t x = 0; x < w; ++x) {
                const double nx = static_cast<double>(std::min(w - 1, x + r) - std::max<std::int64_t>(0, x - r) + 1);
                const auto p = static_cast<std::size_t>((z * h + y) * w + x);
                const double n = nz * ny * nx;
                const double fbar = sf[p] / n, mbar = sm[p] / n;
                const double cross = sfm[p] - sf[p] * mbar;
                const double var_f = sff[p] - sf[p] * fbar;
                const double var_m = smm[p] - sm[p] * mbar;
                const double den = var_f * var_m + eps;
                total += cross * cross / den;
                (*mean_f)[p] = fbar;
                (*mean_m)[p] = mbar;
                (*coef_a)[p] = 2.0 * cross / den;
                (*coef_bm)[p] = 2.0 * cross * cross * var_f / (den * den);
                (*coef_bf)[p] = 2.0 * cross * cross * var_m / (den * den);
            }
        }
    }
    const double value = -total / static_cast<double>(vox);

    auto m_n = warped.node(), f_n = fixed.node();
    return Tensor<T>::make_result(
        {1}, {static_cast<T>(value)}, {warped, fixed},
        [m_n, f_n, mean_f, mean_m, coef_a, coef_bm, coef_bf, d, h, w, r, vox](std::span<const T> g) {
            const double scale = -static_cast<double>(g[0]) / static_cast<double>(vox);
            const std::vector<double> fv(f_n->data.begin(), f_n->data.end());
            const std::vector<double> mv(m_n->data.begin(), m_n->data.end());
            std::vector<double> tmp(vox);
            const auto box_a = box_sum(*coef_a, d, h, w, r);
            // d/dm_q: f_q box(A) - box(A fbar) - m_q box(Bm) + box(Bm mbar)
            if (m_n->requires_grad) {
                for (std::size_t i = 0; i < vox; ++i) tmp[i] = (*coef_a)[i] * (*mean_f)[i];
                const auto box_af = box_sum(tmp, d, h, w, r);
                const auto box_b = box_sum(*coef_bm, d, h, w, r);
                for (std::size_t i = 0; i < vox; ++i) tmp[i] = (*coef_bm)[i] * (*mean_m)[i];
                const auto box_bm = box_sum(tmp, d, h, w, r);
                auto gm = m_n->grad_buffer();
                for (std::size_t i = 0; i < vox; ++i) {
                    gm[i] += static_cast<T>(scale * (fv[i] * box_a[i] - box_af[i] - mv[i] * box_b[i] + box_bm[i]));
                }
            }
            if (f_n->requires_grad) {
                for (std::size_t i = 0; i < vox; ++i) tmp[i] = (*coef_a)[i] * (*mean_m)[i];
                const auto box_am = box_sum(tmp, d, h, w, r);
                const auto box_b = box_sum(*coef_bf, d, h, w, r);
                for (std::size_t i = 0; i < vox; ++i) tmp[i] = (*coef_bf)[i] * (*mean_f)[i];
                const auto box_bf = box_sum(tmp, d, h, w, r);
                auto gf = f_n->grad_buffer();
                for (std::size_t i = 0; i < vox; ++i) {
                    gf[i] += static_cast<T>(scale * (mv[i] * box_a[i] - box_am[i] - fv[i] * box_b[i] + box_bf[i]));
                }
            }
        });
}

template <typename T>
Tensor<T> diffusion_reg(const DisplacementField<T> &field) {
    const std::int64_t d = field.depth(), h = field.height(), w = field.width();
    const std::int64_t vox = d * h * w;
    const std::int64_t strides[3] = {h * w, w, 1};
    const std::int64_t extents[3] = {d, h, w};
    const auto phi = field.tensor().data();

    auto coord = [h, w](std::int64_t p, int axis) {
        return axis == 0 ? p / (h * w) : axis == 1 ? (p / w) % h : p % w;
    };
    double acc = 0.0;
    for (std::int64_t ch = 0; ch < 3; ++ch) {
        const T *v = phi.data() + ch * vox;
        for (std::int64_t p = 0; p < vox; ++p) {
            for (int a = 0; a < 3; ++a) {
                if (coord(p, a) + 1 >= extents[a]) continue;
                const double diff = static_cast<double>(v[p + strides[a]]) - static_cast<double>(v[p]);
                acc += diff * diff;
            }
        }
    }
    const double count = static_cast<double>(3 * vox);

    auto f_n = field.tensor().node();
    return Tensor<T>::make_result(
        {1}, {static_cast<T>(acc / count)}, {field.tensor()}, [f_n, vox, h, w, d, count](std::span<const T> g) {
            const std::int64_t strides[3] = {h * w, w, 1};
            const std::int64_t extents[3] = {d, h, w};
            auto gf = f_n->grad_buffer();
            const T k = static_cast<T>(2.0 * static_cast<double>(g[0]) / count);
            const auto &phi = f_n->data;
            parallel_for(3 * d, [&](std::int64_t cz) {
                const std::int64_t ch = cz / d;
                const T *v = phi.data() + ch * vox;
                T *dst = gf.data() + ch * vox;
                for (std::int64_t p = (cz % d) * h * w, end = p + h * w; p < end; ++p) {
                    const std::int64_t c3[3] = {p / (h * w), (p / w) % h, p % w};
                    T acc = 0;
                    for (int a = 0; a < 3; ++a) {
                        if (c3[a] > 0) acc += v[p] - v[p - strides[a]];
                        if (c3[a] + 1 < extents[a]) acc -= v[p + strides[a]] - v[p];
                    }
                    dst[p] += k * acc;
                }
            });
        });
}

template <typename T>
LabelVolume warp_labels(const LabelVolume &mask, const DisplacementField<T> &field) {
    require_same_spatial(mask.spatial(), field.tensor().shape(), "warp_labels");
    const std::int64_t d = mask.d, h = mask.h, w = mask.w, vox = d * h * w;
    const auto phi = field.tensor().data();
    auto nearest = [](T s, std::int64_t n) {
        const T sc = std::clamp(s, T(0), static_cast<T>(n - 1));
        return std::min<std::int64_t>(n - 1, static_cast<std::int64_t>(std::floor(sc + T(0.5))));
    };
    LabelVolume out(d, h, w);
    parallel_for(vox, [&](std::int64_t p) {
        const std::int64_t z = p / (h * w), y = (p / w) % h, x = p % w;
        const auto zi = nearest(static_cast<T>(z) + phi[p], d);
        const auto yi = nearest(static_cast<T>(y) + phi[vox + p], h);
        const auto xi = nearest(static_cast<T>(x) + phi[2 * vox + p], w);
        out.labels[p] = mask.at(zi, yi, xi);
    });
    return out;
}

template class DisplacementField<float>;
template class DisplacementField<double>;

#define CFW_INSTANTIATE_REG_OPS(T)                                                          \
    template Tensor<T> warp<T>(const Tensor<T> &, const DisplacementField<T> &);            \
    template DisplacementField<T> upsample_field<T>(const DisplacementField<T> &);          \
    template Tensor<T> correlation<T>(const Tensor<T> &, const Tensor<T> &, int);           \
    template Tensor<T> nlcc<T>(const Tensor<T> &, const Tensor<T> &, int, double);          \
    template Tensor<T> diffusion_reg<T>(const DisplacementField<T> &);                      \
    template LabelVolume warp_labels<T>(const LabelVolume &, const DisplacementField<T> &);

CFW_INSTANTIATE_REG_OPS(float)
CFW_INSTANTIATE_REG_OPS(double)

}  // namespace cfw
