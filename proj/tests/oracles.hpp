#pragma once

// Direct loop implementations used as independent references. Everything is
// plain nested loops over flat double arrays in [C, D, H, W] order; nothing
// here shares code with the library kernels.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "cfw/tensor.hpp"

namespace oracle {

struct Dims {
    int c, d, h, w;
    int vox() const { return d * h * w; }
    int size() const { return c * d * h * w; }
    int at(int ch, int z, int y, int x) const { return ((ch * d + z) * h + y) * w + x; }
};

inline std::vector<double> random_values(std::mt19937_64 &rng, int n, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(static_cast<std::size_t>(n));
    for (auto &x : v) x = u(rng);
    return v;
}

inline double max_rel_diff(const std::vector<double> &a, std::span<const double> b) {
    double scale = 0.0, worst = 0.0;
    for (double x : a) scale = std::max(scale, std::abs(x));
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double denom = std::max({std::abs(a[i]), std::abs(b[i]), 1e-3 * scale, 1e-12});
        worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
    }
    return worst;
}

// Seven nested loops (output channel, z, y, x, input channel, then the
// 3x3x3 kernel flattened into three more).
inline std::vector<double> conv3d(const std::vector<double> &in, Dims di, const std::vector<double> &weight,
                                  const std::vector<double> &bias, int cout, int stride) {
    const int od = (di.d + stride - 1) / stride, oh = (di.h + stride - 1) / stride, ow = (di.w + stride - 1) / stride;
    std::vector<double> out(static_cast<std::size_t>(cout * od * oh * ow));
    for (int o = 0; o < cout; ++o)
        for (int z = 0; z < od; ++z)
            for (int y = 0; y < oh; ++y)
                for (int x = 0; x < ow; ++x) {
                    double acc = bias[o];
                    for (int c = 0; c < di.c; ++c)
                        for (int kz = 0; kz < 3; ++kz)
                            for (int ky = 0; ky < 3; ++ky)
                                for (int kx = 0; kx < 3; ++kx) {
                                    const int iz = z * stride + kz - 1, iy = y * stride + ky - 1,
                                              ix = x * stride + kx - 1;
                                    if (iz < 0 || iz >= di.d || iy < 0 || iy >= di.h || ix < 0 || ix >= di.w) continue;
                                    acc += weight[(((o * di.c + c) * 3 + kz) * 3 + ky) * 3 + kx] *
                                           in[di.at(c, iz, iy, ix)];
                                }
                    out[((o * od + z) * oh + y) * ow + x] = acc;
                }
    return out;
}

// Value of channel `ch` at a continuous point, coordinates clamped to the
// volume, as the weighted sum of the 8 surrounding voxels.
inline double sample(const std::vector<double> &in, Dims di, int ch, double z, double y, double x) {
    const double p[3] = {std::clamp(z, 0.0, di.d - 1.0), std::clamp(y, 0.0, di.h - 1.0), std::clamp(x, 0.0, di.w - 1.0)};
    const int n[3] = {di.d, di.h, di.w};
    int lo[3], hi[3];
    double t[3];
    for (int a = 0; a < 3; ++a) {
        lo[a] = static_cast<int>(std::floor(p[a]));
        hi[a] = std::min(lo[a] + 1, n[a] - 1);
        t[a] = p[a] - lo[a];
    }
    double v = 0.0;
    for (int corner = 0; corner < 8; ++corner) {
        const int bz = (corner >> 2) & 1, by = (corner >> 1) & 1, bx = corner & 1;
        const double wgt = (bz ? t[0] : 1 - t[0]) * (by ? t[1] : 1 - t[1]) * (bx ? t[2] : 1 - t[2]);
        if (wgt == 0.0) continue;
        v += wgt * in[di.at(ch, bz ? hi[0] : lo[0], by ? hi[1] : lo[1], bx ? hi[2] : lo[2])];
    }
    return v;
}

// field is [3, D, H, W] with channel k the displacement along axis k.
inline std::vector<double> warp(const std::vector<double> &in, Dims di, const std::vector<double> &field) {
    const Dims df{3, di.d, di.h, di.w};
    std::vector<double> out(static_cast<std::size_t>(di.size()));
    for (int c = 0; c < di.c; ++c)
        for (int z = 0; z < di.d; ++z)
            for (int y = 0; y < di.h; ++y)
                for (int x = 0; x < di.w; ++x) {
                    out[di.at(c, z, y, x)] = sample(in, di, c, z + field[df.at(0, z, y, x)],
                                                    y + field[df.at(1, z, y, x)], x + field[df.at(2, z, y, x)]);
                }
    return out;
}

// Interpolate at the half-voxel aligned coarse coordinate, then scale by 2.
inline std::vector<double> upsample_field(const std::vector<double> &field, Dims df) {
    const Dims dout{3, 2 * df.d, 2 * df.h, 2 * df.w};
    std::vector<double> out(static_cast<std::size_t>(dout.size()));
    for (int c = 0; c < 3; ++c)
        for (int z = 0; z < dout.d; ++z)
            for (int y = 0; y < dout.h; ++y)
                for (int x = 0; x < dout.w; ++x) {
                    out[dout.at(c, z, y, x)] =
                        2.0 * sample(field, df, c, (z + 0.5) / 2 - 0.5, (y + 0.5) / 2 - 0.5, (x + 0.5) / 2 - 0.5);
                }
    return out;
}

inline std::vector<double> avg_downsample2(const std::vector<double> &in, Dims di) {
    const Dims dout{di.c, di.d / 2, di.h / 2, di.w / 2};
    std::vector<double> out(static_cast<std::size_t>(dout.size()));
    for (int c = 0; c < di.c; ++c)
        for (int z = 0; z < dout.d; ++z)
            for (int y = 0; y < dout.h; ++y)
                for (int x = 0; x < dout.w; ++x) {
                    double s = 0.0;
                    for (int k = 0; k < 8; ++k) s += in[di.at(c, 2 * z + (k >> 2), 2 * y + ((k >> 1) & 1), 2 * x + (k & 1))];
                    out[dout.at(c, z, y, x)] = s / 8.0;
                }
    return out;
}

inline std::vector<double> correlation(const std::vector<double> &f, const std::vector<double> &m, Dims di, int range) {
    const int side = 2 * range + 1;
    const Dims dout{side * side * side, di.d, di.h, di.w};
    std::vector<double> out(static_cast<std::size_t>(dout.size()), 0.0);
    int o = 0;
    for (int dz = -range; dz <= range; ++dz)
        for (int dy = -range; dy <= range; ++dy)
            for (int dx = -range; dx <= range; ++dx, ++o)
                for (int z = 0; z < di.d; ++z)
                    for (int y = 0; y < di.h; ++y)
                        for (int x = 0; x < di.w; ++x) {
                            const int sz = z + dz, sy = y + dy, sx = x + dx;
                            if (sz < 0 || sz >= di.d || sy < 0 || sy >= di.h || sx < 0 || sx >= di.w) continue;
                            double acc = 0.0;
                            for (int c = 0; c < di.c; ++c) acc += f[di.at(c, z, y, x)] * m[di.at(c, sz, sy, sx)];
                            out[dout.at(o, z, y, x)] = acc / di.c;
                        }
    return out;
}

// Window statistics gathered voxel by voxel, centered sums computed from the
// explicit window means.
inline double nlcc(const std::vector<double> &warped, const std::vector<double> &fixed, Dims di, int window,
                   double eps = 1e-5) {
    const int r = window / 2;
    double total = 0.0;
    for (int z = 0; z < di.d; ++z)
        for (int y = 0; y < di.h; ++y)
            for (int x = 0; x < di.w; ++x) {
                std::vector<double> fs, ms;
                for (int a = std::max(0, z - r); a <= std::min(di.d - 1, z + r); ++a)
                    for (int b = std::max(0, y - r); b <= std::min(di.h - 1, y + r); ++b)
                        for (int c = std::max(0, x - r); c <= std::min(di.w - 1, x + r); ++c) {
                            fs.push_back(fixed[di.at(0, a, b, c)]);
                            ms.push_back(warped[di.at(0, a, b, c)]);
                        }
                double fbar = 0.0, mbar = 0.0;
                for (std::size_t i = 0; i < fs.size(); ++i) {
                    fbar += fs[i];
                    mbar += ms[i];
                }
                fbar /= fs.size();
                mbar /= ms.size();
                double cross = 0.0, vf = 0.0, vm = 0.0;
                for (std::size_t i = 0; i < fs.size(); ++i) {
                    cross += (fs[i] - fbar) * (ms[i] - mbar);
                    vf += (fs[i] - fbar) * (fs[i] - fbar);
                    vm += (ms[i] - mbar) * (ms[i] - mbar);
                }
                total += cross * cross / (vf * vm + eps);
            }
    return -total / di.vox();
}

inline double diffusion_reg(const std::vector<double> &field, Dims df) {
    double s = 0.0;
    for (int c = 0; c < 3; ++c)
        for (int z = 0; z < df.d; ++z)
            for (int y = 0; y < df.h; ++y)
                for (int x = 0; x < df.w; ++x) {
                    const double v = field[df.at(c, z, y, x)];
                    if (z + 1 < df.d) s += std::pow(field[df.at(c, z + 1, y, x)] - v, 2);
                    if (y + 1 < df.h) s += std::pow(field[df.at(c, z, y + 1, x)] - v, 2);
                    if (x + 1 < df.w) s += std::pow(field[df.at(c, z, y, x + 1)] - v, 2);
                }
    return s / (3.0 * df.vox());
}

}  // namespace oracle
