#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "cfw/tensor.hpp"

namespace cfw {

struct GradcheckResult {
    double max_rel_error = 0.0;
    std::int64_t worst_index = -1;
    double analytic = 0.0;  // at worst_index
    double numeric = 0.0;   // at worst_index
    std::int64_t checked = 0;
    std::int64_t refined = 0;  // elements settled by a fallback step
};

struct GradcheckOptions {
    double perturbation = 1e-6;
    // Per element the error is |a - n| / max(|a|, |n|, floor_fraction * s)
    // with s = max_k(|a_k|, |n_k|): entries negligible next to the
    // gradient's scale are judged absolutely. 1 makes it a max-norm error.
    double floor_fraction = 1e-3;
    // Through piecewise-smooth ops (leaky_relu, trilinear cells) a step can
    // straddle a kink and spoil that element's central difference, and tiny
    // entries can sink into roundoff. An element whose error is >= `tolerance`
    // is re-measured at the `fallback` steps in order, stopping at the first
    // that agrees, and keeps its smallest error. A wrong backward rule
    // disagrees at every step.
    std::vector<double> fallback;
    double tolerance = 0.0;
};

// Compares d(loss)/d(wrt) from the backward pass against central finite
// differences, perturbing `wrt` in place. `indices` restricts the check to a
// subset of elements (empty = all).
GradcheckResult gradcheck_scalar(const std::function<TensorD()> &loss, TensorD wrt, const GradcheckOptions &options,
                                 std::span<const std::int64_t> indices = {});

inline GradcheckResult gradcheck_scalar(const std::function<TensorD()> &loss, TensorD wrt, double perturbation,
                                        std::span<const std::int64_t> indices = {}) {
    GradcheckOptions o;
    o.perturbation = perturbation;
    return gradcheck_scalar(loss, std::move(wrt), o, indices);
}

// Checks an arbitrary-shaped op by contracting its output with a fixed random
// projection (seeded), then running gradcheck_scalar w.r.t. a copy of `input`.
GradcheckResult gradcheck(const std::function<TensorD(const TensorD &)> &op, const TensorD &input,
                          double perturbation, std::uint64_t seed = 7);

}  // namespace cfw
