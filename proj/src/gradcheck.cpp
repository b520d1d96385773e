#include "cfw/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "cfw/ops.hpp"

namespace cfw {

namespace {

double eval_loss(const std::function<TensorD()> &loss) {
    NoGradGuard guard;
    const double v = loss().item();
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFinite, "gradcheck: forward produced a non-finite value");
    return v;
}

}  // namespace

GradcheckResult gradcheck_scalar(const std::function<TensorD()> &loss, TensorD wrt, const GradcheckOptions &options,
                                 std::span<const std::int64_t> indices) {
    const double perturbation = options.perturbation, tolerance = options.tolerance;
    if (!(perturbation > 0.0)) throw Error(ErrorCode::InvalidArgument, "gradcheck perturbation must be > 0");
    for (double v : wrt.data()) {
        if (!std::isfinite(v)) throw Error(ErrorCode::NonFinite, "gradcheck: non-finite input");
    }

    const bool had_flag = wrt.requires_grad();
    wrt.set_requires_grad(true);
    wrt.clear_grad();
    TensorD out = loss();
    if (!std::isfinite(out.item())) throw Error(ErrorCode::NonFinite, "gradcheck: forward produced a non-finite value");
    out.backward();
    std::vector<double> analytic(wrt.grad().begin(), wrt.grad().end());
    if (analytic.empty()) analytic.assign(static_cast<std::size_t>(wrt.numel()), 0.0);
    wrt.clear_grad();
    wrt.set_requires_grad(had_flag);

    std::vector<std::int64_t> all;
    if (indices.empty()) {
        all.resize(static_cast<std::size_t>(wrt.numel()));
        std::iota(all.begin(), all.end(), 0);
        indices = all;
    }

    auto data = wrt.mutable_data();
    auto central = [&](std::size_t i, double step) {
        const double saved = data[i];
        data[i] = saved + step;
        const double plus = eval_loss(loss);
        data[i] = saved - step;
        const double minus = eval_loss(loss);
        data[i] = saved;
        return (plus - minus) / (2.0 * step);
    };
    std::vector<double> numeric(indices.size());
    for (std::size_t k = 0; k < indices.size(); ++k) numeric[k] = central(static_cast<std::size_t>(indices[k]), perturbation);

    double scale = 0.0;
    for (std::size_t k = 0; k < indices.size(); ++k) {
        scale = std::max({scale, std::abs(analytic[static_cast<std::size_t>(indices[k])]), std::abs(numeric[k])});
    }
    GradcheckResult result;
    result.checked = static_cast<std::int64_t>(indices.size());
    if (scale == 0.0) return result;
    const double floor = options.floor_fraction * scale;
    auto rel_error = [floor](double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor}); };
    for (std::size_t k = 0; k < indices.size(); ++k) {
        const double a = analytic[static_cast<std::size_t>(indices[k])];
        double n = numeric[k];
        double err = rel_error(a, n);
        if (err >= tolerance && !options.fallback.empty()) {
            for (double step : options.fallback) {
                const double n2 = central(static_cast<std::size_t>(indices[k]), step);
                const double err2 = rel_error(a, n2);
                if (err2 < err) {
                    err = err2;
                    n = n2;
                }
                if (err < tolerance) break;
            }
            if (err < tolerance) ++result.refined;
        }
        if (err > result.max_rel_error || result.worst_index < 0) {
            result.max_rel_error = err;
            result.worst_index = indices[k];
            result.analytic = a;
            result.numeric = n;
        }
    }
    return result;
}

GradcheckResult gradcheck(const std::function<TensorD(const TensorD &)> &op, const TensorD &input,
                          double perturbation, std::uint64_t seed) {
    TensorD x = input.detach();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    TensorD projection;
    auto loss = [&]() -> TensorD {
        TensorD y = op(x);
        if (!projection.defined()) {
            std::vector<double> r(static_cast<std::size_t>(y.numel()));
            for (auto &v : r) v = uni(rng);
            projection = TensorD::from_data(y.shape(), std::move(r));
        }
        return dot(y, projection);
    };
    return gradcheck_scalar(loss, x, perturbation);
}

}  // namespace cfw
