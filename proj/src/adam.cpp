#include "cfw/adam.hpp"

#include <cmath>

namespace cfw {

template <typename T>
void AdamState<T>::step(ParameterList<T> &params) {
    for (const auto &p : params) {
        if (!p.value.has_grad()) {
            throw Error(ErrorCode::MissingGradient, "parameter '" + p.name + "' has no gradient");
        }
    }
    if (m_.empty()) {
        for (const auto &p : params) {
            m_.emplace_back(static_cast<std::size_t>(p.value.numel()), T(0));
            v_.emplace_back(static_cast<std::size_t>(p.value.numel()), T(0));
        }
    }
    if (m_.size() != params.size()) {
        throw Error(ErrorCode::InvalidArgument, "parameter list changed between Adam steps");
    }

    ++step_;
    const double b1 = options_.beta1, b2 = options_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto &p = params[k].value;
        auto data = p.mutable_data();
        const auto grad = p.grad();
        auto &m = m_[k];
        auto &v = v_[k];
        if (m.size() != data.size()) {
            throw Error(ErrorCode::ShapeMismatch, "Adam moments do not match parameter '" + params[k].name + "'");
        }
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double g = grad[i];
            const double mi = b1 * m[i] + (1.0 - b1) * g;
            const double vi = b2 * v[i] + (1.0 - b2) * g * g;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            const double mhat = mi / c1;
            const double vhat = vi / c2;
            data[i] = static_cast<T>(data[i] - options_.lr * mhat / (std::sqrt(vhat) + options_.epsilon));
        }
        p.clear_grad();
    }
}

template class AdamState<float>;
template class AdamState<double>;

}  // namespace cfw
