#pragma once

#include <string>
#include <vector>

#include "cfw/tensor.hpp"

namespace cfw {

template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
};

template <typename T>
using ParameterList = std::vector<Parameter<T>>;

struct AdamOptions {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// Moment buffers are keyed by position in the parameter list, so the same
// list (same order) must be passed to every step.
template <typename T>
class AdamState {
public:
    explicit AdamState(AdamOptions options = {}) : options_(options) {}

    const AdamOptions &options() const { return options_; }
    long step_count() const { return step_; }
    const std::vector<std::vector<T>> &first_moments() const { return m_; }
    const std::vector<std::vector<T>> &second_moments() const { return v_; }

    // One bias-corrected Adam update over every parameter, then clears the
    // gradients. Every parameter must carry a gradient.
    void step(ParameterList<T> &params);

private:
    AdamOptions options_;
    long step_ = 0;
    std::vector<std::vector<T>> m_, v_;
};

template <typename T>
void adam_step(ParameterList<T> &params, AdamState<T> &state) {
    state.step(params);
}

extern template class AdamState<float>;
extern template class AdamState<double>;

}  // namespace cfw
