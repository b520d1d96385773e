#pragma once

#include <vector>

#include "cfw/tensor.hpp"

// Differentiable primitives. 4-D feature maps use [C, D, H, W] layout.
namespace cfw {

// 3x3x3 convolution, zero padding 1, stride 1 or 2. Output spatial size is
// ceil(n / stride). weight is [C_out, C_in, 3, 3, 3], bias is [C_out].
template <typename T>
Tensor<T> conv3d(const Tensor<T> &input, const Tensor<T> &weight, const Tensor<T> &bias, int stride);

template <typename T>
Tensor<T> leaky_relu(const Tensor<T> &input, T slope);

// Mean over 2x2x2 blocks; spatial dims must be even.
template <typename T>
Tensor<T> avg_downsample2(const Tensor<T> &input);

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>> &inputs);

template <typename T>
Tensor<T> add(const Tensor<T> &a, const Tensor<T> &b);

template <typename T>
Tensor<T> scale(const Tensor<T> &a, T factor);

template <typename T>
Tensor<T> sum(const Tensor<T> &a);

template <typename T>
Tensor<T> mean(const Tensor<T> &a);

// Full contraction sum(a * b) to a scalar.
template <typename T>
Tensor<T> dot(const Tensor<T> &a, const Tensor<T> &b);

// Throws unless t is 4-D; `what` names the argument in the message.
template <typename T>
void require_4d(const Tensor<T> &t, const char *what);

}  // namespace cfw
