#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cfw/error.hpp"

namespace cfw {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape &shape);
std::string shape_str(const Shape &shape);

// While disabled, new results never record backward rules. Used for evaluation.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard &) = delete;
    NoGradGuard &operator=(const NoGradGuard &) = delete;

    static bool grad_enabled();

private:
    bool prev_;
};

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until something accumulates into it
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    // Reads the gradient of this node and accumulates into the inputs.
    std::function<void(std::span<const T>)> backward_fn;

    std::span<T> grad_buffer() {
        if (grad.empty()) grad.assign(data.size(), T(0));
        return grad;
    }
};

// Reference-semantics handle onto a node of the reverse-mode graph. Copies
// share storage; results of operations own fresh storage.
template <typename T>
class Tensor {
public:
    using value_type = T;
    using NodePtr = std::shared_ptr<Node<T>>;

    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return full(std::move(shape), T(0), requires_grad);
    }

    static Tensor full(Shape shape, T value, bool requires_grad = false) {
        const auto n = cfw::numel(shape);
        return from_data(std::move(shape), std::vector<T>(static_cast<std::size_t>(n), value),
                         requires_grad);
    }

    static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
        if (cfw::numel(shape) != static_cast<std::int64_t>(data.size())) {
            throw Error(ErrorCode::ShapeMismatch, "data length " + std::to_string(data.size()) +
                                                      " does not match shape " + shape_str(shape));
        }
        auto node = std::make_shared<Node<T>>();
        node->shape = std::move(shape);
        node->data = std::move(data);
        node->requires_grad = requires_grad;
        return Tensor(std::move(node));
    }

    // Builds an operation result. The backward rule is recorded only if some
    // input requires a gradient and grad mode is on.
    static Tensor make_result(Shape shape, std::vector<T> data, const std::vector<Tensor> &inputs,
                              std::function<void(std::span<const T>)> backward_fn) {
        Tensor out = from_data(std::move(shape), std::move(data));
        if (!NoGradGuard::grad_enabled()) return out;
        bool any = false;
        for (const auto &in : inputs) any = any || in.requires_grad();
        if (!any) return out;
        out.node_->requires_grad = true;
        for (const auto &in : inputs) out.node_->inputs.push_back(in.node_);
        out.node_->backward_fn = std::move(backward_fn);
        return out;
    }

    bool defined() const { return node_ != nullptr; }
    const Shape &shape() const { return node_->shape; }
    std::int64_t dim(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t rank() const { return node_->shape.size(); }
    std::int64_t numel() const { return static_cast<std::int64_t>(node_->data.size()); }

    std::span<const T> data() const { return node_->data; }
    // Direct writes bypass the graph; meant for leaves (parameters, inputs).
    std::span<T> mutable_data() { return node_->data; }
    T item() const;

    bool requires_grad() const { return node_ && node_->requires_grad; }
    void set_requires_grad(bool value) { node_->requires_grad = value; }
    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const T> grad() const { return node_->grad; }
    std::span<T> grad_buffer() { return node_->grad_buffer(); }
    void clear_grad() { node_->grad.clear(); }

    // Values only, detached from the graph.
    Tensor detach() const { return from_data(shape(), node_->data); }

    // Reverse-mode sweep from this scalar. Gradients are retained on leaves
    // and released on intermediate nodes once propagated.
    void backward() const;

    const NodePtr &node() const { return node_; }

private:
    explicit Tensor(NodePtr node) : node_(std::move(node)) {}

    NodePtr node_;
};

// Accumulates `src` into the gradient buffer of `node` if it tracks one.
template <typename T>
inline void accumulate_grad(const std::shared_ptr<Node<T>> &node, std::span<const T> src) {
    if (!node->requires_grad) return;
    auto dst = node->grad_buffer();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

extern template class Tensor<float>;
extern template class Tensor<double>;

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace cfw
