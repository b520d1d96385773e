#include "cfw/tensor.hpp"

#include <unordered_set>

#include "cfw/parallel.hpp"

namespace cfw {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::ShapeMismatch: return "shape_mismatch";
        case ErrorCode::InvalidArgument: return "invalid_argument";
        case ErrorCode::MissingGradient: return "missing_gradient";
        case ErrorCode::NonFinite: return "non_finite";
        case ErrorCode::Io: return "io";
        case ErrorCode::Format: return "format";
        case ErrorCode::Config: return "config";
    }
    return "unknown";
}

namespace {
int g_threads = 1;
thread_local bool g_grad_enabled = true;
}  // namespace

void set_num_threads(int n) { g_threads = n < 1 ? 1 : n; }
int num_threads() { return g_threads; }

std::int64_t numel(const Shape &shape) {
    std::int64_t n = 1;
    for (auto d : shape) {
        if (d < 0) throw Error(ErrorCode::ShapeMismatch, "negative dimension in " + shape_str(shape));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape &shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool NoGradGuard::grad_enabled() { return g_grad_enabled; }

template <typename T>
T Tensor<T>::item() const {
    if (numel() != 1) {
        throw Error(ErrorCode::ShapeMismatch, "item() on tensor of shape " + shape_str(shape()));
    }
    return node_->data[0];
}

template <typename T>
void Tensor<T>::backward() const {
    if (numel() != 1) {
        throw Error(ErrorCode::ShapeMismatch, "backward() needs a scalar, got " + shape_str(shape()));
    }
    if (!node_->requires_grad) return;

    // Iterative post-order DFS; reversed, it is a topological order with the
    // root first, so each node runs after every consumer has contributed.
    std::vector<Node<T> *> order;
    std::unordered_set<Node<T> *> seen;
    std::vector<std::pair<Node<T> *, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto &[n, next] = stack.back();
        if (next < n->inputs.size()) {
            Node<T> *child = n->inputs[next++].get();
            if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    node_->grad_buffer()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T> *n = *it;
        if (!n->backward_fn) continue;
        n->grad_buffer();
        n->backward_fn(n->grad);
        if (n != node_.get()) {
            n->grad.clear();
            n->grad.shrink_to_fit();
        }
    }
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace cfw
