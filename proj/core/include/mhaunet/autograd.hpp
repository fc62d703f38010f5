#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "mhaunet/tensor.hpp"

namespace mha {

// Reverse-mode tape. Each op produces a Node whose backward_fn reads the
// node's grad and accumulates into its parents' grads. Leaves (parameters,
// inputs) have no backward_fn. Graph edges are shared_ptrs from child to
// parent, so intermediates die with the loss node while leaves persist.
template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // allocated lazily during backward
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    Tensor<T>& grad_buf() {
        if (!grad.defined()) grad = Tensor<T>(value.shape());
        return grad;
    }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

namespace detail {
inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

// RAII scope that disables graph recording (inference / validation).
struct NoGradGuard {
    NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
    ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

template <typename T>
Var<T> make_leaf(Tensor<T> value, bool requires_grad = false) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad && grad_enabled();
    return n;
}

// Constant wrapper for tensors that never receive gradient (targets, masks).
template <typename T>
Var<T> constant(Tensor<T> value) {
    return make_leaf(std::move(value), false);
}

template <typename T>
Var<T> make_node(Tensor<T> value, std::vector<Var<T>> parents,
                 std::function<void(Node<T>&)> backward_fn) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    bool track = false;
    if (grad_enabled()) {
        for (const auto& p : parents)
            if (p && p->requires_grad) { track = true; break; }
    }
    if (track) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backward_fn = std::move(backward_fn);
    }
    return n;
}

// Accumulate g into the node's grad buffer.
template <typename T>
void accum(Node<T>& n, const Tensor<T>& g) {
    Tensor<T>& buf = n.grad_buf();
    const T* src = g.data();
    T* dst = buf.data();
    const int64_t m = buf.numel();
    for (int64_t i = 0; i < m; ++i) dst[i] += src[i];
}

// Backpropagate from a scalar root. Seeds the root grad with 1.
template <typename T>
void backward(const Var<T>& root) {
    check_shape(root && root->value.numel() == 1, "backward: root must be a scalar");
    if (!root->requires_grad) return;

    // Iterative post-order topsort.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, size_t>> stack;
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node<T>* p = node->parents[idx++].get();
            if (p && p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->grad_buf().fill(T(1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backward_fn && n->grad.defined()) n->backward_fn(*n);
    }
}

template <typename T>
void zero_grad(const std::vector<Var<T>>& params) {
    for (const auto& p : params)
        if (p && p->grad.defined()) p->grad.zero();
}

}  // namespace mha
