// Reverse-mode automatic differentiation on a dynamically built graph.
//
// Each op produces a Node holding its output value, links to its parents and
// a closure that routes the node's gradient to them. backward() walks the
// graph once in reverse topological order; a node consumed by several
// downstream ops accumulates the sum of their contributions.
#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "shiftlab/tensor.hpp"

namespace shiftlab {

template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // allocated lazily, same shape as value
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;  // reads this->grad, accumulates into parents
    const char* op_name = "leaf";

    explicit Node(Tensor<T> v) : value(std::move(v)) {}

    void ensure_grad() {
        if (grad.empty()) grad = Tensor<T>::zeros(value.shape());
    }
};

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
NodePtr<T> make_leaf(Tensor<T> value) {
    return std::make_shared<Node<T>>(std::move(value));
}

namespace detail {

// Iterative post-order DFS; parents are visited in their stored order so the
// traversal (and thus gradient accumulation order) is deterministic.
template <typename T>
std::vector<Node<T>*> topo_order(Node<T>* root) {
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* parent = node->parents[next++].get();
            if (visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;  // parents precede children
}

}  // namespace detail

// Populates grad on every node reachable from `loss`. `loss` must be scalar.
template <typename T>
void backward(const NodePtr<T>& loss) {
    if (loss->value.numel() != 1)
        throw shape_error("backward requires a scalar loss, got shape " + shape_str(loss->value.shape()));
    auto order = detail::topo_order(loss.get());
    loss->ensure_grad();
    loss->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* node = *it;
        if (node->backprop && !node->grad.empty()) node->backprop(*node);
    }
}

// Adds `delta` into `node.grad`, allocating it on first touch.
template <typename T>
void accumulate_grad(Node<T>& node, const Tensor<T>& delta) {
    node.ensure_grad();
    T* g = node.grad.data();
    const T* d = delta.data();
    const std::int64_t n = delta.numel();
    for (std::int64_t i = 0; i < n; ++i) g[i] += d[i];
}

}  // namespace shiftlab
