#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dgsp/tensor.hpp"

namespace dgsp {

// Reverse-mode autodiff over dense tensors. Each op builds a Node holding the
// forward value and a closure that routes the node's gradient to its parents.
// Graphs are built fresh per forward pass; leaves (parameters) persist across
// passes and accumulate gradients until zero_grad().

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until first touched
  bool requires_grad = false;
  bool is_leaf = false;
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void(Node<T>&)> backward_fn;

  Tensor<T>& ensure_grad() {
    if (grad.empty()) grad = Tensor<T>::zeros(value.shape());
    return grad;
  }
};

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(NodePtr<T> n) : n_(std::move(n)) {}

  static Var leaf(Tensor<T> v, bool requires_grad) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(v);
    n->requires_grad = requires_grad;
    n->is_leaf = true;
    return Var(n);
  }

  static Var constant(Tensor<T> v) { return leaf(std::move(v), false); }

  bool defined() const { return n_ != nullptr; }
  const Tensor<T>& value() const { return n_->value; }
  Tensor<T>& value() { return n_->value; }
  const Tensor<T>& grad() const { return n_->ensure_grad(); }
  bool requires_grad() const { return n_->requires_grad; }
  const Shape& shape() const { return n_->value.shape(); }
  long dim(int i) const { return n_->value.dim(i); }
  NodePtr<T> node() const { return n_; }

  void zero_grad() {
    if (!n_->grad.empty()) n_->grad.fill(T(0));
  }

  // Backpropagate from this (scalar) node. Seeds d(this)/d(this) = 1.
  void backward() const {
    if (n_->value.numel() != 1)
      throw ShapeError("backward() requires a scalar root, got " + shape_str(n_->value.shape()));
    n_->ensure_grad();
    n_->grad[0] += T(1);
    auto order = topo_order();
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node<T>* node = *it;
      if (node->requires_grad && node->backward_fn) {
        node->ensure_grad();
        node->backward_fn(*node);
      }
    }
  }

 private:
  // Iterative post-order DFS over the requires_grad subgraph.
  std::vector<Node<T>*> topo_order() const {
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, size_t>> stack;
    if (!n_->requires_grad) return order;
    stack.emplace_back(n_.get(), 0);
    visited.insert(n_.get());
    while (!stack.empty()) {
      auto& [node, idx] = stack.back();
      if (idx < node->parents.size()) {
        Node<T>* p = node->parents[idx++].get();
        if (p->requires_grad && !visited.count(p)) {
          visited.insert(p);
          stack.emplace_back(p, 0);
        }
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
    return order;
  }

  NodePtr<T> n_;
};

// Create an op node. When no parent requires grad the parents and closure are
// dropped so constant subgraphs are freed eagerly and never traversed.
template <typename T>
Var<T> make_op(Tensor<T> out, std::vector<Var<T>> parents,
               std::function<void(Node<T>&)> backward_fn) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(out);
  bool req = false;
  for (const auto& p : parents) req = req || p.requires_grad();
  n->requires_grad = req;
  if (req) {
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backward_fn = std::move(backward_fn);
  }
  return Var<T>(n);
}

// Detach: same value, no history. Gradient flow stops here exactly.
template <typename T>
Var<T> stop_grad(const Var<T>& x) {
  return Var<T>::constant(x.value());
}

}  // namespace dgsp
