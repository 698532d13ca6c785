#pragma once

#include "fusedepth/tensor.hpp"

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

namespace fusedepth {

/// One vertex of the reverse-mode graph. The backward callback reads
/// `grad` and accumulates into the parents that require gradients.
template <typename Scalar>
struct Node {
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  /// Lazily allocates the gradient buffer.
  ArrayRM<Scalar>& grad_buffer() {
    if (grad.shape() != value.shape()) grad = Tensor<Scalar>::zeros(value.shape());
    return grad.values();
  }
  template <typename Derived>
  void accumulate(const Eigen::ArrayBase<Derived>& g) {
    grad_buffer() += g;
  }
};

/// Handle to a graph node. Copies share the node.
template <typename Scalar>
class Var {
 public:
  using NodePtr = std::shared_ptr<Node<Scalar>>;

  Var() = default;
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  static Var constant(Tensor<Scalar> value) {
    auto n = std::make_shared<Node<Scalar>>();
    n->value = std::move(value);
    return Var(std::move(n));
  }
  static Var parameter(Tensor<Scalar> value) {
    auto n = std::make_shared<Node<Scalar>>();
    n->value = std::move(value);
    n->requires_grad = true;
    return Var(std::move(n));
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor<Scalar>& value() const { return node_->value; }
  Tensor<Scalar>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }

  /// Gradient after backward(); zeros if the node never received one.
  Tensor<Scalar> grad() const {
    if (node_->grad.shape() != node_->value.shape()) return Tensor<Scalar>::zeros(shape());
    return node_->grad;
  }
  void zero_grad() { node_->grad = Tensor<Scalar>(); }

  const NodePtr& node() const { return node_; }
  Scalar item() const { return node_->value.values()(0, 0); }

 private:
  NodePtr node_;
};

/// Builds an interior node. `fn` is only attached when some parent needs
/// gradients; otherwise the result is a constant.
template <typename Scalar>
Var<Scalar> make_node(Tensor<Scalar> value, std::vector<std::shared_ptr<Node<Scalar>>> parents,
                      std::function<void(Node<Scalar>&)> fn) {
  auto n = std::make_shared<Node<Scalar>>();
  n->value = std::move(value);
  for (const auto& p : parents) n->requires_grad = n->requires_grad || p->requires_grad;
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward = std::move(fn);
  }
  return Var<Scalar>(std::move(n));
}

/// Reverse sweep from `root`, seeding d(root) = seed (ones by default).
template <typename Scalar>
void backward(const Var<Scalar>& root, Scalar seed = Scalar(1)) {
  using NodeT = Node<Scalar>;
  if (!root.requires_grad()) return;

  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> visited;
  std::vector<std::pair<NodeT*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodeT* parent = node->parents[next++].get();
      if (parent->requires_grad && !visited.count(parent)) {
        visited.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer().setConstant(seed);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* node = *it;
    if (node->backward && node->grad.shape() == node->value.shape()) node->backward(*node);
    // Interior buffers are no longer needed once propagated.
    if (node->backward) node->grad = Tensor<Scalar>();
  }
}

}  // namespace fusedepth
