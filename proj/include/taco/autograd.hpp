#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "taco/tensor.hpp"

namespace taco {
namespace ag {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One tape entry: the produced value, the accumulated gradient, and a
// closure that pushes this node's gradient into its parents.
struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward_fn;

  void accumulate(const Tensor& g);
};

// Differentiable handle with shared-graph semantics. A Variable without
// parents is a leaf; parameters are long-lived leaves whose grad persists
// across backward() calls until zero_grad().
class Variable {
 public:
  Variable() = default;
  explicit Variable(Tensor value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const;
  bool has_grad() const { return node_ && node_->grad.defined(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  // Same value, cut from the tape.
  Variable detach() const;

  // Reverse sweep from a scalar (size-1) root.
  void backward() const;
  void zero_grad();

  const NodePtr& node() const { return node_; }
  static Variable from_node(NodePtr n);

  std::int64_t size() const { return node_->value.size(); }
  const std::vector<std::int64_t>& shape() const { return node_->value.shape(); }

 private:
  NodePtr node_;
};

// Scoped guard that disables tape construction (inference forwards).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

// Builds an op node. If taping is disabled or no parent requires grad, the
// result is a detached leaf and `backward_fn` is dropped.
Variable make_op(Tensor value, std::vector<Variable> parents,
                 std::function<void(Node&)> backward_fn);

}  // namespace ag
}  // namespace taco
