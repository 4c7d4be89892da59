#include "taco/autograd.hpp"

#include <unordered_map>
#include <unordered_set>

namespace taco {
namespace ag {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

void Node::accumulate(const Tensor& g) {
  if (!requires_grad) return;
  if (!grad.defined()) {
    grad = Tensor::zeros(value.shape());
  }
  TACO_CHECK(grad.same_shape(g), ShapeError,
             "gradient shape " + g.shape_str() + " does not match value shape " + grad.shape_str());
  double* dst = grad.data();
  const double* src = g.data();
  for (std::int64_t i = 0; i < g.size(); ++i) dst[i] += src[i];
}

Variable::Variable(Tensor value, bool requires_grad) {
  node_ = std::make_shared<Node>();
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

const Tensor& Variable::grad() const {
  TACO_CHECK(node_ && node_->grad.defined(), InternalError, "grad accessed before backward");
  return node_->grad;
}

Variable Variable::detach() const {
  Variable v;
  if (node_) {
    v.node_ = std::make_shared<Node>();
    v.node_->value = node_->value;
    v.node_->requires_grad = false;
  }
  return v;
}

Variable Variable::from_node(NodePtr n) {
  Variable v;
  v.node_ = std::move(n);
  return v;
}

void Variable::zero_grad() {
  if (node_ && node_->grad.defined()) node_->grad.fill(0.0);
}

void Variable::backward() const {
  TACO_CHECK(node_, InternalError, "backward on empty Variable");
  TACO_CHECK(node_->value.size() == 1, ShapeError,
             "backward requires a scalar root, got " + node_->value.shape_str());

  // Iterative DFS postorder; graphs can be thousands of nodes deep.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->accumulate(Tensor::ones(node_->value.shape()));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->grad.defined()) n->backward_fn(*n);
  }
}

Variable make_op(Tensor value, std::vector<Variable> parents,
                 std::function<void(Node&)> backward_fn) {
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) {
      if (p.requires_grad()) {
        needs = true;
        break;
      }
    }
  }
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = needs;
  if (needs) {
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Variable::from_node(std::move(node));
}

}  // namespace ag
}  // namespace taco
