#include "cxr/tensor/variable.hpp"

#include <unordered_set>

#include "cxr/common/error.hpp"

namespace cxr {

Variable::Variable(Tensor value, bool requires_grad) : node_(std::make_shared<detail::Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

void Variable::zero_grad() { node_->grad = Tensor(); }

Variable Variable::make(Tensor value, const char* op, std::vector<Variable> inputs,
                        std::function<void(detail::Node&)> backward) {
  Variable out(std::move(value), false);
  out.node_->op = op;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (any) {
    out.node_->requires_grad = true;
    out.node_->inputs.reserve(inputs.size());
    for (auto& in : inputs) out.node_->inputs.push_back(in.node_);
    out.node_->backward = std::move(backward);
  }
  return out;
}

std::size_t Variable::backward() {
  require(node_->value.size() == 1, ErrorKind::kShapeMismatch,
          "backward() without a seed needs a scalar root");
  return backward(Tensor(node_->value.shape(), 1.0));
}

std::size_t Variable::backward(const Tensor& seed) {
  require(seed.shape() == node_->value.shape(), ErrorKind::kShapeMismatch,
          "backward seed shape mismatch");
  if (!node_->requires_grad) return 0;

  // Iterative post-order DFS gives a topological order of the subgraph that
  // requires grad; reversing it visits each op once after all its consumers.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  add_into(node_->grad_buffer(), seed);
  std::size_t visited = 0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backward && !node->grad.is_null()) {
      node->backward(*node);
      ++visited;
    }
  }
  return visited;
}

}  // namespace cxr
