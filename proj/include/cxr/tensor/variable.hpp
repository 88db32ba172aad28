#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "cxr/tensor/tensor.hpp"

namespace cxr {

class Variable;

namespace detail {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the inputs' grads.
  std::function<void(Node&)> backward;

  Tensor& grad_buffer() {
    if (grad.is_null()) grad = Tensor::zeros_like(value);
    return grad;
  }
};

}  // namespace detail

// Handle to a node of the reverse-mode graph. Copies share the node.
class Variable {
 public:
  Variable() = default;
  explicit Variable(Tensor value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  // Direct access for optimizer updates and finite-difference probes.
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.is_null(); }
  const Tensor& grad() const { return node_->grad; }
  void zero_grad();
  const char* op() const { return node_->op; }

  // Seeds d(self)/d(self) = 1 for scalar roots. Returns the number of op
  // nodes whose backward ran.
  std::size_t backward();
  std::size_t backward(const Tensor& seed);

  Variable detach() const { return Variable(node_->value, false); }

  // Used by op implementations.
  static Variable make(Tensor value, const char* op, std::vector<Variable> inputs,
                       std::function<void(detail::Node&)> backward);
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

}  // namespace cxr
