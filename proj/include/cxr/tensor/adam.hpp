#pragma once

#include <cstdint>
#include <vector>

#include "cxr/tensor/variable.hpp"

namespace cxr {

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::int64_t step = 0;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
};

// One bias-corrected Adam update of params in place. A null grad counts as
// zero. Throws kNonFinite on a non-finite gradient before touching anything.
void adam_step(std::vector<Tensor*> params, const std::vector<const Tensor*>& grads,
               AdamState& state, const AdamOptions& options);

class Adam {
 public:
  Adam(std::vector<Variable> params, AdamOptions options);

  void step();
  void zero_grad();
  double lr() const { return options_.lr; }
  void set_lr(double lr) { options_.lr = lr; }
  const AdamState& state() const { return state_; }
  void set_state(AdamState state);

 private:
  std::vector<Variable> params_;
  AdamOptions options_;
  AdamState state_;
};

}  // namespace cxr
