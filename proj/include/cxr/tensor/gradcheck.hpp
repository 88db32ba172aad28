#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cxr/tensor/variable.hpp"

namespace cxr {

struct GradcheckOptions {
  double step = 1e-5;
  std::uint64_t seed = 0;
  // Denominator floor of the relative error, so exact zeros compare cleanly.
  double floor = 1e-6;
  // 0 checks every coordinate; otherwise a seeded sample per leaf.
  std::size_t max_coords_per_leaf = 0;
};

struct GradcheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  // Coordinates where the function is not differentiable at the probe scale
  // (ReLU kinks, pooling ties): central differences at step and step/2
  // disagree.
  std::size_t skipped_nonsmooth = 0;
  std::string worst;
};

double relative_error(double analytic, double numeric, double floor);

// Compares reverse-mode gradients of a random projection of fn() against
// central finite differences, perturbing each leaf's value in place. The
// leaves must require grad; fn must rebuild the graph from them on each call.
GradcheckResult gradcheck(const std::function<Variable()>& fn, std::vector<Variable> leaves,
                          const GradcheckOptions& options);

// Convenience form: leaves are fresh variables holding `inputs`.
GradcheckResult gradcheck(const std::function<Variable(const std::vector<Variable>&)>& fn,
                          const std::vector<Tensor>& inputs, const GradcheckOptions& options);

}  // namespace cxr
