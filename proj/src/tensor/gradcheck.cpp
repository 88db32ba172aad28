#include "cxr/tensor/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cxr/common/error.hpp"
#include "cxr/common/random.hpp"
#include "cxr/tensor/ops.hpp"

namespace cxr {

double relative_error(double analytic, double numeric, double floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

GradcheckResult gradcheck(const std::function<Variable()>& fn, std::vector<Variable> leaves,
                          const GradcheckOptions& options) {
  for (const auto& leaf : leaves) {
    require(leaf.requires_grad(), ErrorKind::kInvalidArgument, "gradcheck: leaf without grad");
  }
  Rng rng(derive_seed(options.seed, 0x6772616443686bULL));

  Variable probe = fn();
  require(probe.value().all_finite(), ErrorKind::kNonFinite, "gradcheck: op produced NaN/Inf");
  // Projecting onto fixed random weights turns any output into a scalar whose
  // gradient exercises every output coordinate.
  Tensor projection(probe.shape());
  for (double& w : projection.data()) w = uniform(rng, -1.0, 1.0);

  auto objective = [&]() {
    Variable out = fn();
    const double value = weighted_sum(out, projection).value().item();
    require(std::isfinite(value), ErrorKind::kNonFinite, "gradcheck: op produced NaN/Inf");
    return value;
  };

  for (auto& leaf : leaves) leaf.zero_grad();
  weighted_sum(fn(), projection).backward();
  std::vector<Tensor> analytic;
  for (auto& leaf : leaves) {
    analytic.push_back(leaf.has_grad() ? leaf.grad() : Tensor::zeros_like(leaf.value()));
  }

  GradcheckResult result;
  // Rounding noise of a central difference is about eps * |f| / h.
  const double f0 = std::abs(objective());
  auto noise_at = [&](double step) { return std::max(1e-9 * options.step / step, 64.0 * 2.2e-16 * f0 / step); };
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    Tensor& value = leaves[l].mutable_value();
    std::vector<std::size_t> coords(value.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (options.max_coords_per_leaf > 0 && coords.size() > options.max_coords_per_leaf) {
      shuffle(coords, rng);
      coords.resize(options.max_coords_per_leaf);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t i : coords) {
      const double original = value[i];
      auto central = [&](double step) {
        value[i] = original + step;
        const double up = objective();
        value[i] = original - step;
        const double down = objective();
        value[i] = original;
        return (up - down) / (2.0 * step);
      };
      // Smooth functions agree across step and step/2 to O(h^2); a kink
      // inside [x-h, x+h] does not. On disagreement retry closer in, since
      // the nearest kink may lie just beyond a smaller step.
      double h = options.step;
      double numeric = 0.0;
      bool smooth = false;
      for (int attempt = 0; attempt < 3 && !smooth; ++attempt, h /= 10.0) {
        numeric = central(h);
        const double numeric_half = central(h / 2.0);
        smooth = std::abs(numeric - numeric_half) <=
                 std::max(noise_at(h / 2.0), 1e-5 * std::max(std::abs(numeric), std::abs(numeric_half)));
      }
      if (!smooth) {
        ++result.skipped_nonsmooth;
        continue;
      }
      const double err = relative_error(analytic[l][i], numeric, options.floor);
      ++result.checked;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst = "leaf " + std::to_string(l) + " index " + std::to_string(i) + ": analytic " +
                       std::to_string(analytic[l][i]) + " numeric " + std::to_string(numeric);
      }
    }
  }
  return result;
}

GradcheckResult gradcheck(const std::function<Variable(const std::vector<Variable>&)>& fn,
                          const std::vector<Tensor>& inputs, const GradcheckOptions& options) {
  std::vector<Variable> leaves;
  for (const auto& t : inputs) leaves.emplace_back(t, true);
  return gradcheck([&] { return fn(leaves); }, leaves, options);
}

}  // namespace cxr
