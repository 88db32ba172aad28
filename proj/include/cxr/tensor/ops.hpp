#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cxr/common/random.hpp"
#include "cxr/tensor/variable.hpp"

namespace cxr {

enum class Mode { kTrain, kEval, kCollectStats };

// Running statistics owned by a batch-norm layer.
struct BatchNormStats {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.9;  // weight kept on the old running value
  double eps = 1e-5;
  // Accumulators for kCollectStats.
  std::vector<double> collect_sum;
  std::vector<double> collect_sumsq;
  std::int64_t collect_count = 0;

  explicit BatchNormStats(std::int64_t channels = 0);
  std::int64_t channels() const { return running_mean.is_null() ? 0 : running_mean.dim(0); }
  void begin_collection();
  // Replaces the running statistics with the population statistics gathered
  // since begin_collection().
  void finish_collection();
};

// conv2d: cross-correlation, NCHW input, OIHW kernel, no bias.
Variable conv2d(const Variable& input, const Variable& kernel, int stride, int padding);
Variable max_pool2d(const Variable& input, int window = 2, int stride = 2, int padding = 0);
Variable avg_pool2d(const Variable& input, int window = 2, int stride = 2);
Variable batch_norm2d(const Variable& input, const Variable& gamma, const Variable& beta,
                      BatchNormStats& stats, Mode mode);
Variable relu(const Variable& input);
// Saturates at the nearest representable values inside (0, 1).
Variable sigmoid(const Variable& input);
Variable concat_channels(const std::vector<Variable>& inputs);
std::vector<Variable> split_channels(const Variable& input, const std::vector<std::int64_t>& sizes);
Variable global_avg_pool(const Variable& input);
// input (N, in), weight (out, in), bias (out)
Variable linear(const Variable& input, const Variable& weight, const Variable& bias);
// Inverted dropout; identity outside kTrain or when rate == 0.
Variable dropout(const Variable& input, double rate, Mode mode, Rng* rng);

Variable add(const Variable& a, const Variable& b);
Variable mul(const Variable& a, const Variable& b);
Variable sum(const Variable& input);
// sum_i input_i * weights_i
Variable weighted_sum(const Variable& input, const Tensor& weights);
// Scalar entry (row, col) of a rank-2 tensor.
Variable select(const Variable& input, std::int64_t row, std::int64_t col);

inline constexpr double kProbabilityClamp = 1e-7;

// Mean over unmasked cells of -w_k [y ln p + (1-y) ln(1-p)], p clamped to
// [1e-7, 1 - 1e-7].
Variable weighted_bce_loss(const Variable& probs, const Tensor& targets,
                           std::span<const double> class_weights, const Tensor& mask);
// lambda * sum of squares over all params.
Variable l2_penalty(const std::vector<Variable>& params, double lambda);

}  // namespace cxr
