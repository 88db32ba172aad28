#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "cxr/common/random.hpp"
#include "cxr/tensor/ops.hpp"

namespace cxr {

struct ModelConfig {
  int input_size = 64;
  int in_channels = 1;
  std::vector<int> block_layers{2, 4, 4};
  int growth_rate = 8;
  double compression = 0.5;
  int stem_channels = 16;
  int num_classes = 5;
  double dropout_rate = 0.0;  // applied after each dense block
  bool bottleneck = false;    // 1x1 conv of width bottleneck_width * growth before each 3x3
  int bottleneck_width = 4;
  int stem_kernel = 3;
  int stem_stride = 1;
  int stem_pool_window = 2;
  int stem_pool_stride = 2;
  int stem_pool_padding = 0;

  // key=value lines; from_text(to_text(c)) == c.
  std::string to_text() const;
  static ModelConfig from_text(const std::string& text);
  // Applies one key=value override; unknown keys throw kInvalidArgument.
  void set(const std::string& key, const std::string& value);
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

ModelConfig preset_densenet121();
ModelConfig preset_micro();
ModelConfig preset_by_name(const std::string& name);

// Channel and spatial bookkeeping, checked before any tensor is allocated.
struct StagePlan {
  int block_in_channels = 0;
  int block_out_channels = 0;
  int spatial = 0;               // extent seen by the block
  int transition_out_channels = 0;  // 0 for the last block
};

struct ArchitecturePlan {
  int stem_spatial = 0;  // after stem conv
  int pooled_spatial = 0;  // after stem pool
  std::vector<StagePlan> stages;
  int feature_channels = 0;
  int feature_spatial = 0;
};

// Throws kInvalidArgument on invalid config or spatial underflow.
ArchitecturePlan plan_architecture(const ModelConfig& config);

// Weight layers along the longest path: stem conv, every conv in the dense
// layers, each transition conv, and the classifier.
int layer_depth(const ModelConfig& config);

struct NamedVariable {
  std::string name;
  Variable var;
};

struct NamedBuffer {
  std::string name;
  Tensor* tensor;
};

class DenseNet {
 public:
  DenseNet(const ModelConfig& config, std::uint64_t seed);
  DenseNet(const DenseNet&) = delete;
  DenseNet& operator=(const DenseNet&) = delete;
  DenseNet(DenseNet&&) noexcept;
  DenseNet& operator=(DenseNet&&) noexcept;
  ~DenseNet();

  struct Output {
    Variable features;  // final BN-ReLU feature maps (N, C, h, w)
    Variable logits;    // (N, classes)
    Variable probs;     // sigmoid(logits)
  };

  // `rng` drives dropout in train mode; may be null when dropout_rate == 0.
  Output forward(const Variable& input, Mode mode, Rng* rng = nullptr);
  Tensor predict(const Tensor& input);  // eval-mode probabilities, no graph kept

  const ModelConfig& config() const;
  const ArchitecturePlan& plan() const;

  // Trainable tensors in a stable order with stable names.
  std::vector<NamedVariable> parameters() const;
  std::vector<Variable> parameter_vars() const;
  // Batch-norm running statistics.
  std::vector<NamedBuffer> buffers();
  std::size_t parameter_count() const;

  void begin_stat_collection();
  void finish_stat_collection();
  void zero_grad();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace cxr
