#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cxr/model/densenet.hpp"
#include "cxr/tensor/adam.hpp"

namespace cxr {

struct NamedTensor {
  std::string name;
  Tensor tensor;
  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  std::uint32_t format_version = kFormatVersion;
  std::string architecture;  // ModelConfig::to_text()
  std::string config_echo;   // training config text, informational
  std::int32_t epoch = 0;
  double val_loss = 0.0;
  double mean_pixel = 0.0;
  std::vector<NamedTensor> params;
  std::vector<NamedTensor> buffers;  // batch-norm running statistics
  std::optional<AdamState> optimizer;

  // Bitwise comparison of every field.
  bool operator==(const Checkpoint& other) const;
};

// Snapshot of a model's parameters and buffers.
Checkpoint capture(DenseNet& model, double mean_pixel);
// Copies tensors into a model built from the same architecture.
void restore(DenseNet& model, const Checkpoint& checkpoint);
// Fresh model carrying the checkpoint's weights.
DenseNet instantiate(const Checkpoint& checkpoint);

// Layout: "CXRCKPT\0", u32 version, strings (u32 length + bytes) for the
// architecture and config echo, i32 epoch, f64 val_loss, f64 mean_pixel,
// then tensor sections (params, buffers, optimizer moments), each a u32
// count of records: u32 name length, name, u8 dtype tag (1 = f64), u32 rank,
// i64 extents, little-endian values.
std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint deserialize_checkpoint(const std::string& bytes, const std::string& source = "<memory>");
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Elementwise mean of params and buffers; optimizer state dropped. Throws
// kMismatch on differing architectures, names or shapes.
Checkpoint average_checkpoints(const std::vector<Checkpoint>& checkpoints);

}  // namespace cxr
