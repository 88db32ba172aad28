#pragma once

#include <cstdint>
#include <string>

#include "cxr/data/manifest.hpp"
#include "cxr/data/transforms.hpp"

namespace cxr {

struct TrainConfig {
  double initial_lr = 1e-4;
  double l2_lambda = 1e-5;
  int batch_size = 16;
  int max_epochs = 30;
  double plateau_factor = 0.1;
  int plateau_patience = 3;
  int early_stop_patience = 10;
  double min_delta = 1e-4;
  std::uint64_t seed = 1;
  View view = View::kFrontal;
  int keep_best = 5;
  int lateral_copies = 3;
  bool augment = true;
  AugmentConfig augmentation;

  void validate() const;
  // key=value lines in a fixed order; from_text(to_text(c)) == c.
  std::string to_text() const;
  static TrainConfig from_text(const std::string& text);
  // Unknown keys throw kInvalidArgument.
  void set(const std::string& key, const std::string& value);
  static bool has_key(const std::string& key);
};

// Strict scalar parsers shared by the config readers.
double parse_real(const std::string& key, const std::string& value);
std::int64_t parse_integer(const std::string& key, const std::string& value);
bool parse_flag(const std::string& key, const std::string& value);
std::string format_real(double value);

}  // namespace cxr
