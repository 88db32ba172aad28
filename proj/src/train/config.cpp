#include "cxr/train/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <vector>

#include "cxr/common/error.hpp"

namespace cxr {

double parse_real(const std::string& key, const std::string& value) {
  double out = 0.0;
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  require(ec == std::errc() && ptr == end && !value.empty(), ErrorKind::kInvalidArgument,
          "config: '" + key + "' expects a number, got '" + value + "'");
  return out;
}

std::int64_t parse_integer(const std::string& key, const std::string& value) {
  std::int64_t out = 0;
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  require(ec == std::errc() && ptr == end && !value.empty(), ErrorKind::kInvalidArgument,
          "config: '" + key + "' expects an integer, got '" + value + "'");
  return out;
}

bool parse_flag(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  fail(ErrorKind::kInvalidArgument, "config: '" + key + "' expects true/false, got '" + value + "'");
}

std::string format_real(double value) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

namespace {

const std::vector<std::string> kKeys = {
    "initial_lr",     "l2_lambda",        "batch_size",          "max_epochs",         "plateau_factor",
    "plateau_patience", "early_stop_patience", "min_delta",        "seed",               "view",
    "keep_best",      "lateral_copies",   "augment",             "max_shift_fraction", "rotation_min_degrees",
    "rotation_max_degrees", "zoom_fraction"};

int to_int(const std::string& key, const std::string& value) {
  const auto v = parse_integer(key, value);
  require(v >= INT32_MIN && v <= INT32_MAX, ErrorKind::kInvalidArgument, "config: '" + key + "' out of range");
  return static_cast<int>(v);
}

}  // namespace

bool TrainConfig::has_key(const std::string& key) {
  for (const auto& k : kKeys) {
    if (k == key) return true;
  }
  return false;
}

void TrainConfig::set(const std::string& key, const std::string& value) {
  if (key == "initial_lr") initial_lr = parse_real(key, value);
  else if (key == "l2_lambda") l2_lambda = parse_real(key, value);
  else if (key == "batch_size") batch_size = to_int(key, value);
  else if (key == "max_epochs") max_epochs = to_int(key, value);
  else if (key == "plateau_factor") plateau_factor = parse_real(key, value);
  else if (key == "plateau_patience") plateau_patience = to_int(key, value);
  else if (key == "early_stop_patience") early_stop_patience = to_int(key, value);
  else if (key == "min_delta") min_delta = parse_real(key, value);
  else if (key == "seed") seed = static_cast<std::uint64_t>(parse_integer(key, value));
  else if (key == "view") view = parse_view(value);
  else if (key == "keep_best") keep_best = to_int(key, value);
  else if (key == "lateral_copies") lateral_copies = to_int(key, value);
  else if (key == "augment") augment = parse_flag(key, value);
  else if (key == "max_shift_fraction") augmentation.max_shift_fraction = parse_real(key, value);
  else if (key == "rotation_min_degrees") augmentation.rotation_min_degrees = parse_real(key, value);
  else if (key == "rotation_max_degrees") augmentation.rotation_max_degrees = parse_real(key, value);
  else if (key == "zoom_fraction") augmentation.zoom_fraction = parse_real(key, value);
  else fail(ErrorKind::kInvalidArgument, "train config: unknown key '" + key + "'");
}

std::string TrainConfig::to_text() const {
  std::ostringstream out;
  out << "initial_lr=" << format_real(initial_lr) << '\n'
      << "l2_lambda=" << format_real(l2_lambda) << '\n'
      << "batch_size=" << batch_size << '\n'
      << "max_epochs=" << max_epochs << '\n'
      << "plateau_factor=" << format_real(plateau_factor) << '\n'
      << "plateau_patience=" << plateau_patience << '\n'
      << "early_stop_patience=" << early_stop_patience << '\n'
      << "min_delta=" << format_real(min_delta) << '\n'
      << "seed=" << seed << '\n'
      << "view=" << to_string(view) << '\n'
      << "keep_best=" << keep_best << '\n'
      << "lateral_copies=" << lateral_copies << '\n'
      << "augment=" << (augment ? "true" : "false") << '\n'
      << "max_shift_fraction=" << format_real(augmentation.max_shift_fraction) << '\n'
      << "rotation_min_degrees=" << format_real(augmentation.rotation_min_degrees) << '\n'
      << "rotation_max_degrees=" << format_real(augmentation.rotation_max_degrees) << '\n'
      << "zoom_fraction=" << format_real(augmentation.zoom_fraction) << '\n';
  return out.str();
}

TrainConfig TrainConfig::from_text(const std::string& text) {
  TrainConfig config;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, ErrorKind::kParse, "train config: expected key=value, got '" + line + "'");
    config.set(line.substr(0, eq), line.substr(eq + 1));
  }
  return config;
}

void TrainConfig::validate() const {
  auto check = [](bool ok, const std::string& msg) { require(ok, ErrorKind::kInvalidArgument, "train config: " + msg); };
  check(initial_lr > 0.0 && std::isfinite(initial_lr), "initial_lr must be positive");
  check(l2_lambda >= 0.0, "l2_lambda must be >= 0");
  check(batch_size >= 2, "batch_size must be >= 2 (batch norm needs two samples)");
  check(max_epochs >= 1, "max_epochs must be >= 1");
  check(plateau_factor > 0.0 && plateau_factor < 1.0, "plateau_factor must lie in (0, 1)");
  check(plateau_patience >= 1 && early_stop_patience >= 1, "patiences must be >= 1");
  check(min_delta >= 0.0, "min_delta must be >= 0");
  check(keep_best >= 1, "keep_best must be >= 1");
  check(lateral_copies >= 0, "lateral_copies must be >= 0");
  augmentation.validate();
}

}  // namespace cxr
