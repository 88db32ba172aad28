#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cxr {

enum class ErrorKind {
  kInvalidArgument,
  kShapeMismatch,
  kParse,
  kUnsupportedFormat,
  kIo,
  kNonFinite,
  kDiverged,
  kMismatch,
};

std::string_view to_string(ErrorKind kind);

// Single exception type for the library; the kind drives CLI error categories.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return "invalid-argument";
    case ErrorKind::kShapeMismatch: return "shape-mismatch";
    case ErrorKind::kParse: return "parse";
    case ErrorKind::kUnsupportedFormat: return "unsupported-format";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kNonFinite: return "non-finite";
    case ErrorKind::kDiverged: return "diverged";
    case ErrorKind::kMismatch: return "mismatch";
  }
  return "unknown";
}

}  // namespace cxr
