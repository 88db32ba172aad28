#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cxr {

struct AuditEntry {
  std::string name;
  double tolerance = 0.0;
  double max_rel_error = 0.0;
  int seeds = 0;
  std::size_t checked = 0;
  std::size_t skipped_nonsmooth = 0;
  std::string worst;  // location of the largest error
  bool pass() const { return checked > 0 && max_rel_error < tolerance; }
};

inline constexpr double kOpTolerance = 1e-4;
inline constexpr double kModelTolerance = 1e-3;

// Central-difference audit of every differentiable op (random shapes, one
// draw per seed) and of the micro model's full training loss.
std::vector<AuditEntry> gradient_audit(int seeds, std::uint64_t base_seed = 0);

}  // namespace cxr
