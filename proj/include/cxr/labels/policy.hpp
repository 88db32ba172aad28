#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cxr/common/random.hpp"
#include "cxr/data/manifest.hpp"

namespace cxr {

enum class PolicyKind { kUIgnore, kUZeros, kUOnes, kRandomizedFlip };

std::string_view to_string(PolicyKind policy);
PolicyKind parse_policy(std::string_view text);

// Grid: y drawn from {0.0, 0.1, ..., 1.0} (P(1) = 6/11).
// Continuous: y ~ U[0, 1) (P(1) = 1/2), for sensitivity runs.
enum class FlipDraw { kGrid, kContinuous };

// U-Ignore scope: drop whole studies with any uncertain cell, or mask only
// the uncertain cells.
enum class IgnoreScope { kStudy, kCell };

enum class Provenance { kOriginal, kFlipped, kExcluded, kUnmentionedAsNegative };

std::string_view to_string(Provenance provenance);

struct PolicyOptions {
  PolicyKind policy = PolicyKind::kRandomizedFlip;
  std::optional<std::uint64_t> seed;  // required for kRandomizedFlip
  FlipDraw draw = FlipDraw::kGrid;
  IgnoreScope ignore_scope = IgnoreScope::kStudy;
};

struct ResolvedLabels {
  using Row = std::array<double, kNumPathologies>;
  std::vector<Row> targets;  // 0/1
  std::vector<Row> mask;     // 0/1
  std::vector<std::array<Provenance, kNumPathologies>> provenance;
  // Raw draw y for every flipped cell under kRandomizedFlip, NaN elsewhere.
  std::vector<Row> draws;

  std::size_t rows() const { return targets.size(); }
  // Rows with at least one unmasked cell.
  std::vector<std::size_t> retained_rows() const;
};

// Threshold applied to a draw y.
inline int flip_target(double y) { return y >= 0.5 ? 1 : 0; }

// Randomized-flip draw for one uncertain cell; `draw` receives y when non-null.
int randomized_flip(Rng& rng, FlipDraw mode = FlipDraw::kGrid, double* draw = nullptr);

ResolvedLabels apply_policy(const std::vector<StudyRecord>& records, const PolicyOptions& options);

enum class WeightMode { kLiteral, kInverseFrequency };

std::string_view to_string(WeightMode mode);
WeightMode parse_weight_mode(std::string_view text);

struct ClassWeights {
  std::array<double, kNumPathologies> w{};
  WeightMode mode = WeightMode::kInverseFrequency;
};

// Positives per class among unmasked cells.
std::array<double, kNumPathologies> positive_counts(const ResolvedLabels& resolved);

// Literal: w_k = count_k / total. InverseFrequency: w_k = total / (5 count_k).
// total is the sum of the per-class counts.
ClassWeights class_weights_from_counts(const std::array<double, kNumPathologies>& counts, WeightMode mode);
ClassWeights compute_class_weights(const ResolvedLabels& resolved, WeightMode mode);

// Audit CSV: study_id, then per class "<name>", "<name> mask",
// "<name> provenance", "<name> draw".
std::string format_resolved(const std::vector<StudyRecord>& records, const ResolvedLabels& resolved);

}  // namespace cxr
