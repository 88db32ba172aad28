#include "cxr/labels/policy.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "cxr/common/error.hpp"

namespace cxr {

std::string_view to_string(PolicyKind policy) {
  switch (policy) {
    case PolicyKind::kUIgnore: return "u-ignore";
    case PolicyKind::kUZeros: return "u-zeros";
    case PolicyKind::kUOnes: return "u-ones";
    case PolicyKind::kRandomizedFlip: return "randomized-flip";
  }
  return "?";
}

PolicyKind parse_policy(std::string_view text) {
  for (auto p : {PolicyKind::kUIgnore, PolicyKind::kUZeros, PolicyKind::kUOnes, PolicyKind::kRandomizedFlip}) {
    if (text == to_string(p)) return p;
  }
  fail(ErrorKind::kInvalidArgument, "unknown policy '" + std::string(text) +
                                        "' (expected u-ignore, u-zeros, u-ones or randomized-flip)");
}

std::string_view to_string(Provenance provenance) {
  switch (provenance) {
    case Provenance::kOriginal: return "original";
    case Provenance::kFlipped: return "flipped";
    case Provenance::kExcluded: return "excluded";
    case Provenance::kUnmentionedAsNegative: return "unmentioned-as-negative";
  }
  return "?";
}

std::string_view to_string(WeightMode mode) {
  return mode == WeightMode::kLiteral ? "literal" : "inverse-frequency";
}

WeightMode parse_weight_mode(std::string_view text) {
  if (text == "literal") return WeightMode::kLiteral;
  if (text == "inverse-frequency") return WeightMode::kInverseFrequency;
  fail(ErrorKind::kInvalidArgument, "unknown weight mode '" + std::string(text) + "'");
}

std::vector<std::size_t> ResolvedLabels::retained_rows() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    for (double m : mask[i]) {
      if (m != 0.0) {
        out.push_back(i);
        break;
      }
    }
  }
  return out;
}

int randomized_flip(Rng& rng, FlipDraw mode, double* draw) {
  const double y = mode == FlipDraw::kGrid ? static_cast<double>(uniform_index(rng, 11)) / 10.0 : uniform01(rng);
  if (draw) *draw = y;
  return flip_target(y);
}

ResolvedLabels apply_policy(const std::vector<StudyRecord>& records, const PolicyOptions& options) {
  require(!records.empty(), ErrorKind::kInvalidArgument, "apply_policy: empty record list");
  const bool flipping = options.policy == PolicyKind::kRandomizedFlip;
  require(!flipping || options.seed.has_value(), ErrorKind::kInvalidArgument,
          "apply_policy: randomized-flip requires a seed");
  Rng rng(flipping ? *options.seed : 0);
  constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

  ResolvedLabels out;
  const std::size_t n = records.size();
  out.targets.assign(n, {});
  out.mask.assign(n, {});
  out.provenance.assign(n, {});
  out.draws.assign(n, {});
  for (std::size_t i = 0; i < n; ++i) {
    const auto& labels = records[i].labels;
    bool any_uncertain = false;
    for (auto l : labels) any_uncertain = any_uncertain || l == LabelState::kUncertain;
    const bool drop_study = options.policy == PolicyKind::kUIgnore && options.ignore_scope == IgnoreScope::kStudy &&
                            any_uncertain;
    for (std::size_t k = 0; k < kNumPathologies; ++k) {
      double target = 0.0, mask = 1.0, draw = kNan;
      Provenance prov = Provenance::kOriginal;
      switch (labels[k]) {
        case LabelState::kPositive: target = 1.0; break;
        case LabelState::kNegative: break;
        case LabelState::kUnmentioned: prov = Provenance::kUnmentionedAsNegative; break;
        case LabelState::kUncertain:
          prov = Provenance::kFlipped;
          switch (options.policy) {
            case PolicyKind::kUIgnore:
              mask = 0.0;
              prov = Provenance::kExcluded;
              break;
            case PolicyKind::kUZeros: break;
            case PolicyKind::kUOnes: target = 1.0; break;
            case PolicyKind::kRandomizedFlip:
              target = static_cast<double>(randomized_flip(rng, options.draw, &draw));
              break;
          }
          break;
      }
      if (drop_study) {
        mask = 0.0;
        prov = Provenance::kExcluded;
      }
      out.targets[i][k] = target;
      out.mask[i][k] = mask;
      out.provenance[i][k] = prov;
      out.draws[i][k] = draw;
    }
  }
  return out;
}

std::array<double, kNumPathologies> positive_counts(const ResolvedLabels& resolved) {
  std::array<double, kNumPathologies> counts{};
  for (std::size_t i = 0; i < resolved.rows(); ++i) {
    for (std::size_t k = 0; k < kNumPathologies; ++k) {
      if (resolved.mask[i][k] != 0.0 && resolved.targets[i][k] != 0.0) counts[k] += 1.0;
    }
  }
  return counts;
}

ClassWeights class_weights_from_counts(const std::array<double, kNumPathologies>& counts, WeightMode mode) {
  double total = 0.0;
  for (double c : counts) {
    require(c >= 0.0, ErrorKind::kInvalidArgument, "class weights: negative count");
    total += c;
  }
  ClassWeights out;
  out.mode = mode;
  for (std::size_t k = 0; k < kNumPathologies; ++k) {
    require(counts[k] > 0.0, ErrorKind::kInvalidArgument,
            "class weights: class '" + std::string(kPathologyNames[k]) + "' has no positives");
    out.w[k] = mode == WeightMode::kLiteral ? counts[k] / total
                                            : total / (static_cast<double>(kNumPathologies) * counts[k]);
  }
  return out;
}

ClassWeights compute_class_weights(const ResolvedLabels& resolved, WeightMode mode) {
  return class_weights_from_counts(positive_counts(resolved), mode);
}

std::string format_resolved(const std::vector<StudyRecord>& records, const ResolvedLabels& resolved) {
  require(records.size() == resolved.rows(), ErrorKind::kShapeMismatch, "format_resolved: row count mismatch");
  std::ostringstream out;
  out.precision(17);
  out << "study_id";
  for (auto name : kPathologyNames) {
    out << ',' << csv_escape(name) << ',' << csv_escape(std::string(name) + " mask") << ','
        << csv_escape(std::string(name) + " provenance") << ',' << csv_escape(std::string(name) + " draw");
  }
  out << '\n';
  for (std::size_t i = 0; i < records.size(); ++i) {
    out << csv_escape(records[i].study_id);
    for (std::size_t k = 0; k < kNumPathologies; ++k) {
      out << ',' << resolved.targets[i][k] << ',' << resolved.mask[i][k] << ',' << to_string(resolved.provenance[i][k])
          << ',';
      if (!std::isnan(resolved.draws[i][k])) out << resolved.draws[i][k];
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace cxr
