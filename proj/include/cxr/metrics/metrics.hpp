#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cxr/data/manifest.hpp"

namespace cxr {

// Mann-Whitney AUROC by midrank summation; ties count one half. Throws
// kInvalidArgument when either class is empty.
double auroc(std::span<const double> scores, std::span<const int> labels);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  friend bool operator==(const RocPoint&, const RocPoint&) = default;
};

// One point per distinct score (descending), plus (0,0).
std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels);
double trapezoid_area(std::span<const RocPoint> curve);

using ScoreRow = std::array<double, kNumPathologies>;
// nullopt marks a cell excluded from evaluation (uncertain ground truth).
using TruthRow = std::array<std::optional<int>, kNumPathologies>;

struct AurocReport {
  std::array<std::optional<double>, kNumPathologies> auroc{};
  std::optional<double> mean;  // over defined classes
  std::array<int, kNumPathologies> n_pos{};
  std::array<int, kNumPathologies> n_neg{};
  std::map<std::string, std::string> metadata;  // seed, resolution, policy, ...
};

AurocReport auroc_report(const std::vector<ScoreRow>& scores, const std::vector<TruthRow>& truth);
// pathology,auroc,n_pos,n_neg rows then "mean"; missing values are blank.
std::string format_auroc_report(const AurocReport& report);

struct WelchResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;
};

// Two-sided Welch unequal-variance t-test; each sample needs n >= 2.
WelchResult welch_t_test(std::span<const double> a, std::span<const double> b);
// Two-sided tail of Student's t: P(|T| >= |t|) with df degrees of freedom.
double student_t_two_sided(double t, double df);

inline constexpr double kSignificanceLevel = 0.05;

struct TTestReport {
  int resolution_a = 0;
  int resolution_b = 0;
  std::size_t pathology = 0;
  WelchResult result;
  bool significant = false;
};

struct AblationRun {
  int resolution = 0;
  std::uint64_t seed = 0;
  std::array<std::optional<double>, kNumPathologies> auroc{};
};

struct AblationCell {
  int resolution = 0;
  std::size_t pathology = 0;
  int runs = 0;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation
};

struct AblationReport {
  std::vector<int> resolutions;     // descending
  std::vector<AblationCell> cells;  // resolution-major
  std::vector<TTestReport> tests;   // every resolution pair, every pathology
};

// Needs >= 2 resolutions and >= 2 runs with a defined AUROC per
// resolution and pathology.
AblationReport resolution_ablation(const std::vector<AblationRun>& runs);
// resolution,pathology,runs,mean_auroc,std_auroc
std::string format_ablation_csv(const AblationReport& report);
// resolution_a,resolution_b,pathology,t,df,p,significant
std::string format_ttest_csv(const AblationReport& report);
// Grouped bar chart: one group per pathology, one bar per resolution with a
// one-std whisker.
std::string render_ablation_svg(const AblationReport& report);

}  // namespace cxr
