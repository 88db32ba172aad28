#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <regex>

#include "../support/stats_oracle.hpp"
#include "cxr/common/error.hpp"
#include "cxr/common/random.hpp"
#include "cxr/metrics/metrics.hpp"

using namespace cxr;

namespace {

// Scores drawn from a small grid so ties are common.
void random_instance(Rng& rng, std::vector<double>& s, std::vector<int>& y, bool ties) {
  const std::size_t n = 2 + uniform_index(rng, 49);
  s.resize(n);
  y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = static_cast<int>(uniform_index(rng, 2));
    s[i] = ties ? static_cast<double>(uniform_index(rng, 5)) / 4.0 : uniform01(rng);
  }
  y[0] = 1;
  y[1] = 0;
}

}  // namespace

TEST(AurocTest, Examples) {
  const std::vector<double> s{0.9, 0.8, 0.1, 0.2};
  const std::vector<int> y{1, 1, 0, 0};
  EXPECT_EQ(auroc(s, y), 1.0);
  const std::vector<double> flat{0.3, 0.3, 0.3, 0.3};
  EXPECT_EQ(auroc(flat, y), 0.5);
  const std::vector<double> s2{0.1, 0.4, 0.35, 0.8};
  const std::vector<int> y2{0, 0, 1, 1};
  EXPECT_EQ(auroc(s2, y2), 0.75);
  EXPECT_EQ(oracle::auroc_pairs(s2, y2), 0.75);
}

TEST(AurocTest, DegenerateLabelsThrow) {
  const std::vector<double> s{0.1, 0.2};
  const std::vector<int> ones{1, 1};
  EXPECT_THROW(auroc(s, ones), Error);
  EXPECT_THROW(roc_curve(s, ones), Error);
  const std::vector<int> bad{1, 2};
  EXPECT_THROW(auroc(s, bad), Error);
}

TEST(AurocTest, MatchesPairCountingAndTrapezoid) {
  Rng rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> s;
    std::vector<int> y;
    random_instance(rng, s, y, trial % 2 == 0);
    const double a = auroc(s, y);
    ASSERT_NEAR(a, oracle::auroc_pairs(s, y), 1e-12);
    const auto curve = roc_curve(s, y);
    ASSERT_NEAR(trapezoid_area(curve), a, 1e-12);
    ASSERT_EQ(curve.front(), (RocPoint{0.0, 0.0}));
    ASSERT_EQ(curve.back(), (RocPoint{1.0, 1.0}));
  }
}

TEST(AurocTest, ComplementAndMonotoneTransform) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> s;
    std::vector<int> y;
    random_instance(rng, s, y, false);
    std::vector<double> neg(s.size()), warped(s.size());
    std::transform(s.begin(), s.end(), neg.begin(), [](double v) { return -v; });
    std::transform(s.begin(), s.end(), warped.begin(), [](double v) { return std::exp(3 * v) - 7; });
    EXPECT_NEAR(auroc(s, y) + auroc(neg, y), 1.0, 1e-12);
    EXPECT_EQ(auroc(s, y), auroc(warped, y));
  }
}

TEST(RocTest, ShapeCases) {
  const std::vector<double> s{0.9, 0.8, 0.1, 0.2};
  const std::vector<int> y{1, 1, 0, 0};
  const auto perfect = roc_curve(s, y);
  EXPECT_NE(std::find(perfect.begin(), perfect.end(), RocPoint{0.0, 1.0}), perfect.end());
  const std::vector<double> binary{1, 0, 1, 0, 1};
  const std::vector<int> y2{1, 0, 0, 1, 1};
  EXPECT_EQ(roc_curve(binary, y2).size(), 3u);
}

TEST(AurocReportTest, MissingClassesStayMissing) {
  std::vector<ScoreRow> scores{{0.9, 0.1, 0.5, 0.5, 0.5}, {0.1, 0.2, 0.5, 0.5, 0.5}};
  std::vector<TruthRow> truth{{1, 0, std::nullopt, 1, 1}, {0, 0, 1, 0, 1}};
  const auto r = auroc_report(scores, truth);
  EXPECT_EQ(r.auroc[0], 1.0);
  EXPECT_FALSE(r.auroc[1].has_value());
  EXPECT_FALSE(r.auroc[2].has_value());
  EXPECT_FALSE(r.auroc[4].has_value());
  EXPECT_EQ(r.auroc[3], 0.5);
  EXPECT_EQ(r.mean, 0.75);
  EXPECT_EQ(r.n_pos[2], 1);
  EXPECT_EQ(r.n_neg[2], 0);
  const std::string csv = format_auroc_report(r);
  EXPECT_NE(csv.find("Cardiomegaly,,0,2"), std::string::npos);
}

TEST(WelchTest, IdenticalSamples) {
  const std::vector<double> a{1, 2, 3};
  const auto r = welch_t_test(a, a);
  EXPECT_EQ(r.t, 0.0);
  EXPECT_EQ(r.p, 1.0);
  const std::vector<double> c{0.7, 0.7}, d{0.7, 0.7};
  EXPECT_EQ(welch_t_test(c, d).p, 1.0);
  const std::vector<double> one{1.0};
  EXPECT_THROW(welch_t_test(one, a), Error);
}

TEST(WelchTest, MatchesIntegrationOracle) {
  const std::vector<double> a{2.1, 2.0, 1.9}, b{3.1, 3.0, 2.9};
  const auto r = welch_t_test(a, b);
  const auto hand = oracle::welch_by_hand(a, b);
  EXPECT_NEAR(r.t, hand.t, 1e-9);
  EXPECT_NEAR(r.df, hand.df, 1e-9);
  EXPECT_NEAR(r.p, oracle::t_two_sided_by_integration(hand.t, hand.df), 1e-6);
  EXPECT_LT(r.p, 0.05);
}

TEST(WelchTest, SymmetricUnderSwap) {
  Rng rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> a(2 + uniform_index(rng, 6)), b(2 + uniform_index(rng, 6));
    for (auto& v : a) v = normal(rng);
    for (auto& v : b) v = 0.5 + 2 * normal(rng);
    const auto ab = welch_t_test(a, b), ba = welch_t_test(b, a);
    EXPECT_EQ(ab.t, -ba.t);
    EXPECT_EQ(ab.p, ba.p);
    EXPECT_GE(ab.p, 0.0);
    EXPECT_LE(ab.p, 1.0);
    EXPECT_NEAR(ab.p, oracle::t_two_sided_by_integration(ab.t, ab.df), 1e-6);
  }
}

TEST(AblationTest, CountsAndIdenticalGroups) {
  std::vector<AblationRun> runs;
  for (int res : {40, 64, 56}) {
    for (int seed = 0; seed < 3; ++seed) {
      AblationRun r{res, static_cast<std::uint64_t>(seed)};
      for (std::size_t k = 0; k < kNumPathologies; ++k) r.auroc[k] = 0.8 + 0.01 * seed + 0.001 * k;
      runs.push_back(r);
    }
  }
  const auto report = resolution_ablation(runs);
  EXPECT_EQ(report.resolutions, (std::vector<int>{64, 56, 40}));
  EXPECT_EQ(report.cells.size(), 15u);
  EXPECT_EQ(report.tests.size(), 15u);
  for (const auto& t : report.tests) EXPECT_FALSE(t.significant);
  const std::string csv = format_ablation_csv(report);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 16);
  const std::string svg = render_ablation_svg(report);
  const std::regex group("class=\"pathology\"");
  EXPECT_EQ(std::distance(std::sregex_iterator(svg.begin(), svg.end(), group), std::sregex_iterator()), 5);
}

TEST(AblationTest, RejectsSingleRunsAndSingleResolution) {
  std::vector<AblationRun> runs{{64, 1, {0.8, 0.8, 0.8, 0.8, 0.8}}, {64, 2, {0.8, 0.8, 0.8, 0.8, 0.8}},
                                {56, 1, {0.8, 0.8, 0.8, 0.8, 0.8}}};
  EXPECT_THROW(resolution_ablation(runs), Error);
  runs.pop_back();
  EXPECT_THROW(resolution_ablation(runs), Error);
}
