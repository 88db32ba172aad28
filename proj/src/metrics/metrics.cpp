#include "cxr/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include <boost/math/special_functions/beta.hpp>

#include "cxr/common/error.hpp"

namespace cxr {

namespace {

void check_inputs(std::span<const double> scores, std::span<const int> labels, std::size_t& pos, std::size_t& neg) {
  require(scores.size() == labels.size(), ErrorKind::kShapeMismatch, "auroc: scores and labels differ in length");
  pos = neg = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] == 0 || labels[i] == 1, ErrorKind::kInvalidArgument, "auroc: labels must be 0/1");
    require(!std::isnan(scores[i]), ErrorKind::kInvalidArgument, "auroc: NaN score");
    (labels[i] ? pos : neg) += 1;
  }
  require(pos > 0 && neg > 0, ErrorKind::kInvalidArgument, "auroc: needs at least one positive and one negative");
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

double auroc(std::span<const double> scores, std::span<const int> labels) {
  std::size_t pos = 0, neg = 0;
  check_inputs(scores, labels, pos, neg);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Twice the midrank keeps every quantity an integer.
  std::uint64_t rank_sum2 = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const std::uint64_t midrank2 = i + 1 + j;  // (i+1) + j, ranks are 1-based
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]]) rank_sum2 += midrank2;
    }
    i = j;
  }
  const std::uint64_t u2 = rank_sum2 - pos * (pos + 1);
  return static_cast<double>(u2) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels) {
  std::size_t pos = 0, neg = 0;
  check_inputs(scores, labels, pos, neg);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<RocPoint> curve{{0.0, 0.0}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] ? tp : fp) += 1;
      ++j;
    }
    curve.push_back({static_cast<double>(fp) / static_cast<double>(neg), static_cast<double>(tp) / static_cast<double>(pos)});
    i = j;
  }
  return curve;
}

double trapezoid_area(std::span<const RocPoint> curve) {
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    area += (curve[i].fpr - curve[i - 1].fpr) * (curve[i].tpr + curve[i - 1].tpr) / 2.0;
  }
  return area;
}

AurocReport auroc_report(const std::vector<ScoreRow>& scores, const std::vector<TruthRow>& truth) {
  require(scores.size() == truth.size(), ErrorKind::kShapeMismatch, "auroc_report: scores and truth differ in length");
  AurocReport report;
  double sum = 0.0;
  int defined = 0;
  for (std::size_t k = 0; k < kNumPathologies; ++k) {
    std::vector<double> s;
    std::vector<int> y;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (!truth[i][k]) continue;
      s.push_back(scores[i][k]);
      y.push_back(*truth[i][k]);
    }
    report.n_pos[k] = static_cast<int>(std::count(y.begin(), y.end(), 1));
    report.n_neg[k] = static_cast<int>(y.size()) - report.n_pos[k];
    if (report.n_pos[k] == 0 || report.n_neg[k] == 0) continue;
    report.auroc[k] = auroc(s, y);
    sum += *report.auroc[k];
    ++defined;
  }
  if (defined > 0) report.mean = sum / defined;
  return report;
}

std::string format_auroc_report(const AurocReport& report) {
  std::ostringstream out;
  for (const auto& [k, v] : report.metadata) out << "# " << k << '=' << v << '\n';
  out << "pathology,auroc,n_pos,n_neg\n";
  for (std::size_t k = 0; k < kNumPathologies; ++k) {
    out << kPathologyNames[k] << ',' << (report.auroc[k] ? fmt(*report.auroc[k]) : "") << ',' << report.n_pos[k]
        << ',' << report.n_neg[k] << '\n';
  }
  out << "mean," << (report.mean ? fmt(*report.mean) : "") << ",,\n";
  return out.str();
}

double student_t_two_sided(double t, double df) {
  require(df > 0.0, ErrorKind::kInvalidArgument, "student_t_two_sided: df must be positive");
  if (t == 0.0) return 1.0;
  if (std::isinf(t)) return 0.0;
  return boost::math::ibeta(df / 2.0, 0.5, df / (df + t * t));
}

WelchResult welch_t_test(std::span<const double> a, std::span<const double> b) {
  require(a.size() >= 2 && b.size() >= 2, ErrorKind::kInvalidArgument, "welch_t_test: each sample needs n >= 2");
  auto moments = [](std::span<const double> x, double& mean, double& var) {
    mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
    double ss = 0.0;
    for (double v : x) ss += (v - mean) * (v - mean);
    var = ss / static_cast<double>(x.size() - 1);
  };
  double ma, va, mb, vb;
  moments(a, ma, va);
  moments(b, mb, vb);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double sa = va / na, sb = vb / nb;
  WelchResult r;
  if (sa + sb == 0.0) {
    r.df = na + nb - 2.0;
    if (ma == mb) return r;
    r.t = ma > mb ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    r.p = 0.0;
    return r;
  }
  r.t = (ma - mb) / std::sqrt(sa + sb);
  r.df = (sa + sb) * (sa + sb) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
  r.p = student_t_two_sided(r.t, r.df);
  return r;
}

AblationReport resolution_ablation(const std::vector<AblationRun>& runs) {
  AblationReport report;
  for (const auto& r : runs) {
    if (std::find(report.resolutions.begin(), report.resolutions.end(), r.resolution) == report.resolutions.end()) {
      report.resolutions.push_back(r.resolution);
    }
  }
  std::sort(report.resolutions.rbegin(), report.resolutions.rend());
  require(report.resolutions.size() >= 2, ErrorKind::kInvalidArgument, "ablation: needs at least two resolutions");

  std::map<std::pair<int, std::size_t>, std::vector<double>> samples;
  for (int res : report.resolutions) {
    for (std::size_t k = 0; k < kNumPathologies; ++k) {
      auto& s = samples[{res, k}];
      for (const auto& r : runs) {
        if (r.resolution == res && r.auroc[k]) s.push_back(*r.auroc[k]);
      }
      require(s.size() >= 2, ErrorKind::kInvalidArgument,
              "ablation: resolution " + std::to_string(res) + " has fewer than two runs for " +
                  std::string(kPathologyNames[k]));
      AblationCell cell{res, k, static_cast<int>(s.size())};
      cell.mean = std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
      double ss = 0.0;
      for (double v : s) ss += (v - cell.mean) * (v - cell.mean);
      cell.std = std::sqrt(ss / static_cast<double>(s.size() - 1));
      report.cells.push_back(cell);
    }
  }
  for (std::size_t i = 0; i < report.resolutions.size(); ++i) {
    for (std::size_t j = i + 1; j < report.resolutions.size(); ++j) {
      for (std::size_t k = 0; k < kNumPathologies; ++k) {
        TTestReport t;
        t.resolution_a = report.resolutions[i];
        t.resolution_b = report.resolutions[j];
        t.pathology = k;
        t.result = welch_t_test(samples[{t.resolution_a, k}], samples[{t.resolution_b, k}]);
        t.significant = t.result.p < kSignificanceLevel;
        report.tests.push_back(t);
      }
    }
  }
  return report;
}

std::string format_ablation_csv(const AblationReport& report) {
  std::ostringstream out;
  out << "resolution,pathology,runs,mean_auroc,std_auroc\n";
  for (const auto& c : report.cells) {
    out << c.resolution << ',' << kPathologyNames[c.pathology] << ',' << c.runs << ',' << fmt(c.mean) << ','
        << fmt(c.std) << '\n';
  }
  return out.str();
}

std::string format_ttest_csv(const AblationReport& report) {
  std::ostringstream out;
  out << "resolution_a,resolution_b,pathology,t,df,p,significant\n";
  for (const auto& t : report.tests) {
    out << t.resolution_a << ',' << t.resolution_b << ',' << kPathologyNames[t.pathology] << ',' << fmt(t.result.t)
        << ',' << fmt(t.result.df) << ',' << fmt(t.result.p) << ',' << (t.significant ? 1 : 0) << '\n';
  }
  return out.str();
}

std::string render_ablation_svg(const AblationReport& report) {
  static constexpr const char* kColors[] = {"#1f4e79", "#2e86c1", "#85c1e9", "#d4e6f1", "#5d6d7e", "#aeb6bf"};
  const int groups = static_cast<int>(kNumPathologies);
  const int bars = static_cast<int>(report.resolutions.size());
  const double left = 60, top = 30, plot_h = 260, bar_w = 18, gap = 30;
  const double group_w = bars * bar_w + gap;
  const double width = left + groups * group_w + 20, height = top + plot_h + 70;
  auto y_of = [&](double v) { return top + plot_h * (1.0 - std::clamp(v, 0.0, 1.0)); };

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << left << "\" y=\"18\" font-family=\"sans-serif\" font-size=\"13\">AUROC by input size</text>\n";
  for (int tick = 0; tick <= 4; ++tick) {
    const double v = tick * 0.25, y = y_of(v);
    out << "<line x1=\"" << left << "\" x2=\"" << width - 20 << "\" y1=\"" << y << "\" y2=\"" << y
        << "\" stroke=\"#ddd\"/>\n";
    out << "<text x=\"" << left - 8 << "\" y=\"" << y + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" << v << "</text>\n";
  }
  for (int g = 0; g < groups; ++g) {
    const double gx = left + g * group_w + gap / 2;
    out << "<g class=\"pathology\" data-name=\"" << kPathologyNames[g] << "\">\n";
    for (int b = 0; b < bars; ++b) {
      const auto& c = report.cells[static_cast<std::size_t>(b) * kNumPathologies + static_cast<std::size_t>(g)];
      const double x = gx + b * bar_w, y = y_of(c.mean);
      out << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << bar_w - 2 << "\" height=\"" << top + plot_h - y
          << "\" fill=\"" << kColors[b % 6] << "\"><title>" << c.resolution << ": " << fmt(c.mean)
          << "</title></rect>\n";
      const double cx = x + (bar_w - 2) / 2;
      out << "<line x1=\"" << cx << "\" x2=\"" << cx << "\" y1=\"" << y_of(c.mean - c.std) << "\" y2=\""
          << y_of(c.mean + c.std) << "\" stroke=\"black\"/>\n";
    }
    out << "<text x=\"" << gx + bars * bar_w / 2 << "\" y=\"" << top + plot_h + 16
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" << kPathologyNames[g]
        << "</text>\n</g>\n";
  }
  for (int b = 0; b < bars; ++b) {
    const double x = left + b * 80, y = top + plot_h + 40;
    out << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"10\" height=\"10\" fill=\"" << kColors[b % 6]
        << "\"/><text x=\"" << x + 14 << "\" y=\"" << y + 9 << "\" font-family=\"sans-serif\" font-size=\"10\">"
        << report.resolutions[static_cast<std::size_t>(b)] << "x" << report.resolutions[static_cast<std::size_t>(b)]
        << "</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

}  // namespace cxr
