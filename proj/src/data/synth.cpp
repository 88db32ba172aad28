#include "cxr/data/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "cxr/common/error.hpp"
#include "cxr/common/parallel.hpp"
#include "cxr/common/random.hpp"

namespace cxr {
namespace {

enum : int { kAtelectasis = 0, kCardiomegaly = 1, kConsolidation = 2, kEdema = 3, kEffusion = 4 };

std::uint64_t tag_of(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// Float canvas in pixel units; shapes are given in fractions of the side.
class Canvas {
 public:
  explicit Canvas(int size) : size_(size), v_(static_cast<std::size_t>(size) * size, 0.0) {}

  int size() const { return size_; }
  double& at(int x, int y) { return v_[static_cast<std::size_t>(y) * size_ + x]; }

  // Soft-edged ellipse coverage in [0, 1] at pixel (x, y).
  double ellipse_weight(int x, int y, double cx, double cy, double rx, double ry) const {
    const double px = x + 0.5, py = y + 0.5;
    const double dx = (px - cx * size_) / (rx * size_);
    const double dy = (py - cy * size_) / (ry * size_);
    const double d = std::sqrt(dx * dx + dy * dy);
    const double rmin = std::min(rx, ry) * size_;
    return std::clamp((1.0 - d) * rmin / 1.5 + 0.5, 0.0, 1.0);
  }

  template <typename Pattern>
  void add_ellipse(double cx, double cy, double rx, double ry, Pattern pattern) {
    for (int y = 0; y < size_; ++y) {
      for (int x = 0; x < size_; ++x) {
        const double w = ellipse_weight(x, y, cx, cy, rx, ry);
        if (w > 0.0) at(x, y) += w * pattern(x, y);
      }
    }
  }

  void blend_ellipse(double cx, double cy, double rx, double ry, double target) {
    for (int y = 0; y < size_; ++y) {
      for (int x = 0; x < size_; ++x) {
        const double w = ellipse_weight(x, y, cx, cy, rx, ry);
        if (w > 0.0) at(x, y) = at(x, y) * (1.0 - w) + target * w;
      }
    }
  }

  template <typename Pattern>
  void add_rect(double cx, double cy, double half, Pattern pattern) {
    const double lo_x = (cx - half) * size_, hi_x = (cx + half) * size_;
    const double lo_y = (cy - half) * size_, hi_y = (cy + half) * size_;
    for (int y = 0; y < size_; ++y) {
      for (int x = 0; x < size_; ++x) {
        const double px = x + 0.5, py = y + 0.5;
        if (px >= lo_x && px <= hi_x && py >= lo_y && py <= hi_y) at(x, y) += pattern(x, y);
      }
    }
  }

  BoundingBox box(double cx, double cy, double rx, double ry) const {
    auto lo = [&](double c, double r) { return std::max(0, static_cast<int>(std::floor((c - r) * size_))); };
    auto hi = [&](double c, double r) {
      return std::min(size_ - 1, static_cast<int>(std::ceil((c + r) * size_)) - 1);
    };
    return {lo(cx, rx), lo(cy, ry), hi(cx, rx), hi(cy, ry)};
  }

  ImageBuffer quantize(Rng& rng, double noise_sigma) const {
    ImageBuffer out(size_, size_);
    for (std::size_t i = 0; i < v_.size(); ++i) {
      const double value = v_[i] + normal(rng, 0.0, noise_sigma);
      out.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(value), 0L, 255L));
    }
    return out;
  }

 private:
  int size_;
  std::vector<double> v_;
};

struct Anatomy {
  // Lung ellipses (center, radii) in side fractions.
  std::vector<std::array<double, 4>> lungs;
  double spine_x;
  double heart_cx, heart_cy;
  std::array<double, 2> heart_normal, heart_enlarged;
};

const Anatomy kFrontal{{{0.30, 0.45, 0.17, 0.30}, {0.70, 0.45, 0.17, 0.30}},
                       0.50, 0.52, 0.62, {0.11, 0.10}, {0.19, 0.155}};
const Anatomy kLateral{{{0.50, 0.45, 0.30, 0.30}}, 0.86, 0.36, 0.62, {0.12, 0.11}, {0.20, 0.16}};

struct Placement {
  double cx = 0, cy = 0, rx = 0, ry = 0;
};

// Signature placement for one view; `side` picks the lung on the frontal view.
// Every signature spans at least 12% of the side in each direction, i.e. more
// than one cell of the micro model's 8x8 final feature grid.
Placement place(int cls, View view, Rng& rng) {
  const bool right = uniform01(rng) < 0.5;
  const double jitter = uniform(rng, -0.02, 0.02);
  if (view == View::kFrontal) {
    const double lung_x = right ? 0.70 : 0.30;
    const double outward = right ? 1.0 : -1.0;
    switch (cls) {
      case kAtelectasis: return {lung_x + jitter, uniform(rng, 0.24, 0.30), 0.13, 0.09};
      case kConsolidation: return {lung_x + outward * 0.06 + jitter, uniform(rng, 0.38, 0.48), 0.085, 0.085};
      case kEdema: return {lung_x - outward * 0.09 + jitter, uniform(rng, 0.36, 0.46), 0.08, 0.08};
      case kEffusion: return {lung_x + outward * 0.08 + jitter, uniform(rng, 0.65, 0.71), 0.11, 0.09};
      default: break;
    }
  } else {
    switch (cls) {
      case kAtelectasis: return {0.55 + jitter, uniform(rng, 0.24, 0.30), 0.15, 0.09};
      case kConsolidation: return {0.64 + jitter, uniform(rng, 0.38, 0.48), 0.085, 0.085};
      case kEdema: return {0.44 + jitter, uniform(rng, 0.36, 0.46), 0.08, 0.08};
      case kEffusion: return {0.70 + jitter, uniform(rng, 0.65, 0.71), 0.12, 0.09};
      default: break;
    }
  }
  fail(ErrorKind::kInvalidArgument, "no placement for class");
}

ImageBuffer render(const std::array<bool, kNumPathologies>& truth, View view, int size, double noise_sigma,
                   Rng& rng, std::array<std::optional<BoundingBox>, kNumPathologies>* boxes) {
  const Anatomy& anatomy = view == View::kFrontal ? kFrontal : kLateral;
  Canvas canvas(size);
  const double body = 115.0 + normal(rng, 0.0, 6.0);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) canvas.at(x, y) = body + 10.0 * (y + 0.5) / size;
  }
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      if (std::abs((x + 0.5) / size - anatomy.spine_x) < 0.04) canvas.at(x, y) += 25.0;
    }
  }
  const double lung_level = 65.0 + normal(rng, 0.0, 4.0);
  const double rib_period = 0.08 * size;
  for (const auto& lung : anatomy.lungs) {
    canvas.blend_ellipse(lung[0], lung[1], lung[2], lung[3], lung_level);
    canvas.add_ellipse(lung[0], lung[1], lung[2], lung[3], [&](int, int y) {
      return 6.0 * std::sin(2.0 * M_PI * (y + 0.5) / rib_period);
    });
  }

  const double scale = uniform(rng, 0.95, 1.05);
  const auto& radii = truth[kCardiomegaly] ? anatomy.heart_enlarged : anatomy.heart_normal;
  const double hx = anatomy.heart_cx + uniform(rng, -0.01, 0.01);
  const double hy = anatomy.heart_cy + uniform(rng, -0.01, 0.01);
  canvas.blend_ellipse(hx, hy, radii[0] * scale, radii[1] * scale, 170.0);
  if (boxes && truth[kCardiomegaly]) (*boxes)[kCardiomegaly] = canvas.box(hx, hy, radii[0] * scale, radii[1] * scale);

  const double cell = std::max(1.0, 2.0 * size / 64.0);
  for (int cls : {kAtelectasis, kConsolidation, kEdema, kEffusion}) {
    // Placement is drawn for every class so the random stream does not
    // depend on which findings are present.
    const Placement p = place(cls, view, rng);
    if (!truth[cls]) continue;
    switch (cls) {
      case kAtelectasis:
        canvas.add_ellipse(p.cx, p.cy, p.rx, p.ry, [](int, int) { return 55.0; });
        break;
      case kConsolidation:
        canvas.add_ellipse(p.cx, p.cy, p.rx, p.ry, [&](int x, int y) {
          const int parity = (static_cast<int>(x / cell) + static_cast<int>(y / cell)) % 2;
          return 30.0 + 40.0 * parity;
        });
        break;
      case kEdema:
        canvas.add_rect(p.cx, p.cy, p.rx, [&](int x, int) {
          return static_cast<int>(x / cell) % 2 == 0 ? 55.0 : 5.0;
        });
        break;
      case kEffusion:
        canvas.add_ellipse(p.cx, p.cy, p.rx, p.ry, [](int, int) { return 70.0; });
        break;
      default: break;
    }
    if (boxes) (*boxes)[cls] = canvas.box(p.cx, p.cy, p.rx, p.ry);
  }
  return canvas.quantize(rng, noise_sigma);
}

std::string patient_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "patient%05d", index);
  return buf;
}

// First `count` entries of a seeded permutation of [0, n).
std::vector<bool> exact_subset(std::size_t n, std::size_t count, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  shuffle(order, rng);
  std::vector<bool> chosen(n, false);
  for (std::size_t i = 0; i < count && i < n; ++i) chosen[order[i]] = true;
  return chosen;
}

}  // namespace

void SynthConfig::validate() const {
  require(image_size >= 32, ErrorKind::kInvalidArgument, "synth: image_size must be at least 32");
  require(n_studies >= 1 && n_valid >= 0, ErrorKind::kInvalidArgument, "synth: study counts must be positive");
  require(lateral_fraction >= 0.0 && lateral_fraction <= 1.0, ErrorKind::kInvalidArgument,
          "synth: lateral_fraction must lie in [0, 1]");
  require(unmentioned_fraction >= 0.0 && unmentioned_fraction <= 1.0, ErrorKind::kInvalidArgument,
          "synth: unmentioned_fraction must lie in [0, 1]");
  require(noise_sigma >= 0.0, ErrorKind::kInvalidArgument, "synth: noise_sigma must be non-negative");
  for (std::size_t k = 0; k < kNumPathologies; ++k) {
    require(uncertain_fraction[k] >= 0.0 && uncertain_fraction[k] <= 1.0, ErrorKind::kInvalidArgument,
            "synth: uncertain fraction must lie in [0, 1]");
    require(prevalence[k] >= 0.0 && prevalence[k] <= 1.0, ErrorKind::kInvalidArgument,
            "synth: prevalence must lie in [0, 1]");
  }
}

std::vector<SynthStudy> synth_split(const SynthConfig& config, const std::string& split, int count,
                                    int first_patient, bool with_uncertain) {
  config.validate();
  const std::uint64_t tag = tag_of(split);
  const auto n = static_cast<std::size_t>(count);
  Rng rng(derive_seed(config.seed, tag, 0));

  const auto lateral = exact_subset(n, static_cast<std::size_t>(std::lround(config.lateral_fraction * count)), rng);
  std::array<std::vector<bool>, kNumPathologies> uncertain;
  for (std::size_t k = 0; k < kNumPathologies; ++k) {
    const double f = with_uncertain ? config.uncertain_fraction[k] : 0.0;
    uncertain[k] = exact_subset(n, static_cast<std::size_t>(std::lround(f * count)), rng);
  }

  std::vector<SynthStudy> studies(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& s = studies[i];
    const std::string study_id = split + "/" + patient_name(first_patient + static_cast<int>(i)) + "/study1";
    s.record.study_id = study_id;
    s.record.patient_id = patient_name(first_patient + static_cast<int>(i));
    s.record.frontal_path = study_id + "/view1_frontal.pgm";
    if (lateral[i]) s.record.lateral_path = study_id + "/view2_lateral.pgm";
    for (std::size_t k = 0; k < kNumPathologies; ++k) {
      s.truth[k] = uniform01(rng) < config.prevalence[k];
      const bool blank = uniform01(rng) < config.unmentioned_fraction;
      if (uncertain[k][i]) {
        s.record.labels[k] = LabelState::kUncertain;
      } else if (s.truth[k]) {
        s.record.labels[k] = LabelState::kPositive;
      } else {
        s.record.labels[k] = blank ? LabelState::kUnmentioned : LabelState::kNegative;
      }
    }
  }

  parallel_for(n, [&](std::size_t i) {
    auto& s = studies[i];
    Rng image_rng(derive_seed(config.seed, tag, 1, i));
    s.frontal = render(s.truth, View::kFrontal, config.image_size, config.noise_sigma, image_rng, &s.boxes);
    if (s.record.lateral_path) {
      s.lateral = render(s.truth, View::kLateral, config.image_size, config.noise_sigma, image_rng, nullptr);
    }
  });
  return studies;
}

SynthOutput synth_generate(const SynthConfig& config, const std::filesystem::path& out_dir) {
  config.validate();
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  SynthOutput out{out_dir / "train.csv", out_dir / "valid.csv", out_dir / "boxes.csv", out_dir / "truth.csv"};

  std::ofstream boxes(out.boxes_csv, std::ios::binary);
  std::ofstream truth(out.truth_csv, std::ios::binary);
  require(boxes.good() && truth.good(), ErrorKind::kIo, "synth: cannot write reports in " + out_dir.string());
  boxes << "study_id,class,x0,y0,x1,y1\n";
  truth << "study_id";
  for (auto name : kPathologyNames) truth << ',' << name;
  truth << '\n';

  auto emit = [&](const std::string& split, int count, int first_patient, bool with_uncertain,
                  const fs::path& manifest) {
    auto studies = synth_split(config, split, count, first_patient, with_uncertain);
    std::vector<StudyRecord> records;
    records.reserve(studies.size());
    for (const auto& s : studies) {
      fs::create_directories(out_dir / s.record.study_id);
      write_pgm(s.frontal, out_dir / *s.record.frontal_path);
      if (s.lateral) write_pgm(*s.lateral, out_dir / *s.record.lateral_path);
      truth << s.record.study_id;
      for (bool t : s.truth) truth << ',' << (t ? 1 : 0);
      truth << '\n';
      for (std::size_t k = 0; k < kNumPathologies; ++k) {
        if (!s.boxes[k]) continue;
        const auto& b = *s.boxes[k];
        boxes << s.record.study_id << ',' << kPathologyNames[k] << ',' << b.x0 << ',' << b.y0 << ',' << b.x1
              << ',' << b.y1 << '\n';
      }
      records.push_back(s.record);
    }
    write_manifest(records, manifest);
  };
  emit("train", config.n_studies, 1, true, out.train_manifest);
  if (config.n_valid > 0) emit("valid", config.n_valid, config.n_studies + 1, false, out.valid_manifest);
  else write_manifest({}, out.valid_manifest);
  require(boxes.good() && truth.good(), ErrorKind::kIo, "synth: write failed in " + out_dir.string());
  return out;
}

std::vector<BoxRecord> read_boxes(const std::filesystem::path& csv_path) {
  std::ifstream in(csv_path, std::ios::binary);
  require(in.good(), ErrorKind::kIo, "cannot open " + csv_path.string());
  std::vector<BoxRecord> out;
  std::string line;
  std::getline(in, line);
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    const std::string where = csv_path.string() + ":" + std::to_string(line_no);
    require(fields.size() == 6, ErrorKind::kParse, where + ": expected 6 fields");
    BoxRecord rec;
    rec.study_id = fields[0];
    auto it = std::find(kPathologyNames.begin(), kPathologyNames.end(), fields[1]);
    require(it != kPathologyNames.end(), ErrorKind::kParse, where + ": unknown class '" + fields[1] + "'");
    rec.class_index = static_cast<int>(it - kPathologyNames.begin());
    try {
      rec.box = {std::stoi(fields[2]), std::stoi(fields[3]), std::stoi(fields[4]), std::stoi(fields[5])};
    } catch (const std::exception&) {
      fail(ErrorKind::kParse, where + ": bad box coordinate");
    }
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace cxr
