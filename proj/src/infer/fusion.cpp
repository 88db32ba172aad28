#include "cxr/infer/fusion.hpp"

#include <algorithm>
#include <map>
#include <sstream>

#include "cxr/common/error.hpp"
#include "cxr/data/dataset.hpp"
#include "cxr/train/config.hpp"
#include "cxr/train/trainer.hpp"

namespace cxr {

ScoreRow fuse_max(std::span<const ScoreRow> views) {
  require(!views.empty(), ErrorKind::kInvalidArgument, "fuse_max: no views");
  ScoreRow out = views.front();
  for (const auto& v : views.subspan(1)) {
    for (std::size_t k = 0; k < kNumPathologies; ++k) out[k] = std::max(out[k], v[k]);
  }
  return out;
}

std::array<int, kNumPathologies> threshold_labels(const ScoreRow& fused, double threshold) {
  std::array<int, kNumPathologies> out{};
  for (std::size_t k = 0; k < kNumPathologies; ++k) out[k] = fused[k] >= threshold ? 1 : 0;
  return out;
}

StudyPrediction make_prediction(std::string study_id, std::optional<ScoreRow> frontal,
                                std::optional<ScoreRow> lateral) {
  std::vector<ScoreRow> present;
  if (frontal) present.push_back(*frontal);
  if (lateral) present.push_back(*lateral);
  require(!present.empty(), ErrorKind::kInvalidArgument, "study " + study_id + " has no view predictions");
  StudyPrediction p;
  p.study_id = std::move(study_id);
  p.frontal = frontal;
  p.lateral = lateral;
  p.fused = fuse_max(present);
  p.labels = threshold_labels(p.fused);
  return p;
}

ViewModel make_view_model(const Checkpoint& checkpoint) {
  const TrainConfig config = TrainConfig::from_text(checkpoint.config_echo);
  return ViewModel{instantiate(checkpoint), config.view, checkpoint.mean_pixel};
}

ViewModel load_view_model(const std::filesystem::path& path, View expected) {
  ViewModel m = make_view_model(load_checkpoint(path));
  require(m.view == expected, ErrorKind::kMismatch,
          path.string() + ": model was trained on " + std::string(to_string(m.view)) + " images, expected " +
              std::string(to_string(expected)));
  return m;
}

std::vector<ScoreRow> predict_view(ViewModel& model, const std::vector<Tensor>& images) {
  std::vector<ScoreRow> out(images.size());
  if (images.empty()) return out;
  const Tensor probs = predict_images(model.model, images, model.mean_pixel);
  for (std::size_t i = 0; i < images.size(); ++i) {
    std::copy_n(probs.ptr() + i * kNumPathologies, kNumPathologies, out[i].begin());
  }
  return out;
}

std::vector<ScoreRow> predict_view_ensemble(std::vector<ViewModel*> models, const std::vector<Tensor>& images) {
  require(!models.empty(), ErrorKind::kInvalidArgument, "predict_view_ensemble: no models");
  std::vector<ScoreRow> sum(images.size());
  for (auto* m : models) {
    const auto p = predict_view(*m, images);
    for (std::size_t i = 0; i < p.size(); ++i) {
      for (std::size_t k = 0; k < kNumPathologies; ++k) sum[i][k] += p[i][k];
    }
  }
  for (auto& row : sum) {
    for (auto& v : row) v /= static_cast<double>(models.size());
  }
  return sum;
}

std::vector<StudyPrediction> predict_studies(const std::vector<StudyRecord>& records, ViewModel* frontal,
                                             ViewModel* lateral, const std::filesystem::path& image_root) {
  require(!frontal || frontal->view == View::kFrontal, ErrorKind::kMismatch,
          "predict_studies: frontal slot holds a lateral model");
  require(!lateral || lateral->view == View::kLateral, ErrorKind::kMismatch,
          "predict_studies: lateral slot holds a frontal model");
  std::vector<std::optional<ScoreRow>> f(records.size()), l(records.size());
  auto run = [&](ViewModel* model, View view, std::vector<std::optional<ScoreRow>>& out) {
    if (!model) return;
    const auto rows = records_with_view(records, view);
    const auto images = load_view_images(records, rows, view, model->input_size(), image_root);
    const auto probs = predict_view(*model, images);
    for (std::size_t i = 0; i < rows.size(); ++i) out[rows[i]] = probs[i];
  };
  run(frontal, View::kFrontal, f);
  run(lateral, View::kLateral, l);
  std::vector<StudyPrediction> out;
  out.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    require(f[i] || l[i], ErrorKind::kInvalidArgument,
            "study " + records[i].study_id + ": no view image with a matching model");
    out.push_back(make_prediction(records[i].study_id, f[i], l[i]));
  }
  return out;
}

std::string format_predictions(const std::vector<StudyPrediction>& predictions) {
  std::ostringstream out;
  out << "study_id,view";
  for (const char* group : {"p_", "fused_", "label_"}) {
    for (auto name : kPathologyNames) out << ',' << csv_escape(group + std::string(name));
  }
  out << '\n';
  for (const auto& p : predictions) {
    auto row = [&](View view, const ScoreRow& probs) {
      out << csv_escape(p.study_id) << ',' << to_string(view);
      for (double v : probs) out << ',' << format_real(v);
      for (double v : p.fused) out << ',' << format_real(v);
      for (int v : p.labels) out << ',' << v;
      out << '\n';
    };
    if (p.frontal) row(View::kFrontal, *p.frontal);
    if (p.lateral) row(View::kLateral, *p.lateral);
  }
  return out.str();
}

std::vector<StudyPrediction> parse_predictions(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::kParse, source + ": empty predictions file");
  std::vector<StudyPrediction> out;
  std::map<std::string, std::size_t> index;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    const std::string where = source + ":" + std::to_string(line_no);
    require(f.size() == 2 + 3 * kNumPathologies, ErrorKind::kParse, where + ": expected 17 columns");
    ScoreRow probs{};
    for (std::size_t k = 0; k < kNumPathologies; ++k) probs[k] = parse_real(where, f[2 + k]);
    View view;
    try {
      view = parse_view(f[1]);
    } catch (const Error&) {
      fail(ErrorKind::kParse, where + ": bad view '" + f[1] + "'");
    }
    auto [it, inserted] = index.try_emplace(f[0], out.size());
    if (inserted) {
      out.emplace_back();
      out.back().study_id = f[0];
    }
    auto& p = out[it->second];
    (view == View::kFrontal ? p.frontal : p.lateral) = probs;
  }
  for (auto& p : out) p = make_prediction(p.study_id, p.frontal, p.lateral);
  return out;
}

TruthRow truth_from_labels(const LabelRow& labels) {
  TruthRow out{};
  for (std::size_t k = 0; k < kNumPathologies; ++k) {
    switch (labels[k]) {
      case LabelState::kPositive: out[k] = 1; break;
      case LabelState::kNegative:
      case LabelState::kUnmentioned: out[k] = 0; break;
      case LabelState::kUncertain: break;
    }
  }
  return out;
}

}  // namespace cxr
