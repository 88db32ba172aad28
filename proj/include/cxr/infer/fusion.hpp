#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cxr/metrics/metrics.hpp"
#include "cxr/model/densenet.hpp"
#include "cxr/train/checkpoint.hpp"

namespace cxr {

inline constexpr double kDecisionThreshold = 0.5;

// Elementwise maximum; throws kInvalidArgument on an empty list.
ScoreRow fuse_max(std::span<const ScoreRow> views);
// label_k = fused_k >= threshold.
std::array<int, kNumPathologies> threshold_labels(const ScoreRow& fused, double threshold = kDecisionThreshold);

struct StudyPrediction {
  std::string study_id;
  std::optional<ScoreRow> frontal;
  std::optional<ScoreRow> lateral;
  ScoreRow fused{};
  std::array<int, kNumPathologies> labels{};
};

StudyPrediction make_prediction(std::string study_id, std::optional<ScoreRow> frontal,
                                std::optional<ScoreRow> lateral);

// A trained single-view model with its preprocessing constants.
struct ViewModel {
  DenseNet model;
  View view = View::kFrontal;
  double mean_pixel = 0.0;
  int input_size() const { return model.config().input_size; }
};

ViewModel make_view_model(const Checkpoint& checkpoint);
// Throws kMismatch when the checkpoint was trained on the other view.
ViewModel load_view_model(const std::filesystem::path& path, View expected);

// Sigmoid outputs for images already at the model's input size.
std::vector<ScoreRow> predict_view(ViewModel& model, const std::vector<Tensor>& images);

// Each present view goes to its own model at that model's input size. A
// study whose views both lack a model throws kInvalidArgument.
std::vector<StudyPrediction> predict_studies(const std::vector<StudyRecord>& records, ViewModel* frontal,
                                             ViewModel* lateral, const std::filesystem::path& image_root);

// Prediction averaging over several models (alternative to weight averaging).
std::vector<ScoreRow> predict_view_ensemble(std::vector<ViewModel*> models, const std::vector<Tensor>& images);

// study_id,view,<5 probabilities>,<5 fused>,<5 labels>; one row per present
// view.
std::string format_predictions(const std::vector<StudyPrediction>& predictions);
std::vector<StudyPrediction> parse_predictions(const std::string& text, const std::string& source = "<memory>");

// Ground truth from a manifest: 1.0 -> 1, 0.0 or blank -> 0, -1.0 -> excluded.
TruthRow truth_from_labels(const LabelRow& labels);

}  // namespace cxr
