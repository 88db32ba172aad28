#pragma once

#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cxr/data/synth.hpp"
#include "cxr/infer/fusion.hpp"
#include "cxr/labels/policy.hpp"
#include "cxr/metrics/metrics.hpp"
#include "cxr/train/trainer.hpp"

namespace cxr {

std::string_view tool_version();

// Bad flags, bad config keys or values: exit code 1.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  // Manifests; when train_manifest is empty a synthetic corpus is generated
  // under <out_dir>/data from the synth_* keys.
  std::string train_manifest;
  std::string valid_manifest;
  std::string image_root;  // defaults to the manifest's directory
  SynthConfig synth;
  PolicyKind policy = PolicyKind::kRandomizedFlip;
  std::uint64_t policy_seed = 1;
  WeightMode weights = WeightMode::kInverseFrequency;
  std::string model = "micro";
  int image_size = 64;
  std::vector<int> resolutions{64, 56, 40};
  int runs = 5;
  std::string out_dir = "cxr_out";
  TrainConfig train;

  // key = value lines; '#' starts a comment. Unknown keys throw UsageError.
  static ExperimentConfig parse(const std::string& text, const std::string& source = "<memory>");
  static ExperimentConfig load(const std::filesystem::path& path);
  void set(const std::string& key, const std::string& value);
  std::string to_text() const;
  bool synthetic() const { return train_manifest.empty(); }
};

// Writes config.txt and VERSION into dir (created if missing).
void write_run_echo(const std::filesystem::path& dir, const std::string& config_text);
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

struct PreparedData {
  std::vector<StudyRecord> train_records;
  std::vector<StudyRecord> valid_records;
  ResolvedLabels train_labels;
  ResolvedLabels valid_labels;
  ClassWeights weights;
  std::filesystem::path train_root;
  std::filesystem::path valid_root;
};

// Manifests (generated if synthetic), resolved labels and class weights. The
// validation split goes through the same policy; it normally carries no
// uncertain cells.
PreparedData prepare_data(const ExperimentConfig& config);

ModelConfig model_config_for(const ExperimentConfig& config, int image_size);

struct ViewRun {
  TrainResult result;
  ViewData valid;
  double mean_pixel = 0.0;
  AurocReport valid_report;  // averaged model on this view's validation images
};

// Trains one view at one input size. With a non-empty out_dir, writes the
// echo, run_log.csv, per-epoch checkpoints, best/rank_<k>.ckpt, averaged.ckpt
// and valid_auroc.csv.
ViewRun train_view(const ExperimentConfig& config, const PreparedData& data, View view, int image_size,
                   std::uint64_t seed, const std::filesystem::path& out_dir,
                   const std::function<void(const EpochRecord&)>& progress = {});

// Truth rows for validation records, in record order.
std::vector<TruthRow> truth_rows(const std::vector<StudyRecord>& records);

// AUROC of predictions joined to a manifest by study id; studies without a
// prediction throw kMismatch.
AurocReport evaluate_predictions(const std::vector<StudyPrediction>& predictions,
                                 const std::vector<StudyRecord>& records);

// Frontal-view runs at every configured resolution, runs seeds each.
AblationReport run_resolution_ablation(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                                       const std::function<void(const std::string&)>& log = {});

}  // namespace cxr
