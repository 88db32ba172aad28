#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cxr/data/dataset.hpp"
#include "cxr/labels/policy.hpp"
#include "cxr/model/densenet.hpp"
#include "cxr/train/checkpoint.hpp"
#include "cxr/train/config.hpp"

namespace cxr {

// Images of one view with their resolved targets, in record order.
struct ViewData {
  View view = View::kFrontal;
  std::vector<std::size_t> rows;  // record index of each image
  std::vector<Tensor> images;     // raw intensities, (1, S, S)
  std::vector<ResolvedLabels::Row> targets;
  std::vector<ResolvedLabels::Row> mask;

  std::size_t size() const { return images.size(); }
};

// Every record carrying `view` whose resolved mask keeps at least one cell.
ViewData load_view_data(const std::vector<StudyRecord>& records, const ResolvedLabels& resolved, View view,
                        int image_size, const std::filesystem::path& root);

// First `count` images (deterministic subset for grid search).
ViewData slice(const ViewData& data, std::size_t count);

// Training entries: frontal images are augmented in place; lateral images
// get the original plus `lateral_copies` augmented copies.
std::vector<TrainingEntry> training_entries(const ViewData& data, const TrainConfig& config);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};

struct RunLog {
  std::vector<EpochRecord> epochs;
  // epoch,train_loss,val_loss,lr,seconds
  std::string to_csv() const;
  // Bitwise equality of everything except wall time.
  bool same_values(const RunLog& other) const;
};

struct TrainResult {
  std::vector<Checkpoint> best;  // ascending validation loss, ties by epoch
  Checkpoint averaged;           // mean of `best`, batch-norm statistics recomputed
  RunLog log;
  bool early_stopped = false;
};

struct TrainHooks {
  // When set, every epoch's checkpoint is written here.
  std::filesystem::path checkpoint_dir;
  std::function<void(const EpochRecord&, DenseNet&)> on_epoch;
};

// Caffe-style input batch (N, 1, S, S): image - mean_pixel.
Tensor make_batch(const std::vector<const Tensor*>& images, double mean_pixel);

// Loss for one batch: weighted BCE over unmasked cells plus the L2 penalty.
Variable batch_loss(DenseNet& model, const Tensor& inputs, const Tensor& targets, const Tensor& mask,
                    const ClassWeights& weights, double l2_lambda, Mode mode, Rng* rng);

// One optimizer step; returns the loss value. Throws kDiverged on a
// non-finite loss.
double train_step(DenseNet& model, Adam& optimizer, const Tensor& inputs, const Tensor& targets,
                  const Tensor& mask, const ClassWeights& weights, double l2_lambda, Rng* rng);

// Mean weighted BCE (no L2) over the whole set, eval mode.
double evaluate_loss(DenseNet& model, const ViewData& data, const ClassWeights& weights, double mean_pixel,
                     int batch_size = 32);

// Eval-mode probabilities (N, classes) for raw images.
Tensor predict_images(DenseNet& model, const std::vector<Tensor>& images, double mean_pixel, int batch_size = 32);

// One pass over the un-augmented training images in stat-collection mode.
void recalibrate_batch_norm(DenseNet& model, const ViewData& data, double mean_pixel, int batch_size);

TrainResult train(DenseNet& model, const ViewData& train_data, const ViewData& valid_data,
                  const ClassWeights& weights, double mean_pixel, const TrainConfig& config,
                  const TrainHooks& hooks = {});

// Parameter-space average of `checkpoints` loaded into `model`, followed by
// batch-norm recalibration on `train_data`.
Checkpoint average_and_recalibrate(DenseNet& model, const std::vector<Checkpoint>& checkpoints,
                                   const ViewData& train_data, int batch_size);

struct GridPoint {
  std::vector<std::pair<std::string, std::string>> overrides;  // TrainConfig keys
  std::string label() const;
};

struct GridResult {
  GridPoint point;
  double best_val_loss = 0.0;  // +inf when diverged
  bool diverged = false;
};

struct GridReport {
  std::vector<GridResult> ranked;  // ascending best_val_loss, ties by grid order
  // Per numeric key: [min, max] over the top quartile, for a finer scan.
  std::map<std::string, std::pair<double, double>> refine_box;
};

GridReport grid_search(const std::vector<GridPoint>& grid, const ModelConfig& model_config, const ViewData& train_data,
                       const ViewData& valid_data, const ClassWeights& weights, double mean_pixel,
                       const TrainConfig& base);

}  // namespace cxr
