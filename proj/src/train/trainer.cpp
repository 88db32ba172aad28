#include "cxr/train/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include "cxr/common/allocator.hpp"
#include "cxr/common/error.hpp"
#include "cxr/common/parallel.hpp"
#include "cxr/train/schedule.hpp"

namespace cxr {

namespace {

constexpr std::uint64_t kShuffleStream = 0x5348;
constexpr std::uint64_t kAugmentStream = 0x4155;
constexpr std::uint64_t kDropoutStream = 0x4452;

Tensor rows_tensor(const std::vector<ResolvedLabels::Row>& rows, const std::vector<std::size_t>& pick) {
  Tensor out({static_cast<std::int64_t>(pick.size()), static_cast<std::int64_t>(kNumPathologies)});
  for (std::size_t i = 0; i < pick.size(); ++i) {
    std::copy(rows[pick[i]].begin(), rows[pick[i]].end(), out.ptr() + i * kNumPathologies);
  }
  return out;
}

bool any_unmasked(const Tensor& mask) {
  return std::any_of(mask.values().begin(), mask.values().end(), [](double m) { return m != 0.0; });
}

std::string epoch_name(int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%03d.ckpt", epoch);
  return buf;
}

}  // namespace

ViewData load_view_data(const std::vector<StudyRecord>& records, const ResolvedLabels& resolved, View view,
                        int image_size, const std::filesystem::path& root) {
  require(records.size() == resolved.rows(), ErrorKind::kShapeMismatch,
          "load_view_data: labels do not align with records");
  ViewData data;
  data.view = view;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!records[i].path(view)) continue;
    if (std::all_of(resolved.mask[i].begin(), resolved.mask[i].end(), [](double m) { return m == 0.0; })) continue;
    data.rows.push_back(i);
    data.targets.push_back(resolved.targets[i]);
    data.mask.push_back(resolved.mask[i]);
  }
  data.images = load_view_images(records, data.rows, view, image_size, root);
  return data;
}

ViewData slice(const ViewData& data, std::size_t count) {
  count = std::min(count, data.size());
  ViewData out;
  out.view = data.view;
  out.rows.assign(data.rows.begin(), data.rows.begin() + static_cast<std::ptrdiff_t>(count));
  out.images.assign(data.images.begin(), data.images.begin() + static_cast<std::ptrdiff_t>(count));
  out.targets.assign(data.targets.begin(), data.targets.begin() + static_cast<std::ptrdiff_t>(count));
  out.mask.assign(data.mask.begin(), data.mask.begin() + static_cast<std::ptrdiff_t>(count));
  return out;
}

std::vector<TrainingEntry> training_entries(const ViewData& data, const TrainConfig& config) {
  if (data.view == View::kLateral) return expand_lateral(make_entries(data.size(), false), config.lateral_copies);
  return make_entries(data.size(), true);
}

std::string RunLog::to_csv() const {
  std::ostringstream out;
  out << "epoch,train_loss,val_loss,lr,seconds\n";
  for (const auto& e : epochs) {
    out << e.epoch << ',' << format_real(e.train_loss) << ',' << format_real(e.val_loss) << ','
        << format_real(e.lr) << ',' << format_real(e.seconds) << '\n';
  }
  return out.str();
}

bool RunLog::same_values(const RunLog& other) const {
  if (epochs.size() != other.epochs.size()) return false;
  for (std::size_t i = 0; i < epochs.size(); ++i) {
    const auto& a = epochs[i];
    const auto& b = other.epochs[i];
    if (a.epoch != b.epoch || format_real(a.train_loss) != format_real(b.train_loss) ||
        format_real(a.val_loss) != format_real(b.val_loss) || format_real(a.lr) != format_real(b.lr)) {
      return false;
    }
  }
  return true;
}

Tensor make_batch(const std::vector<const Tensor*>& images, double mean_pixel) {
  require(!images.empty(), ErrorKind::kInvalidArgument, "make_batch: no images");
  const Shape& s = images.front()->shape();
  require(s.size() == 3, ErrorKind::kShapeMismatch, "make_batch: images must be (C, H, W)");
  const std::size_t per = images.front()->size();
  Tensor out({static_cast<std::int64_t>(images.size()), s[0], s[1], s[2]});
  for (std::size_t i = 0; i < images.size(); ++i) {
    require(images[i]->shape() == s, ErrorKind::kShapeMismatch, "make_batch: image sizes differ");
    const double* src = images[i]->ptr();
    double* dst = out.ptr() + i * per;
    for (std::size_t j = 0; j < per; ++j) dst[j] = src[j] - mean_pixel;
  }
  return out;
}

Variable batch_loss(DenseNet& model, const Tensor& inputs, const Tensor& targets, const Tensor& mask,
                    const ClassWeights& weights, double l2_lambda, Mode mode, Rng* rng) {
  const auto out = model.forward(Variable(inputs), mode, rng);
  Variable loss = weighted_bce_loss(out.probs, targets, weights.w, mask);
  if (l2_lambda > 0.0) loss = add(loss, l2_penalty(model.parameter_vars(), l2_lambda));
  return loss;
}

double train_step(DenseNet& model, Adam& optimizer, const Tensor& inputs, const Tensor& targets,
                  const Tensor& mask, const ClassWeights& weights, double l2_lambda, Rng* rng) {
  optimizer.zero_grad();
  Variable loss = batch_loss(model, inputs, targets, mask, weights, l2_lambda, Mode::kTrain, rng);
  const double value = loss.value().item();
  require(std::isfinite(value), ErrorKind::kDiverged, "non-finite training loss");
  loss.backward();
  try {
    optimizer.step();
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kNonFinite) fail(ErrorKind::kDiverged, e.what());
    throw;
  }
  return value;
}

double evaluate_loss(DenseNet& model, const ViewData& data, const ClassWeights& weights, double mean_pixel,
                     int batch_size) {
  require(data.size() > 0, ErrorKind::kInvalidArgument, "evaluate_loss: empty data");
  // Weighted sum over unmasked cells, then one division, so the result does
  // not depend on the batch size.
  double total = 0.0, cells = 0.0;
  for (std::size_t start = 0; start < data.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(data.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<std::size_t> pick(end - start);
    std::iota(pick.begin(), pick.end(), start);
    std::vector<const Tensor*> images;
    for (auto i : pick) images.push_back(&data.images[i]);
    const Tensor mask = rows_tensor(data.mask, pick);
    if (!any_unmasked(mask)) continue;
    const Tensor probs = model.forward(Variable(make_batch(images, mean_pixel)), Mode::kEval).probs.value();
    const Tensor targets = rows_tensor(data.targets, pick);
    for (std::size_t i = 0; i < probs.size(); ++i) {
      if (mask[i] == 0.0) continue;
      const double p = std::clamp(probs[i], kProbabilityClamp, 1.0 - kProbabilityClamp);
      const double y = targets[i];
      total += -weights.w[i % kNumPathologies] * (y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
      cells += 1.0;
    }
  }
  require(cells > 0.0, ErrorKind::kInvalidArgument, "evaluate_loss: every cell is masked");
  return total / cells;
}

Tensor predict_images(DenseNet& model, const std::vector<Tensor>& images, double mean_pixel, int batch_size) {
  const auto classes = static_cast<std::int64_t>(model.config().num_classes);
  Tensor out({static_cast<std::int64_t>(std::max<std::size_t>(images.size(), 1)), classes});
  for (std::size_t start = 0; start < images.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(images.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<const Tensor*> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(&images[i]);
    const Tensor probs = model.forward(Variable(make_batch(batch, mean_pixel)), Mode::kEval).probs.value();
    std::copy(probs.values().begin(), probs.values().end(), out.ptr() + start * static_cast<std::size_t>(classes));
  }
  return out;
}

void recalibrate_batch_norm(DenseNet& model, const ViewData& data, double mean_pixel, int batch_size) {
  require(data.size() > 0, ErrorKind::kInvalidArgument, "recalibrate_batch_norm: empty data");
  model.begin_stat_collection();
  for (std::size_t start = 0; start < data.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(data.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<const Tensor*> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(&data.images[i]);
    model.forward(Variable(make_batch(batch, mean_pixel)), Mode::kCollectStats);
  }
  model.finish_stat_collection();
}

Checkpoint average_and_recalibrate(DenseNet& model, const std::vector<Checkpoint>& checkpoints,
                                   const ViewData& train_data, int batch_size) {
  Checkpoint averaged = average_checkpoints(checkpoints);
  restore(model, averaged);
  recalibrate_batch_norm(model, train_data, averaged.mean_pixel, batch_size);
  Checkpoint out = capture(model, averaged.mean_pixel);
  out.config_echo = averaged.config_echo;
  out.epoch = averaged.epoch;
  return out;
}

TrainResult train(DenseNet& model, const ViewData& train_data, const ViewData& valid_data,
                  const ClassWeights& weights, double mean_pixel, const TrainConfig& config,
                  const TrainHooks& hooks) {
  config.validate();
  tune_allocator();
  require(train_data.size() >= 2, ErrorKind::kInvalidArgument, "train: need at least two training images");
  require(valid_data.size() >= 1, ErrorKind::kInvalidArgument, "train: empty validation data");
  require(train_data.view == config.view && valid_data.view == config.view, ErrorKind::kInvalidArgument,
          "train: data view does not match the configured view");

  const auto entries = training_entries(train_data, config);
  const std::string echo = config.to_text();
  Adam optimizer(model.parameter_vars(), AdamOptions{config.initial_lr});
  PlateauScheduler plateau(config.initial_lr, config.plateau_factor, config.plateau_patience, config.min_delta);
  EarlyStopper stopper(config.early_stop_patience, config.min_delta);
  TrainResult result;
  const auto batch = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    std::vector<std::size_t> order(entries.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(config.seed, kShuffleStream, static_cast<std::uint64_t>(epoch)));
    shuffle(order, shuffle_rng);

    double loss_sum = 0.0;
    std::size_t loss_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      if (end - start < 2) break;  // a lone trailing sample gives batch norm nothing to normalize
      const std::size_t count = end - start;
      std::vector<Tensor> prepared(count);
      parallel_for(count, [&](std::size_t i) {
        const auto& entry = entries[order[start + i]];
        const Tensor& raw = train_data.images[entry.index];
        if (config.augment && entry.augment) {
          Rng aug(derive_seed(config.seed, kAugmentStream, static_cast<std::uint64_t>(epoch), start + i));
          prepared[i] = augment(raw, config.augmentation, aug, mean_pixel);
        } else {
          prepared[i] = raw;
        }
      });
      std::vector<const Tensor*> images;
      std::vector<std::size_t> rows;
      for (std::size_t i = 0; i < count; ++i) {
        images.push_back(&prepared[i]);
        rows.push_back(entries[order[start + i]].index);
      }
      const Tensor mask = rows_tensor(train_data.mask, rows);
      if (!any_unmasked(mask)) continue;
      Rng dropout_rng(derive_seed(config.seed, kDropoutStream, static_cast<std::uint64_t>(epoch), start));
      try {
        loss_sum += train_step(model, optimizer, make_batch(images, mean_pixel), rows_tensor(train_data.targets, rows),
                               mask, weights, config.l2_lambda, &dropout_rng);
      } catch (const Error& e) {
        if (e.kind() == ErrorKind::kDiverged) {
          fail(ErrorKind::kDiverged, "training diverged in epoch " + std::to_string(epoch) + ": " + e.what());
        }
        throw;
      }
      ++loss_batches;
    }
    model.zero_grad();

    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_batches ? loss_sum / static_cast<double>(loss_batches) : 0.0;
    record.val_loss = evaluate_loss(model, valid_data, weights, mean_pixel);
    record.lr = optimizer.lr();
    require(std::isfinite(record.val_loss), ErrorKind::kDiverged,
            "training diverged in epoch " + std::to_string(epoch) + ": non-finite validation loss");

    Checkpoint checkpoint = capture(model, mean_pixel);
    checkpoint.config_echo = echo;
    checkpoint.epoch = epoch;
    checkpoint.val_loss = record.val_loss;
    checkpoint.optimizer = optimizer.state();
    if (!hooks.checkpoint_dir.empty()) save_checkpoint(checkpoint, hooks.checkpoint_dir / epoch_name(epoch));

    // Keep the best `keep_best` by (val_loss, epoch).
    auto pos = std::upper_bound(result.best.begin(), result.best.end(), checkpoint,
                                [](const Checkpoint& a, const Checkpoint& b) {
                                  return a.val_loss < b.val_loss || (a.val_loss == b.val_loss && a.epoch < b.epoch);
                                });
    result.best.insert(pos, std::move(checkpoint));
    if (result.best.size() > static_cast<std::size_t>(config.keep_best)) result.best.pop_back();

    optimizer.set_lr(plateau.step(record.val_loss));
    const bool stop = stopper.step(record.val_loss);
    record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result.log.epochs.push_back(record);
    if (hooks.on_epoch) hooks.on_epoch(record, model);
    if (stop) {
      result.early_stopped = true;
      break;
    }
  }

  result.averaged = average_and_recalibrate(model, result.best, train_data, std::max(config.batch_size, 32));
  result.averaged.val_loss = evaluate_loss(model, valid_data, weights, mean_pixel);
  return result;
}

std::string GridPoint::label() const {
  std::string out;
  for (const auto& [k, v] : overrides) out += (out.empty() ? "" : " ") + k + "=" + v;
  return out.empty() ? "(base)" : out;
}

GridReport grid_search(const std::vector<GridPoint>& grid, const ModelConfig& model_config, const ViewData& train_data,
                       const ViewData& valid_data, const ClassWeights& weights, double mean_pixel,
                       const TrainConfig& base) {
  require(!grid.empty(), ErrorKind::kInvalidArgument, "grid_search: empty grid");
  GridReport report;
  for (const auto& point : grid) {
    TrainConfig config = base;
    for (const auto& [key, value] : point.overrides) config.set(key, value);
    DenseNet model(model_config, config.seed);
    GridResult r;
    r.point = point;
    try {
      const auto result = train(model, train_data, valid_data, weights, mean_pixel, config);
      r.best_val_loss = result.best.front().val_loss;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kDiverged) throw;
      r.diverged = true;
      r.best_val_loss = std::numeric_limits<double>::infinity();
    }
    report.ranked.push_back(std::move(r));
  }
  std::stable_sort(report.ranked.begin(), report.ranked.end(),
                   [](const GridResult& a, const GridResult& b) { return a.best_val_loss < b.best_val_loss; });
  const std::size_t top = std::max<std::size_t>(1, (report.ranked.size() + 3) / 4);
  for (std::size_t i = 0; i < top && i < report.ranked.size(); ++i) {
    if (report.ranked[i].diverged) continue;
    for (const auto& [key, value] : report.ranked[i].point.overrides) {
      double v = 0.0;
      try {
        v = parse_real(key, value);
      } catch (const Error&) {
        continue;  // non-numeric overrides have no range
      }
      auto [it, inserted] = report.refine_box.try_emplace(key, v, v);
      if (!inserted) {
        it->second.first = std::min(it->second.first, v);
        it->second.second = std::max(it->second.second, v);
      }
    }
  }
  return report;
}

}  // namespace cxr
