#include "cxr/cli/experiment.hpp"

#include <cstdio>
#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "cxr/common/error.hpp"
#include "cxr/data/transforms.hpp"

#ifndef CXR_VERSION
#define CXR_VERSION "dev"
#endif

namespace fs = std::filesystem;

namespace cxr {

std::string_view tool_version() { return CXR_VERSION; }

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<int> parse_int_list(const std::string& key, const std::string& value) {
  std::vector<int> out;
  std::stringstream in(value);
  std::string item;
  while (std::getline(in, item, ',')) {
    out.push_back(static_cast<int>(parse_integer(key, trim(item))));
  }
  if (out.empty()) throw UsageError(key + ": empty list");
  return out;
}

std::string join(const std::vector<int>& v) {
  std::string out;
  for (int x : v) out += (out.empty() ? "" : ",") + std::to_string(x);
  return out;
}

fs::path manifest_root(const std::string& manifest, const std::string& image_root) {
  if (!image_root.empty()) return image_root;
  const fs::path parent = fs::path(manifest).parent_path();
  return parent.empty() ? fs::path(".") : parent;
}

}  // namespace

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  try {
    if (key == "train_manifest") train_manifest = value;
    else if (key == "valid_manifest") valid_manifest = value;
    else if (key == "image_root") image_root = value;
    else if (key == "synth_n_studies") synth.n_studies = static_cast<int>(parse_integer(key, value));
    else if (key == "synth_n_valid") synth.n_valid = static_cast<int>(parse_integer(key, value));
    else if (key == "synth_image_size") synth.image_size = static_cast<int>(parse_integer(key, value));
    else if (key == "synth_seed") synth.seed = static_cast<std::uint64_t>(parse_integer(key, value));
    else if (key == "synth_lateral_fraction") synth.lateral_fraction = parse_real(key, value);
    else if (key == "synth_uncertain_fraction") synth.uncertain_fraction.fill(parse_real(key, value));
    else if (key == "synth_noise_sigma") synth.noise_sigma = parse_real(key, value);
    else if (key == "policy") policy = parse_policy(value);
    else if (key == "policy_seed") policy_seed = static_cast<std::uint64_t>(parse_integer(key, value));
    else if (key == "weights") weights = parse_weight_mode(value);
    else if (key == "model") {
      preset_by_name(value);
      model = value;
    } else if (key == "image_size") image_size = static_cast<int>(parse_integer(key, value));
    else if (key == "resolutions") resolutions = parse_int_list(key, value);
    else if (key == "runs") runs = static_cast<int>(parse_integer(key, value));
    else if (key == "out_dir") out_dir = value;
    else if (TrainConfig::has_key(key)) train.set(key, value);
    else throw UsageError("unknown config key '" + key + "'");
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

ExperimentConfig ExperimentConfig::parse(const std::string& text, const std::string& source) {
  ExperimentConfig config;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError(source + ":" + std::to_string(line_no) + ": expected key = value");
    }
    try {
      config.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const UsageError& e) {
      throw UsageError(source + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  try {
    config.train.validate();
    config.synth.validate();
  } catch (const Error& e) {
    throw UsageError(source + ": " + e.what());
  }
  if (config.runs < 1) throw UsageError(source + ": runs must be >= 1");
  if (config.train_manifest.empty() != config.valid_manifest.empty()) {
    throw UsageError(source + ": train_manifest and valid_manifest go together");
  }
  return config;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), path.string());
}

std::string ExperimentConfig::to_text() const {
  std::ostringstream out;
  out << "train_manifest = " << train_manifest << '\n'
      << "valid_manifest = " << valid_manifest << '\n'
      << "image_root = " << image_root << '\n'
      << "synth_n_studies = " << synth.n_studies << '\n'
      << "synth_n_valid = " << synth.n_valid << '\n'
      << "synth_image_size = " << synth.image_size << '\n'
      << "synth_seed = " << synth.seed << '\n'
      << "synth_lateral_fraction = " << format_real(synth.lateral_fraction) << '\n'
      << "synth_uncertain_fraction = " << format_real(synth.uncertain_fraction[0]) << '\n'
      << "synth_noise_sigma = " << format_real(synth.noise_sigma) << '\n'
      << "policy = " << to_string(policy) << '\n'
      << "policy_seed = " << policy_seed << '\n'
      << "weights = " << to_string(weights) << '\n'
      << "model = " << model << '\n'
      << "image_size = " << image_size << '\n'
      << "resolutions = " << join(resolutions) << '\n'
      << "runs = " << runs << '\n'
      << "out_dir = " << out_dir << '\n';
  std::istringstream train_lines(train.to_text());
  std::string line;
  while (std::getline(train_lines, line)) {
    const auto eq = line.find('=');
    out << line.substr(0, eq) << " = " << line.substr(eq + 1) << '\n';
  }
  return out.str();
}

void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  require(out.good(), ErrorKind::kIo, "cannot write " + path.string());
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::kIo, "cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_run_echo(const fs::path& dir, const std::string& config_text) {
  write_text_file(dir / "config.txt", config_text);
  write_text_file(dir / "VERSION", "cxr " + std::string(tool_version()) + "\n");
}

PreparedData prepare_data(const ExperimentConfig& config) {
  PreparedData data;
  fs::path train_manifest = config.train_manifest, valid_manifest = config.valid_manifest;
  if (config.synthetic()) {
    const fs::path dir = fs::path(config.out_dir) / "data";
    const auto files = synth_generate(config.synth, dir);
    write_run_echo(dir, config.to_text());
    train_manifest = files.train_manifest;
    valid_manifest = files.valid_manifest;
  }
  data.train_records = parse_manifest(train_manifest);
  data.valid_records = parse_manifest(valid_manifest);
  data.train_root = manifest_root(train_manifest.string(), config.image_root);
  data.valid_root = manifest_root(valid_manifest.string(), config.image_root);
  PolicyOptions options;
  options.policy = config.policy;
  options.seed = config.policy_seed;
  data.train_labels = apply_policy(data.train_records, options);
  options.seed = derive_seed(config.policy_seed, 0x76616c);
  data.valid_labels = apply_policy(data.valid_records, options);
  data.weights = compute_class_weights(data.train_labels, config.weights);
  return data;
}

ModelConfig model_config_for(const ExperimentConfig& config, int image_size) {
  ModelConfig m = preset_by_name(config.model);
  m.input_size = image_size;
  plan_architecture(m);
  return m;
}

std::vector<TruthRow> truth_rows(const std::vector<StudyRecord>& records) {
  std::vector<TruthRow> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(truth_from_labels(r.labels));
  return out;
}

ViewRun train_view(const ExperimentConfig& config, const PreparedData& data, View view, int image_size,
                   std::uint64_t seed, const fs::path& out_dir,
                   const std::function<void(const EpochRecord&)>& progress) {
  ViewRun run;
  const ViewData train_data = load_view_data(data.train_records, data.train_labels, view, image_size, data.train_root);
  run.valid = load_view_data(data.valid_records, data.valid_labels, view, image_size, data.valid_root);
  require(train_data.size() >= 2 && run.valid.size() >= 1, ErrorKind::kInvalidArgument,
          "not enough " + std::string(to_string(view)) + " images to train");
  run.mean_pixel = compute_mean_pixel(train_data.images);

  TrainConfig tc = config.train;
  tc.view = view;
  tc.seed = seed;
  DenseNet model(model_config_for(config, image_size), seed);
  TrainHooks hooks;
  if (!out_dir.empty()) {
    ExperimentConfig echo = config;
    echo.train = tc;
    echo.image_size = image_size;
    write_run_echo(out_dir, echo.to_text());
    hooks.checkpoint_dir = out_dir / "checkpoints";
    fs::create_directories(hooks.checkpoint_dir);
  }
  if (progress) hooks.on_epoch = [&](const EpochRecord& e, DenseNet&) { progress(e); };
  run.result = train(model, train_data, run.valid, data.weights, run.mean_pixel, tc, hooks);

  ViewModel vm = make_view_model(run.result.averaged);
  const auto probs = predict_view(vm, run.valid.images);
  std::vector<TruthRow> truth;
  for (auto row : run.valid.rows) truth.push_back(truth_from_labels(data.valid_records[row].labels));
  run.valid_report = auroc_report(probs, truth);
  run.valid_report.metadata = {{"seed", std::to_string(seed)},
                               {"resolution", std::to_string(image_size)},
                               {"policy", std::string(to_string(config.policy))},
                               {"view", std::string(to_string(view))}};

  if (!out_dir.empty()) {
    write_text_file(out_dir / "run_log.csv", run.result.log.to_csv());
    for (std::size_t k = 0; k < run.result.best.size(); ++k) {
      save_checkpoint(run.result.best[k], out_dir / "best" / ("rank_" + std::to_string(k + 1) + ".ckpt"));
    }
    save_checkpoint(run.result.averaged, out_dir / "averaged.ckpt");
    write_text_file(out_dir / "valid_auroc.csv", format_auroc_report(run.valid_report));
  }
  return run;
}

AurocReport evaluate_predictions(const std::vector<StudyPrediction>& predictions,
                                 const std::vector<StudyRecord>& records) {
  std::map<std::string, const StudyPrediction*> by_id;
  for (const auto& p : predictions) by_id[p.study_id] = &p;
  std::vector<ScoreRow> scores;
  std::vector<TruthRow> truth;
  for (const auto& r : records) {
    const auto it = by_id.find(r.study_id);
    require(it != by_id.end(), ErrorKind::kMismatch, "no prediction for study " + r.study_id);
    scores.push_back(it->second->fused);
    truth.push_back(truth_from_labels(r.labels));
  }
  return auroc_report(scores, truth);
}

AblationReport run_resolution_ablation(const ExperimentConfig& config, const fs::path& out_dir,
                                       const std::function<void(const std::string&)>& log) {
  if (config.resolutions.size() < 2) throw UsageError("ablation needs at least two resolutions");
  if (config.runs < 2) throw UsageError("ablation needs runs >= 2");
  const PreparedData data = prepare_data(config);
  std::vector<AblationRun> runs;
  std::ostringstream per_run;
  per_run << "resolution,seed";
  for (auto name : kPathologyNames) per_run << ',' << csv_escape(name);
  per_run << ",mean\n";
  for (int res : config.resolutions) {
    for (int r = 0; r < config.runs; ++r) {
      const std::uint64_t seed = config.train.seed + static_cast<std::uint64_t>(r);
      const fs::path dir = out_dir / ("res_" + std::to_string(res)) / ("seed_" + std::to_string(seed));
      const ViewRun run = train_view(config, data, View::kFrontal, res, seed, dir);
      AblationRun ar{res, seed, run.valid_report.auroc};
      runs.push_back(ar);
      per_run << res << ',' << seed;
      for (const auto& a : ar.auroc) per_run << ',' << (a ? format_real(*a) : "");
      per_run << ',' << (run.valid_report.mean ? format_real(*run.valid_report.mean) : "") << '\n';
      if (log) {
        char mean[32] = "n/a";
        if (run.valid_report.mean) std::snprintf(mean, sizeof mean, "%.4f", *run.valid_report.mean);
        log("resolution " + std::to_string(res) + " seed " + std::to_string(seed) + ": mean AUROC " + mean);
      }
    }
  }
  const AblationReport report = resolution_ablation(runs);
  write_run_echo(out_dir, config.to_text());
  write_text_file(out_dir / "runs.csv", per_run.str());
  write_text_file(out_dir / "ablation.csv", format_ablation_csv(report));
  write_text_file(out_dir / "ttests.csv", format_ttest_csv(report));
  write_text_file(out_dir / "ablation.svg", render_ablation_svg(report));
  return report;
}

}  // namespace cxr
