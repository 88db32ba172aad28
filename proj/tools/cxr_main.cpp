// cxr: command-line driver for the chest X-ray pipeline.
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "cxr/cam/grad_cam.hpp"
#include "cxr/cli/experiment.hpp"
#include "cxr/common/allocator.hpp"
#include "cxr/common/error.hpp"
#include "cxr/data/transforms.hpp"
#include "cxr/model/audit.hpp"

namespace fs = std::filesystem;
using namespace cxr;

namespace {

enum Exit { kOk = 0, kUsage = 1, kRuntime = 2 };

// Flag echo for subcommands without a config file.
std::string echo_flags(const CLI::App& app) {
  std::ostringstream out;
  out << "command = " << app.get_name() << '\n';
  for (const CLI::Option* opt : app.get_options()) {
    if (opt->get_name() == "--help" || opt->count() == 0) continue;
    out << opt->get_name().substr(2) << " = " << opt->as<std::string>() << '\n';
  }
  return out.str();
}

std::size_t parse_class(const std::string& text) {
  for (std::size_t k = 0; k < kNumPathologies; ++k) {
    if (text == kPathologyNames[k]) return k;
  }
  try {
    std::size_t used = 0;
    const int k = std::stoi(text, &used);
    if (used == text.size() && k >= 0 && k < static_cast<int>(kNumPathologies)) return static_cast<std::size_t>(k);
  } catch (const std::exception&) {
  }
  throw UsageError("--class must be 0-4 or a pathology name, got '" + text + "'");
}

void print_epoch(const std::string& tag, const EpochRecord& e) {
  std::printf("%s epoch %d  train %.5f  valid %.5f  lr %.2e  %.1fs\n", tag.c_str(), e.epoch, e.train_loss, e.val_loss,
              e.lr, e.seconds);
  std::fflush(stdout);
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Chest X-ray multi-label classification pipeline"};
  app.set_version_flag("--version", std::string(tool_version()));
  app.require_subcommand(1);

  // synth-data
  auto* synth = app.add_subcommand("synth-data", "Render a synthetic corpus with manifests and boxes");
  SynthConfig sc;
  std::string synth_out;
  synth->add_option("--n", sc.n_studies, "training studies")->check(CLI::PositiveNumber);
  synth->add_option("--n-valid", sc.n_valid, "validation studies")->check(CLI::PositiveNumber);
  synth->add_option("--size", sc.image_size, "image side in pixels");
  synth->add_option("--seed", sc.seed, "generator seed");
  synth->add_option("--lateral-fraction", sc.lateral_fraction)->check(CLI::Range(0.0, 1.0));
  synth->add_option("--out", synth_out, "output directory")->required();

  // policy-apply
  auto* policy = app.add_subcommand("policy-apply", "Resolve uncertain labels");
  std::string policy_manifest, policy_name = "randomized-flip", policy_out, weight_mode = "inverse-frequency";
  std::uint64_t policy_seed = 1;
  bool cell_scope = false;
  policy->add_option("--manifest", policy_manifest)->required()->check(CLI::ExistingFile);
  policy->add_option("--policy", policy_name, "u-ignore | u-zeros | u-ones | randomized-flip");
  policy->add_option("--seed", policy_seed);
  policy->add_option("--weights", weight_mode, "literal | inverse-frequency");
  policy->add_flag("--cell-scope", cell_scope, "u-ignore masks uncertain cells instead of whole studies");
  policy->add_option("--out", policy_out, "output directory")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "Train one view's model");
  std::string train_config, train_view_name;
  train_cmd->add_option("--config", train_config)->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--view", train_view_name)->required()->check(CLI::IsMember({"frontal", "lateral"}));

  // infer
  auto* infer = app.add_subcommand("infer", "Predict studies and fuse views by per-class max");
  std::string frontal_model, lateral_model, infer_manifest, infer_out, infer_root;
  infer->add_option("--frontal-model", frontal_model)->check(CLI::ExistingFile);
  infer->add_option("--lateral-model", lateral_model)->check(CLI::ExistingFile);
  infer->add_option("--manifest", infer_manifest)->required()->check(CLI::ExistingFile);
  infer->add_option("--image-root", infer_root, "defaults to the manifest's directory");
  infer->add_option("--out", infer_out, "output directory")->required();

  // eval
  auto* eval = app.add_subcommand("eval", "Per-pathology AUROC of fused predictions");
  std::string eval_predictions, eval_manifest, eval_out;
  eval->add_option("--predictions", eval_predictions)->required()->check(CLI::ExistingFile);
  eval->add_option("--manifest", eval_manifest)->required()->check(CLI::ExistingFile);
  eval->add_option("--out", eval_out, "output directory")->required();

  // ablate-resolution
  auto* ablate = app.add_subcommand("ablate-resolution", "Train at several input sizes and compare AUROC");
  std::string ablate_config;
  ablate->add_option("--config", ablate_config)->required()->check(CLI::ExistingFile);

  // cam
  auto* cam = app.add_subcommand("cam", "Grad-CAM overlay for one image");
  std::string cam_model, cam_image, cam_class, cam_out;
  cam->add_option("--model", cam_model)->required()->check(CLI::ExistingFile);
  cam->add_option("--image", cam_image)->required()->check(CLI::ExistingFile);
  cam->add_option("--class", cam_class, "0-4 or pathology name")->required();
  cam->add_option("--out", cam_out, "output directory")->required();

  // gradcheck
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference audit of every op and the micro model");
  int grad_seeds = 20;
  std::uint64_t grad_seed = 0;
  grad->add_option("--seeds", grad_seeds)->check(CLI::PositiveNumber);
  grad->add_option("--seed", grad_seed, "base seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*synth) {
      sc.validate();
      const auto files = synth_generate(sc, synth_out);
      write_run_echo(synth_out, echo_flags(*synth));
      std::printf("wrote %s, %s, %s\n", files.train_manifest.c_str(), files.valid_manifest.c_str(),
                  files.boxes_csv.c_str());
    } else if (*policy) {
      const auto records = parse_manifest(policy_manifest);
      PolicyOptions options;
      options.policy = parse_policy(policy_name);
      options.seed = policy_seed;
      options.ignore_scope = cell_scope ? IgnoreScope::kCell : IgnoreScope::kStudy;
      const auto resolved = apply_policy(records, options);
      write_run_echo(policy_out, echo_flags(*policy));
      write_text_file(fs::path(policy_out) / "resolved_labels.csv", format_resolved(records, resolved));
      const auto counts = positive_counts(resolved);
      const auto weights = class_weights_from_counts(counts, parse_weight_mode(weight_mode));
      std::ostringstream w;
      w << "pathology,positives,weight\n";
      for (std::size_t k = 0; k < kNumPathologies; ++k) {
        w << csv_escape(kPathologyNames[k]) << ',' << format_real(counts[k]) << ',' << format_real(weights.w[k]) << '\n';
      }
      write_text_file(fs::path(policy_out) / "class_weights.csv", w.str());
      std::printf("%zu studies, %zu retained\n", resolved.rows(), resolved.retained_rows().size());
    } else if (*train_cmd) {
      const ExperimentConfig config = ExperimentConfig::load(train_config);
      const View view = parse_view(train_view_name);
      const fs::path out = fs::path(config.out_dir) / train_view_name;
      const PreparedData data = prepare_data(config);
      const ViewRun run = train_view(config, data, view, config.image_size, config.train.seed, out,
                                     [&](const EpochRecord& e) { print_epoch(train_view_name, e); });
      std::printf("averaged model: %s (validation loss %.5f, mean AUROC %.4f)\n", (out / "averaged.ckpt").c_str(),
                  run.result.averaged.val_loss, run.valid_report.mean.value_or(std::nan("")));
    } else if (*infer) {
      if (frontal_model.empty() && lateral_model.empty()) throw UsageError("infer needs --frontal-model and/or --lateral-model");
      std::optional<ViewModel> f, l;
      if (!frontal_model.empty()) f = load_view_model(frontal_model, View::kFrontal);
      if (!lateral_model.empty()) l = load_view_model(lateral_model, View::kLateral);
      const auto records = parse_manifest(infer_manifest);
      const fs::path root = infer_root.empty() ? fs::path(infer_manifest).parent_path() : fs::path(infer_root);
      const auto preds = predict_studies(records, f ? &*f : nullptr, l ? &*l : nullptr, root.empty() ? "." : root);
      write_run_echo(infer_out, echo_flags(*infer));
      write_text_file(fs::path(infer_out) / "predictions.csv", format_predictions(preds));
      std::printf("%zu studies predicted\n", preds.size());
    } else if (*eval) {
      const auto preds = parse_predictions(read_text_file(eval_predictions), eval_predictions);
      const auto records = parse_manifest(eval_manifest);
      AurocReport report = evaluate_predictions(preds, records);
      write_run_echo(eval_out, echo_flags(*eval));
      write_text_file(fs::path(eval_out) / "auroc.csv", format_auroc_report(report));
      std::cout << format_auroc_report(report);
    } else if (*ablate) {
      const ExperimentConfig config = ExperimentConfig::load(ablate_config);
      const fs::path out = fs::path(config.out_dir) / "ablation";
      const auto report = run_resolution_ablation(config, out, [](const std::string& line) {
        std::printf("%s\n", line.c_str());
        std::fflush(stdout);
      });
      std::cout << format_ablation_csv(report) << format_ttest_csv(report);
    } else if (*cam) {
      const std::size_t cls = parse_class(cam_class);
      const Checkpoint ckpt = load_checkpoint(cam_model);
      ViewModel vm = make_view_model(ckpt);
      const ImageBuffer image = load_image(cam_image);
      Heatmap heatmap = grad_cam(vm.model, resize_bilinear(image, vm.input_size()), vm.mean_pixel, cls);
      heatmap.study_id = fs::path(cam_image).parent_path().string();
      write_run_echo(cam_out, echo_flags(*cam));
      export_overlay(heatmap, image, fs::path(cam_out) / "overlay.png");
      export_heatmap_pgm16(heatmap, fs::path(cam_out) / "heatmap.pgm");
      const auto [x, y] = heatmap_argmax(heatmap, image.width, image.height);
      std::printf("%s: peak at (%d, %d)\n", std::string(kPathologyNames[cls]).c_str(), x, y);
    } else if (*grad) {
      bool ok = true;
      for (const auto& e : gradient_audit(grad_seeds, grad_seed)) {
        std::printf("%-18s %s  max rel err %.3e (tol %.0e)  checked %zu  skipped %zu\n", e.name.c_str(),
                    e.pass() ? "ok  " : "FAIL", e.max_rel_error, e.tolerance, e.checked, e.skipped_nonsmooth);
        if (!e.pass()) {
          std::printf("    worst: %s\n", e.worst.c_str());
          ok = false;
        }
      }
      if (!ok) return kRuntime;
    }
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kUsage;
  } catch (const Error& e) {
    std::fprintf(stderr, "error [%s]: %s\n", std::string(to_string(e.kind())).c_str(), e.what());
    return kRuntime;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error [internal]: %s\n", e.what());
    return kRuntime;
  }
  return kOk;
}
