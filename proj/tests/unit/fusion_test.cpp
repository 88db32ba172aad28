#include <gtest/gtest.h>

#include <filesystem>

#include "cxr/common/error.hpp"
#include "cxr/common/random.hpp"
#include "cxr/data/dataset.hpp"
#include "cxr/data/synth.hpp"
#include "cxr/infer/fusion.hpp"
#include "cxr/train/config.hpp"

namespace fs = std::filesystem;
using namespace cxr;

namespace {

ScoreRow random_row(Rng& rng) {
  ScoreRow r;
  for (auto& v : r) v = uniform01(rng);
  return r;
}

Checkpoint view_checkpoint(View view, int size, std::uint64_t seed) {
  ModelConfig mc = preset_micro();
  mc.input_size = size;
  mc.block_layers = {2, 2};
  mc.growth_rate = 4;
  mc.stem_channels = 8;
  DenseNet model(mc, seed);
  Checkpoint c = capture(model, 100.0);
  TrainConfig tc;
  tc.view = view;
  c.config_echo = tc.to_text();
  return c;
}

}  // namespace

TEST(FuseTest, Examples) {
  const ScoreRow f{0.2, 0.9, 0.1, 0.4, 0.6};
  const ScoreRow l{0.6, 0.3, 0.05, 0.4, 0.7};
  EXPECT_EQ(fuse_max(std::vector<ScoreRow>{f}), f);
  EXPECT_EQ(fuse_max(std::vector<ScoreRow>{f, l}), (ScoreRow{0.6, 0.9, 0.1, 0.4, 0.7}));
  EXPECT_EQ(threshold_labels({0.6, 0.9, 0.1, 0.5, 0.49}), (std::array<int, 5>{1, 1, 0, 1, 0}));
  EXPECT_THROW(fuse_max(std::vector<ScoreRow>{}), Error);
  const auto single = make_prediction("s", f, std::nullopt);
  EXPECT_EQ(single.fused, f);
  EXPECT_THROW(make_prediction("s", std::nullopt, std::nullopt), Error);
}

TEST(FuseTest, AlgebraicProperties) {
  Rng rng(31);
  for (int trial = 0; trial < 500; ++trial) {
    const ScoreRow a = random_row(rng), b = random_row(rng), c = random_row(rng);
    const ScoreRow ab = fuse_max(std::vector<ScoreRow>{a, b});
    EXPECT_EQ(ab, fuse_max(std::vector<ScoreRow>{b, a}));
    EXPECT_EQ(fuse_max(std::vector<ScoreRow>{ab, c}),
              fuse_max(std::vector<ScoreRow>{a, fuse_max(std::vector<ScoreRow>{b, c})}));
    EXPECT_EQ(fuse_max(std::vector<ScoreRow>{a, a}), a);
    EXPECT_EQ(fuse_max(std::vector<ScoreRow>{ab, ab}), ab);
    const auto labels_a = threshold_labels(a), labels_ab = threshold_labels(ab);
    for (std::size_t k = 0; k < kNumPathologies; ++k) {
      EXPECT_GE(ab[k], a[k]);
      EXPECT_GE(labels_ab[k], labels_a[k]);
    }
  }
}

TEST(PredictionCsvTest, RoundTrip) {
  Rng rng(4);
  std::vector<StudyPrediction> preds;
  preds.push_back(make_prediction("a/b", random_row(rng), random_row(rng)));
  preds.push_back(make_prediction("c", random_row(rng), std::nullopt));
  preds.push_back(make_prediction("d", std::nullopt, random_row(rng)));
  const std::string csv = format_predictions(preds);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  const auto back = parse_predictions(csv);
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back[i].study_id, preds[i].study_id);
    EXPECT_EQ(back[i].frontal, preds[i].frontal);
    EXPECT_EQ(back[i].lateral, preds[i].lateral);
    EXPECT_EQ(back[i].fused, preds[i].fused);
  }
  EXPECT_THROW(parse_predictions("h\nx,frontal,1\n"), Error);
}

TEST(TruthTest, UncertainExcluded) {
  const LabelRow row{LabelState::kPositive, LabelState::kNegative, LabelState::kUncertain, LabelState::kUnmentioned,
                     LabelState::kPositive};
  const TruthRow t = truth_from_labels(row);
  EXPECT_EQ(t[0], 1);
  EXPECT_EQ(t[1], 0);
  EXPECT_FALSE(t[2].has_value());
  EXPECT_EQ(t[3], 0);
}

TEST(PredictStudiesTest, RoutesViewsToTheirModels) {
  SynthConfig sc;
  sc.n_studies = 20;
  sc.n_valid = 20;
  sc.image_size = 40;
  sc.lateral_fraction = 0.5;
  const fs::path dir = fs::temp_directory_path() / "cxr_fusion_test";
  fs::remove_all(dir);
  const auto files = synth_generate(sc, dir);
  const auto records = parse_manifest(files.valid_manifest);

  // Frontal model at 40, lateral model at 32: each view is resized to its own model.
  ViewModel frontal = make_view_model(view_checkpoint(View::kFrontal, 40, 1));
  ViewModel lateral = make_view_model(view_checkpoint(View::kLateral, 32, 2));
  const auto preds = predict_studies(records, &frontal, &lateral, dir);
  ASSERT_EQ(preds.size(), records.size());
  const auto lateral_rows = records_with_view(records, View::kLateral);
  const auto lateral_images = load_view_images(records, lateral_rows, View::kLateral, 32, dir);
  const auto lateral_probs = predict_view(lateral, lateral_images);
  for (std::size_t i = 0; i < lateral_rows.size(); ++i) EXPECT_EQ(preds[lateral_rows[i]].lateral, lateral_probs[i]);
  for (std::size_t i = 0; i < records.size(); ++i) {
    EXPECT_EQ(preds[i].lateral.has_value(), records[i].lateral_path.has_value());
    std::vector<ScoreRow> present;
    if (preds[i].frontal) present.push_back(*preds[i].frontal);
    if (preds[i].lateral) present.push_back(*preds[i].lateral);
    EXPECT_EQ(preds[i].fused, fuse_max(present));
  }
  EXPECT_THROW(predict_studies(records, &lateral, nullptr, dir), Error);
  EXPECT_THROW(predict_studies(records, nullptr, &lateral, dir), Error);  // frontal-only studies have no model

  const fs::path ckpt = dir / "lateral.ckpt";
  save_checkpoint(view_checkpoint(View::kLateral, 32, 2), ckpt);
  EXPECT_NO_THROW(load_view_model(ckpt, View::kLateral));
  EXPECT_THROW(load_view_model(ckpt, View::kFrontal), Error);
}
