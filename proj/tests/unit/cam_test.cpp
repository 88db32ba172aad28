#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>

#include "cxr/cam/grad_cam.hpp"
#include "cxr/common/error.hpp"
#include "cxr/common/random.hpp"

namespace fs = std::filesystem;
using namespace cxr;

namespace {

ModelConfig small_model() {
  ModelConfig c = preset_micro();
  c.input_size = 32;
  c.block_layers = {2, 2};
  c.growth_rate = 4;
  c.stem_channels = 8;
  return c;
}

Tensor random_image(std::uint64_t seed, int size = 32) {
  Rng rng(seed);
  Tensor t({1, size, size});
  for (double& v : t.data()) v = 255.0 * uniform01(rng);
  return t;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Heatmap make_map(int w, int h, std::vector<double> values) {
  Heatmap m;
  m.width = w;
  m.height = h;
  m.values = std::move(values);
  return m;
}

}  // namespace

TEST(HeatmapTest, HandComputedMap) {
  // Two channels on a 1x2 grid.
  Tensor a({1, 2, 1, 2}, std::vector<double>{1, 3, 2, 0});
  Tensor g({1, 2, 1, 2}, std::vector<double>{1, 1, -1, -1});
  // weights: 1 and -1 -> map [1 - 2, 3 - 0] = [-1, 3] -> relu [0, 3] -> [0, 1]
  const Heatmap h = heatmap_from_gradients(a, g);
  EXPECT_EQ(h.width, 2);
  EXPECT_EQ(h.height, 1);
  EXPECT_EQ(h.values, (std::vector<double>{0.0, 1.0}));
}

TEST(HeatmapTest, ZeroGradientGivesZeroMap) {
  Tensor a({1, 3, 4, 4}, 2.0);
  const Heatmap h = heatmap_from_gradients(a, Tensor({1, 3, 4, 4}));
  for (double v : h.values) EXPECT_EQ(v, 0.0);
}

TEST(GradCamTest, ShapeRangeAndScaleInvariance) {
  DenseNet model(small_model(), 3);
  const auto plan = plan_architecture(small_model());
  const Tensor image = random_image(1);
  for (std::size_t k = 0; k < 5; ++k) {
    const Heatmap h = grad_cam(model, image, 120.0, k);
    EXPECT_EQ(h.width, plan.feature_spatial);
    EXPECT_EQ(h.height, plan.feature_spatial);
    double peak = 0.0;
    for (double v : h.values) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
      peak = std::max(peak, v);
    }
    EXPECT_TRUE(peak == 0.0 || peak == 1.0);
  }
  const Heatmap before = grad_cam(model, image, 120.0, 2);
  for (auto& p : model.parameters()) {
    if (p.name != "classifier.weight") continue;
    Tensor& w = p.var.mutable_value();
    for (std::int64_t c = 0; c < w.dim(1); ++c) w[2 * w.dim(1) + c] *= 3.5;
  }
  const Heatmap after = grad_cam(model, image, 120.0, 2);
  for (std::size_t i = 0; i < before.values.size(); ++i) EXPECT_NEAR(before.values[i], after.values[i], 1e-12);
  EXPECT_THROW(grad_cam(model, image, 120.0, 5), Error);
}

TEST(GradCamTest, ZeroClassifierRowGivesZeroMap) {
  DenseNet model(small_model(), 3);
  for (auto& p : model.parameters()) {
    if (p.name != "classifier.weight") continue;
    Tensor& w = p.var.mutable_value();
    for (std::int64_t c = 0; c < w.dim(1); ++c) w[c] = 0.0;
  }
  const Heatmap h = grad_cam(model, random_image(4), 100.0, 0);
  for (double v : h.values) EXPECT_EQ(v, 0.0);
}

TEST(GradCamTest, NanParametersRejected) {
  DenseNet model(small_model(), 3);
  model.parameters().front().var.mutable_value()[0] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(grad_cam(model, random_image(2), 100.0, 0), Error);
}

TEST(OverlayTest, ZeroMapLeavesImageAndDimensions) {
  const Heatmap h = make_map(4, 4, std::vector<double>(16, 0.0));
  ImageBuffer img(20, 12);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<std::uint8_t>(i * 7);
  const RgbImage out = overlay(h, img);
  EXPECT_EQ(out.width, 20);
  EXPECT_EQ(out.height, 12);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    for (int c = 0; c < 3; ++c) ASSERT_EQ(out.pixels[i * 3 + c], img.pixels[i]);
  }
}

TEST(OverlayTest, ColormapIsMonotone) {
  int prev = -1;
  for (int i = 0; i <= 100; ++i) {
    const auto c = heat_color(i / 100.0);
    const int sum = c[0] + c[1] + c[2];
    EXPECT_GE(sum, prev);
    prev = sum;
  }
  EXPECT_EQ(heat_color(0.0), (std::array<std::uint8_t, 3>{0, 0, 0}));
  EXPECT_EQ(heat_color(1.0), (std::array<std::uint8_t, 3>{255, 255, 255}));
}

TEST(OverlayTest, DeterministicFilesAndPgmRoundTrip) {
  const Heatmap h = make_map(3, 3, {0, 0.2, 0.4, 0.1, 1.0, 0.3, 0, 0, 0.5});
  ImageBuffer img(30, 30, 90);
  const fs::path dir = fs::temp_directory_path() / "cxr_cam_test";
  fs::create_directories(dir);
  export_overlay(h, img, dir / "a.png");
  export_overlay(h, img, dir / "b.png");
  EXPECT_EQ(slurp(dir / "a.png"), slurp(dir / "b.png"));
  export_heatmap_pgm16(h, dir / "h.pgm");
  int w = 0, hh = 0;
  const auto samples = read_pgm16(dir / "h.pgm", w, hh);
  EXPECT_EQ(w, 3);
  EXPECT_EQ(hh, 3);
  EXPECT_EQ(samples[4], 65535);
  EXPECT_EQ(samples[0], 0);
  const auto [x, y] = heatmap_argmax(h, 30, 30);
  EXPECT_GE(x, 10);
  EXPECT_LT(x, 20);
  EXPECT_GE(y, 10);
  EXPECT_LT(y, 20);
}
