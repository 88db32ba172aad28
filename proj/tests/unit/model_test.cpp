#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "cxr/common/error.hpp"
#include "cxr/model/densenet.hpp"
#include "cxr/tensor/gradcheck.hpp"

using namespace cxr;

namespace {

Tensor random_batch(std::int64_t n, int size, std::uint64_t seed) {
  Rng rng(seed);
  Tensor x({n, 1, size, size});
  for (double& v : x.data()) v = normal(rng);
  return x;
}

// Closed-form trainable-parameter count, written out layer by layer
// independently of the model builder.
std::size_t analytic_param_count(const ModelConfig& c) {
  std::size_t total = 0;
  auto conv = [&](std::size_t out, std::size_t in, std::size_t k) { total += out * in * k * k; };
  auto bn = [&](std::size_t ch) { total += 2 * ch; };
  std::size_t ch = static_cast<std::size_t>(c.stem_channels);
  conv(ch, static_cast<std::size_t>(c.in_channels), static_cast<std::size_t>(c.stem_kernel));
  bn(ch);
  const auto k = static_cast<std::size_t>(c.growth_rate);
  for (std::size_t b = 0; b < c.block_layers.size(); ++b) {
    for (int l = 0; l < c.block_layers[b]; ++l) {
      bn(ch);
      if (c.bottleneck) {
        const std::size_t width = static_cast<std::size_t>(c.bottleneck_width) * k;
        conv(width, ch, 1);
        bn(width);
        conv(k, width, 3);
      } else {
        conv(k, ch, 3);
      }
      ch += k;
    }
    if (b + 1 < c.block_layers.size()) {
      bn(ch);
      const auto out = static_cast<std::size_t>(std::floor(c.compression * static_cast<double>(ch)));
      conv(out, ch, 1);
      ch = out;
    }
  }
  bn(ch);
  total += ch * static_cast<std::size_t>(c.num_classes) + static_cast<std::size_t>(c.num_classes);
  return total;
}

}  // namespace

TEST(Architecture, DenseBlockChannelArithmetic) {
  ModelConfig c;
  c.stem_channels = 24;
  c.block_layers = {4};
  c.growth_rate = 12;
  c.input_size = 32;
  const auto plan = plan_architecture(c);
  EXPECT_EQ(plan.stages[0].block_out_channels, 72);
  EXPECT_EQ(plan.feature_channels, 72);
}

TEST(Architecture, BlockRealizesTriangularConnections) {
  ModelConfig c;
  c.stem_channels = 24;
  c.block_layers = {4};
  c.growth_rate = 12;
  c.input_size = 32;
  DenseNet net(c, 1);
  // Layer j's first norm sees the block input plus j-1 earlier outputs; the
  // number of feature maps it consumes is its number of incoming links.
  int links = 0;
  for (const auto& p : net.parameters()) {
    if (p.name.find(".bn1.gamma") == std::string::npos) continue;
    const auto channels = static_cast<int>(p.var.shape()[0]);
    links += 1 + (channels - c.stem_channels) / c.growth_rate;
  }
  EXPECT_EQ(links, 4 * 5 / 2);
}

TEST(Architecture, DenseNet121DepthAndSizes) {
  const auto c = preset_densenet121();
  // stem conv + two convs per bottleneck layer + transitions + classifier
  EXPECT_EQ(layer_depth(c), 1 + 2 * (6 + 12 + 24 + 16) + 3 + 1);
  EXPECT_EQ(layer_depth(c), 121);
  for (auto [size, features] : {std::pair{224, 7}, {197, 6}, {139, 4}}) {
    auto sized = c;
    sized.input_size = size;
    const auto plan = plan_architecture(sized);
    EXPECT_EQ(plan.feature_channels, 1024);
    EXPECT_EQ(plan.feature_spatial, features) << size;
  }
}

TEST(Architecture, DenseNet121ParameterCount) {
  DenseNet net(preset_densenet121(), 1);
  // Reference DenseNet-121: 7,978,856 trainable parameters with a 3-channel
  // stem and a 1000-way classifier. Swap in a 1-channel stem and 5 classes.
  const std::size_t reference = 7978856;
  const std::size_t expected = reference - 64 * 3 * 49 + 64 * 1 * 49 - (1024 * 1000 + 1000) + (1024 * 5 + 5);
  EXPECT_EQ(net.parameter_count(), expected);
  EXPECT_EQ(net.parameter_count(), analytic_param_count(preset_densenet121()));
}

TEST(Architecture, MicroParameterCountMatchesClosedForm) {
  DenseNet net(preset_micro(), 3);
  EXPECT_EQ(net.parameter_count(), analytic_param_count(preset_micro()));
  for (bool bottleneck : {false, true}) {
    auto c = preset_micro();
    c.bottleneck = bottleneck;
    c.block_layers = {3, 2};
    c.compression = 0.7;
    EXPECT_EQ(DenseNet(c, 1).parameter_count(), analytic_param_count(c));
  }
}

TEST(Architecture, UnderflowAndBadConfigRejected) {
  auto c = preset_densenet121();
  c.input_size = 24;
  EXPECT_THROW(plan_architecture(c), Error);
  auto d = preset_micro();
  d.block_layers = {2, 0};
  EXPECT_THROW(plan_architecture(d), Error);
  d = preset_micro();
  d.compression = 0.0;
  EXPECT_THROW(plan_architecture(d), Error);
}

TEST(Config, TextRoundTrip) {
  for (auto c : {preset_micro(), preset_densenet121()}) {
    c.dropout_rate = 0.1;
    c.compression = 1.0 / 3.0;
    EXPECT_EQ(ModelConfig::from_text(c.to_text()), c);
  }
  EXPECT_THROW(ModelConfig::from_text("growth=8\n"), Error);
  EXPECT_THROW(ModelConfig::from_text("growth_rate=eight\n"), Error);
}

TEST(Forward, MicroShapeAndRange) {
  DenseNet net(preset_micro(), 5);
  const auto out = net.forward(Variable(random_batch(4, 64, 1)), Mode::kTrain);
  EXPECT_EQ(out.probs.shape(), (Shape{4, 5}));
  for (double p : out.probs.value().data()) {
    EXPECT_GT(p, 0.0);
    EXPECT_LT(p, 1.0);
  }
  EXPECT_EQ(out.features.shape(), (Shape{4, ((16 + 2 * 8) / 2 + 4 * 8) / 2 + 4 * 8, 8, 8}));
  EXPECT_THROW(net.forward(Variable(random_batch(1, 32, 1)), Mode::kEval), Error);
}

TEST(Forward, EvalIsPureAndRowwise) {
  DenseNet net(preset_micro(), 5);
  Tensor one = random_batch(1, 64, 9);
  Tensor two({2, 1, 64, 64});
  std::copy(one.values().begin(), one.values().end(), two.ptr());
  std::copy(one.values().begin(), one.values().end(), two.ptr() + one.size());
  const Tensor a = net.predict(two);
  const Tensor b = net.predict(two);
  EXPECT_EQ(a, b);
  for (int k = 0; k < 5; ++k) EXPECT_EQ(a[static_cast<std::size_t>(k)], a[static_cast<std::size_t>(5 + k)]);
}

TEST(Forward, RowsAreIndependentProbabilities) {
  DenseNet net(preset_micro(), 5);
  // Push every classifier bias high: all five outputs near 1, row sum near 5.
  for (auto& p : net.parameters()) {
    if (p.name == "classifier.bias") p.var.mutable_value().fill(6.0);
  }
  const Tensor probs = net.predict(random_batch(1, 64, 2));
  const double row = std::accumulate(probs.values().begin(), probs.values().end(), 0.0);
  EXPECT_GT(row, 1.0);
}

TEST(Forward, DropoutOnlyInTraining) {
  auto c = preset_micro();
  c.dropout_rate = 0.5;
  DenseNet net(c, 2);
  const Tensor x = random_batch(2, 64, 4);
  Rng rng(1);
  EXPECT_EQ(net.predict(x), net.predict(x));
  const auto a = net.forward(Variable(x), Mode::kTrain, &rng).probs.value();
  const auto b = net.forward(Variable(x), Mode::kTrain, &rng).probs.value();
  EXPECT_FALSE(a == b);
}

TEST(Forward, StatCollectionSetsRunningStatistics) {
  DenseNet net(preset_micro(), 2);
  net.begin_stat_collection();
  net.forward(Variable(random_batch(3, 64, 1)), Mode::kCollectStats);
  net.finish_stat_collection();
  const auto buffers = net.buffers();
  ASSERT_FALSE(buffers.empty());
  EXPECT_EQ(buffers[0].name, "stem.bn.running_mean");
  bool moved = false;
  for (double v : buffers[0].tensor->data()) moved = moved || v != 0.0;
  EXPECT_TRUE(moved);
}

TEST(Gradients, EndToEndLossGradcheck) {
  DenseNet net(preset_micro(), 7);
  const Tensor x = random_batch(2, 64, 3);
  Tensor targets({2, 5});
  targets.data()[0] = 1.0;
  targets.data()[6] = 1.0;
  targets.data()[9] = 1.0;
  const Tensor mask({2, 5}, 1.0);
  const std::vector<double> weights{0.5, 1.0, 2.0, 1.5, 0.8};
  std::vector<Variable> leaves = net.parameter_vars();
  GradcheckOptions opts;
  opts.seed = 4;
  opts.max_coords_per_leaf = 2;
  const auto result = gradcheck(
      [&] { return weighted_bce_loss(net.forward(Variable(x), Mode::kTrain).probs, targets, weights, mask); },
      leaves, opts);
  EXPECT_LT(result.max_rel_error, 1e-3) << result.worst;
  EXPECT_GT(result.checked, 50u);
}
