#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "cxr/common/error.hpp"
#include "cxr/common/random.hpp"
#include "cxr/tensor/adam.hpp"
#include "cxr/tensor/gradcheck.hpp"
#include "cxr/tensor/ops.hpp"

using namespace cxr;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = uniform(rng, lo, hi);
  return t;
}

}  // namespace

TEST(TensorTest, RejectsNonPositiveExtents) {
  EXPECT_THROW(Tensor({0, 1, 2, 2}), Error);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1.0, 2.0, 3.0}), Error);
  EXPECT_EQ(Tensor({2, 3}).size(), 6u);
}

TEST(Conv2dTest, AllOnesSumsWindow) {
  Variable x(Tensor({1, 1, 3, 3}, 1.0));
  Variable k(Tensor({1, 1, 2, 2}, 1.0));
  Variable y = conv2d(x, k, 1, 0);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  for (double v : y.value().data()) EXPECT_EQ(v, 4.0);
}

TEST(Conv2dTest, IdentityKernel) {
  Rng rng(3);
  Variable x(random_tensor({2, 1, 5, 4}, rng));
  Variable k(Tensor({1, 1, 1, 1}, 1.0));
  EXPECT_EQ(conv2d(x, k, 1, 0).value(), x.value());
}

TEST(Conv2dTest, OutputExtentFormula) {
  Variable x(Tensor({1, 2, 7, 9}, 1.0));
  Variable k(Tensor({3, 2, 3, 3}, 1.0));
  EXPECT_EQ(conv2d(x, k, 2, 1).shape(), (Shape{1, 3, 4, 5}));
  EXPECT_EQ(conv2d(x, k, 1, 0).shape(), (Shape{1, 3, 5, 7}));
}

TEST(Conv2dTest, ErrorsOnMismatch) {
  Variable x(Tensor({1, 2, 3, 3}, 1.0));
  EXPECT_THROW(conv2d(x, Variable(Tensor({1, 3, 2, 2}, 1.0)), 1, 0), Error);
  EXPECT_THROW(conv2d(x, Variable(Tensor({1, 2, 5, 5}, 1.0)), 1, 0), Error);
}

TEST(Conv2dTest, GradientsMatchFiniteDifferences) {
  Rng rng(11);
  std::vector<Tensor> inputs{random_tensor({1, 2, 5, 5}, rng), random_tensor({3, 2, 3, 3}, rng)};
  for (int stride : {1, 2}) {
    for (int pad : {0, 1}) {
      auto r = gradcheck(
          [&](const std::vector<Variable>& v) { return conv2d(v[0], v[1], stride, pad); }, inputs,
          {.seed = 5});
      EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
      EXPECT_GT(r.checked, 0u);
    }
  }
}

TEST(MaxPoolTest, ForwardAndTies) {
  Variable x(Tensor({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4}), true);
  Variable y = max_pool2d(x);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(y.value()[0], 4.0);

  Variable c(Tensor({1, 1, 4, 4}, 7.0), true);
  Variable pooled = max_pool2d(c);
  EXPECT_EQ(pooled.shape(), (Shape{1, 1, 2, 2}));
  for (double v : pooled.value().data()) EXPECT_EQ(v, 7.0);
  sum(pooled).backward();
  // All-tied windows route the gradient to the first element.
  EXPECT_EQ(c.grad().at(0, 0, 0, 0), 1.0);
  EXPECT_EQ(c.grad().at(0, 0, 0, 1), 0.0);
  EXPECT_EQ(c.grad().at(0, 0, 1, 0), 0.0);
  EXPECT_EQ(c.grad().at(0, 0, 2, 2), 1.0);

  EXPECT_THROW(max_pool2d(Variable(Tensor({1, 1, 1, 3}))), Error);
}

TEST(MaxPoolTest, GradientAwayFromTies) {
  Rng rng(2);
  std::vector<double> values(36);
  std::iota(values.begin(), values.end(), 0.0);
  shuffle(values, rng);  // distinct values, spaced far beyond the FD step
  auto r = gradcheck([](const std::vector<Variable>& v) { return max_pool2d(v[0]); },
                     {Tensor({1, 1, 6, 6}, values)}, {.seed = 1});
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
  EXPECT_EQ(r.skipped_nonsmooth, 0u);
}

TEST(MaxPoolTest, PaddedWindowMatchesBruteForce) {
  Rng rng(8);
  const Tensor x = random_tensor({1, 2, 7, 7}, rng, -1.0, 1.0);
  const Variable y = max_pool2d(Variable(x), 3, 2, 1);
  ASSERT_EQ(y.shape(), (Shape{1, 2, 4, 4}));
  for (int c = 0; c < 2; ++c) {
    for (int oh = 0; oh < 4; ++oh) {
      for (int ow = 0; ow < 4; ++ow) {
        double best = -1e300;
        for (int ih = 2 * oh - 1; ih <= 2 * oh + 1; ++ih)
          for (int iw = 2 * ow - 1; iw <= 2 * ow + 1; ++iw)
            if (ih >= 0 && ih < 7 && iw >= 0 && iw < 7) best = std::max(best, x.at(0, c, ih, iw));
        EXPECT_EQ(y.value().at(0, c, oh, ow), best);
      }
    }
  }
  auto r = gradcheck([](const std::vector<Variable>& v) { return max_pool2d(v[0], 3, 2, 1); }, {x}, {.seed = 2});
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST(BatchNormTest, TrainModeNormalizes) {
  Rng rng(4);
  Variable x(random_tensor({4, 3, 5, 5}, rng, -3.0, 7.0));
  Variable gamma(Tensor({3}, 1.0)), beta(Tensor({3}, 0.0));
  BatchNormStats stats(3);
  Variable y = batch_norm2d(x, gamma, beta, stats, Mode::kTrain);
  for (int c = 0; c < 3; ++c) {
    double mean = 0.0, sq = 0.0;
    for (int n = 0; n < 4; ++n)
      for (int h = 0; h < 5; ++h)
        for (int w = 0; w < 5; ++w) mean += y.value().at(n, c, h, w);
    mean /= 100.0;
    for (int n = 0; n < 4; ++n)
      for (int h = 0; h < 5; ++h)
        for (int w = 0; w < 5; ++w) sq += std::pow(y.value().at(n, c, h, w) - mean, 2);
    EXPECT_NEAR(mean, 0.0, 1e-6);
    // Normalization uses eps = 1e-5 inside the square root.
    EXPECT_NEAR(sq / 100.0, 1.0, 1e-4);
  }
  // Momentum 0.9 keeps 90% of the previous running mean (0).
  EXPECT_NE(stats.running_mean[0], 0.0);
}

TEST(BatchNormTest, TrainModeVarianceNearOneForLargeSpread) {
  Rng rng(8);
  Variable x(random_tensor({2, 1, 10, 10}, rng, -100.0, 100.0));
  BatchNormStats stats(1);
  Variable y = batch_norm2d(x, Variable(Tensor({1}, 1.0)), Variable(Tensor({1}, 0.0)), stats, Mode::kTrain);
  double mean = 0.0, sq = 0.0;
  for (double v : y.value().data()) mean += v;
  mean /= 200.0;
  for (double v : y.value().data()) sq += (v - mean) * (v - mean);
  EXPECT_NEAR(mean, 0.0, 1e-6);
  EXPECT_NEAR(sq / 200.0, 1.0, 1e-6);
}

TEST(BatchNormTest, EvalModeIdentityWithUnitStats) {
  Rng rng(5);
  Variable x(random_tensor({2, 2, 3, 3}, rng));
  BatchNormStats stats(2);  // mean 0, var 1
  Variable y = batch_norm2d(x, Variable(Tensor({2}, 1.0)), Variable(Tensor({2}, 0.0)), stats, Mode::kEval);
  for (std::size_t i = 0; i < x.value().size(); ++i) EXPECT_NEAR(y.value()[i], x.value()[i], 1e-5);
}

TEST(BatchNormTest, ChannelMismatch) {
  BatchNormStats stats(3);
  Variable x(Tensor({1, 2, 2, 2}, 1.0));
  EXPECT_THROW(batch_norm2d(x, Variable(Tensor({2}, 1.0)), Variable(Tensor({2}, 0.0)), stats, Mode::kTrain),
               Error);
}

TEST(BatchNormTest, GradientsMatchFiniteDifferences) {
  Rng rng(9);
  std::vector<Tensor> inputs{random_tensor({3, 2, 3, 3}, rng), random_tensor({2}, rng, 0.5, 1.5),
                             random_tensor({2}, rng)};
  for (Mode mode : {Mode::kTrain, Mode::kEval}) {
    BatchNormStats stats(2);
    stats.running_mean = Tensor({2}, std::vector<double>{0.1, -0.2});
    stats.running_var = Tensor({2}, std::vector<double>{0.7, 1.3});
    auto r = gradcheck(
        [&](const std::vector<Variable>& v) {
          BatchNormStats scratch = stats;
          return batch_norm2d(v[0], v[1], v[2], scratch, mode);
        },
        inputs, {.seed = 2});
    EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
  }
}

TEST(BatchNormTest, CollectStatsComputesPopulationStatistics) {
  Rng rng(6);
  Tensor a = random_tensor({2, 1, 2, 2}, rng, 0.0, 4.0);
  Tensor b = random_tensor({3, 1, 2, 2}, rng, 0.0, 4.0);
  BatchNormStats stats(1);
  stats.begin_collection();
  Variable g(Tensor({1}, 1.0)), z(Tensor({1}, 0.0));
  batch_norm2d(Variable(a), g, z, stats, Mode::kCollectStats);
  batch_norm2d(Variable(b), g, z, stats, Mode::kCollectStats);
  stats.finish_collection();
  std::vector<double> all(a.values());
  all.insert(all.end(), b.values().begin(), b.values().end());
  const double mean = std::accumulate(all.begin(), all.end(), 0.0) / all.size();
  double sq = 0.0;
  for (double v : all) sq += (v - mean) * (v - mean);
  EXPECT_NEAR(stats.running_mean[0], mean, 1e-12);
  EXPECT_NEAR(stats.running_var[0], sq / (all.size() - 1), 1e-12);
}

TEST(ElementwiseTest, SigmoidAndRelu) {
  Variable x(Tensor({3}, std::vector<double>{0.0, 800.0, -800.0}));
  Variable s = sigmoid(x);
  EXPECT_EQ(s.value()[0], 0.5);
  for (double v : s.value().data()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  Variable r = relu(Variable(Tensor({2}, std::vector<double>{-1.0, 2.0})));
  EXPECT_EQ(r.value()[0], 0.0);
  EXPECT_EQ(r.value()[1], 2.0);
}

TEST(ElementwiseTest, ConcatShapeAndSplitRoundTrip) {
  Rng rng(12);
  Variable a(random_tensor({2, 3, 4, 4}, rng)), b(random_tensor({2, 5, 4, 4}, rng));
  Variable c = concat_channels({a, b});
  EXPECT_EQ(c.shape(), (Shape{2, 8, 4, 4}));
  auto parts = split_channels(c, {3, 5});
  EXPECT_EQ(parts[0].value(), a.value());
  EXPECT_EQ(parts[1].value(), b.value());
  EXPECT_THROW(concat_channels({a, Variable(Tensor({2, 1, 3, 4}))}), Error);
}

TEST(ElementwiseTest, GradientChecks) {
  Rng rng(13);
  GradcheckOptions opts{.seed = 3};
  auto lin = gradcheck(
      [](const std::vector<Variable>& v) { return linear(v[0], v[1], v[2]); },
      {random_tensor({4, 6}, rng), random_tensor({3, 6}, rng), random_tensor({3}, rng)}, opts);
  EXPECT_LT(lin.max_rel_error, 1e-4) << lin.worst;
  auto sig = gradcheck([](const std::vector<Variable>& v) { return sigmoid(v[0]); },
                       {random_tensor({2, 5}, rng, -4, 4)}, opts);
  EXPECT_LT(sig.max_rel_error, 1e-4) << sig.worst;
  auto cat = gradcheck(
      [](const std::vector<Variable>& v) { return concat_channels({v[0], v[1]}); },
      {random_tensor({2, 2, 3, 3}, rng), random_tensor({2, 1, 3, 3}, rng)}, opts);
  EXPECT_LT(cat.max_rel_error, 1e-4) << cat.worst;
  auto gap = gradcheck([](const std::vector<Variable>& v) { return global_avg_pool(v[0]); },
                       {random_tensor({2, 3, 3, 2}, rng)}, opts);
  EXPECT_LT(gap.max_rel_error, 1e-4) << gap.worst;
  auto avg = gradcheck([](const std::vector<Variable>& v) { return avg_pool2d(v[0]); },
                       {random_tensor({1, 2, 5, 4}, rng)}, opts);
  EXPECT_LT(avg.max_rel_error, 1e-4) << avg.worst;
}

TEST(LossTest, BceClosedForms) {
  Variable p(Tensor({1, 1}, 0.5));
  Tensor y({1, 1}, 1.0), mask({1, 1}, 1.0);
  const std::vector<double> w1{1.0}, w2{2.0};
  EXPECT_NEAR(weighted_bce_loss(p, y, w1, mask).value().item(), std::log(2.0), 1e-15);
  EXPECT_EQ(weighted_bce_loss(p, y, w2, mask).value().item(),
            2.0 * weighted_bce_loss(p, y, w1, mask).value().item());
  EXPECT_THROW(weighted_bce_loss(p, y, w1, Tensor({1, 1}, 0.0)), Error);
}

TEST(LossTest, UnitWeightsEqualPlainBce) {
  Rng rng(14);
  Tensor probs = random_tensor({3, 5}, rng, 0.01, 0.99);
  Tensor targets({3, 5});
  for (double& v : targets.data()) v = uniform01(rng) < 0.5 ? 0.0 : 1.0;
  const std::vector<double> ones(5, 1.0);
  double plain = 0.0;
  for (std::size_t i = 0; i < 15; ++i) {
    plain += -(targets[i] * std::log(probs[i]) + (1 - targets[i]) * std::log(1 - probs[i]));
  }
  EXPECT_NEAR(weighted_bce_loss(Variable(probs), targets, ones, Tensor({3, 5}, 1.0)).value().item(),
              plain / 15.0, 1e-14);
}

TEST(LossTest, ClampKeepsLossFinite) {
  Variable p(Tensor({1, 2}, std::vector<double>{0.0, 1.0}), true);
  Tensor y({1, 2}, std::vector<double>{1.0, 0.0});
  const std::vector<double> w{1.0, 1.0};
  Variable loss = weighted_bce_loss(p, y, w, Tensor({1, 2}, 1.0));
  EXPECT_TRUE(std::isfinite(loss.value().item()));
  EXPECT_NEAR(loss.value().item(), -std::log(1e-7), 1e-9);
  loss.backward();
  EXPECT_TRUE(p.grad().all_finite());
}

TEST(LossTest, BceGradient) {
  Rng rng(15);
  Tensor targets({2, 3}, std::vector<double>{1, 0, 1, 0, 0, 1});
  Tensor mask({2, 3}, std::vector<double>{1, 1, 0, 1, 1, 1});
  const std::vector<double> w{0.5, 2.0, 1.5};
  auto r = gradcheck(
      [&](const std::vector<Variable>& v) { return weighted_bce_loss(v[0], targets, w, mask); },
      {random_tensor({2, 3}, rng, 0.05, 0.95)}, {.seed = 4});
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST(LossTest, L2Penalty) {
  Variable w(Tensor({1}, 3.0), true);
  EXPECT_EQ(l2_penalty({w}, 0.5).value().item(), 4.5);
  Variable zero = l2_penalty({w}, 0.0);
  EXPECT_EQ(zero.value().item(), 0.0);
  zero.backward();
  EXPECT_EQ(w.grad()[0], 0.0);
  EXPECT_THROW(l2_penalty({w}, -1.0), Error);

  Rng rng(16);
  auto r = gradcheck([](const std::vector<Variable>& v) { return l2_penalty({v[0], v[1]}, 0.3); },
                     {random_tensor({3, 2}, rng), random_tensor({4}, rng)}, {.seed = 5});
  EXPECT_LT(r.max_rel_error, 1e-6) << r.worst;
}

TEST(AdamTest, FirstStepMagnitudeIsLr) {
  Variable p(Tensor({1}, 0.0), true);
  Adam opt({p}, {.lr = 1e-3});
  sum(p).backward();  // gradient 1
  opt.step();
  EXPECT_NEAR(p.value()[0], -1e-3, 1e-10);
}

TEST(AdamTest, ZeroGradientLeavesParameter) {
  Variable p(Tensor({2}, 1.5), true);
  Adam opt({p}, {.lr = 1e-2});
  mul(p, Variable(Tensor({2}, 0.0))).backward(Tensor({2}, 1.0));
  opt.step();
  EXPECT_EQ(p.value()[0], 1.5);
}

TEST(AdamTest, ThreeStepsOnQuadraticMatchRecurrence) {
  // f(x) = x^2 from x = 1, lr 0.1; values evaluated by hand from the Adam
  // recurrence with beta1 0.9, beta2 0.999, eps 1e-8.
  const double expected[] = {0.9000000005, 0.8004122286917928, 0.7015862729460303};
  Variable x(Tensor({1}, 1.0), true);
  Adam opt({x}, {.lr = 0.1});
  for (double e : expected) {
    opt.zero_grad();
    mul(x, x).backward();
    opt.step();
    EXPECT_NEAR(x.value()[0], e, 1e-12);
  }
}

TEST(AdamTest, RejectsNonFiniteGradient) {
  Tensor p({1}, 1.0), g({1}, std::nan(""));
  AdamState state;
  EXPECT_THROW(adam_step({&p}, {&g}, state, {}), Error);
  EXPECT_EQ(p[0], 1.0);
}

TEST(GraphTest, BackwardVisitsEachOpOnce) {
  Variable x(Tensor({1}, 3.0), true);
  Variable a = mul(x, x);     // op 1
  Variable b = add(a, a);     // op 2, diamond on a
  Variable c = add(b, x);     // op 3
  EXPECT_EQ(c.backward(), 3u);
  EXPECT_EQ(x.grad()[0], 4.0 * 3.0 + 1.0);
}

TEST(GraphTest, ForwardIsDeterministic) {
  Rng r1(21), r2(21);
  Variable x1(random_tensor({2, 3, 6, 6}, r1)), k1(random_tensor({4, 3, 3, 3}, r1));
  Variable x2(random_tensor({2, 3, 6, 6}, r2)), k2(random_tensor({4, 3, 3, 3}, r2));
  EXPECT_EQ(conv2d(x1, k1, 1, 1).value(), conv2d(x2, k2, 1, 1).value());
}

// Every op over randomized shapes and 20 seeds.
TEST(GradcheckProperty, RandomizedShapesAcrossSeeds) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const auto n = 1 + static_cast<std::int64_t>(uniform_index(rng, 2));
    const auto c = 1 + static_cast<std::int64_t>(uniform_index(rng, 3));
    const auto h = 4 + static_cast<std::int64_t>(uniform_index(rng, 3));
    const auto o = 1 + static_cast<std::int64_t>(uniform_index(rng, 3));
    GradcheckOptions opts{.seed = seed};
    auto conv = gradcheck(
        [](const std::vector<Variable>& v) { return conv2d(v[0], v[1], 1, 1); },
        {random_tensor({n, c, h, h}, rng), random_tensor({o, c, 3, 3}, rng)}, opts);
    EXPECT_LT(conv.max_rel_error, 1e-4) << "seed " << seed << " " << conv.worst;
    BatchNormStats stats(c);
    auto bn = gradcheck(
        [&](const std::vector<Variable>& v) { return batch_norm2d(v[0], v[1], v[2], stats, Mode::kTrain); },
        {random_tensor({n + 1, c, h, h}, rng), random_tensor({c}, rng, 0.5, 1.5), random_tensor({c}, rng)},
        opts);
    EXPECT_LT(bn.max_rel_error, 1e-4) << "seed " << seed << " " << bn.worst;
    auto rl = gradcheck([](const std::vector<Variable>& v) { return relu(v[0]); },
                        {random_tensor({n, c, h, h}, rng)}, opts);
    EXPECT_LT(rl.max_rel_error, 1e-4) << "seed " << seed;
  }
}
