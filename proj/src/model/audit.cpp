#include "cxr/model/audit.hpp"

#include <algorithm>
#include <functional>

#include "cxr/model/densenet.hpp"
#include "cxr/tensor/gradcheck.hpp"
#include "cxr/tensor/ops.hpp"

namespace cxr {

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = uniform(rng, lo, hi);
  return t;
}

std::int64_t pick(Rng& rng, std::int64_t lo, std::int64_t hi) {
  return lo + static_cast<std::int64_t>(uniform_index(rng, static_cast<std::uint64_t>(hi - lo + 1)));
}

void record(AuditEntry& entry, const GradcheckResult& r, std::uint64_t seed) {
  entry.checked += r.checked;
  entry.skipped_nonsmooth += r.skipped_nonsmooth;
  if (r.max_rel_error >= entry.max_rel_error) {
    entry.max_rel_error = r.max_rel_error;
    entry.worst = "seed " + std::to_string(seed) + ": " + r.worst;
  }
}

using Case = std::function<GradcheckResult(Rng&, const GradcheckOptions&)>;

std::vector<std::pair<std::string, Case>> op_cases() {
  using V = std::vector<Variable>;
  std::vector<std::pair<std::string, Case>> cases;
  auto add_case = [&](std::string name, Case c) { cases.emplace_back(std::move(name), std::move(c)); };

  add_case("conv2d", [](Rng& rng, const GradcheckOptions& o) {
    const auto n = pick(rng, 1, 2), c = pick(rng, 1, 3), h = pick(rng, 4, 7), out = pick(rng, 1, 3);
    const int k = static_cast<int>(pick(rng, 1, 3)), stride = static_cast<int>(pick(rng, 1, 2));
    const int pad = static_cast<int>(pick(rng, 0, k / 2));
    return gradcheck([=](const V& v) { return conv2d(v[0], v[1], stride, pad); },
                     {random_tensor({n, c, h, h}, rng), random_tensor({out, c, k, k}, rng)}, o);
  });
  add_case("max_pool2d", [](Rng& rng, const GradcheckOptions& o) {
    const bool padded = uniform_index(rng, 2) == 1;
    const auto c = pick(rng, 1, 3), h = pick(rng, 4, 7);
    return gradcheck(
        [=](const V& v) { return padded ? max_pool2d(v[0], 3, 2, 1) : max_pool2d(v[0], 2, 2, 0); },
        {random_tensor({2, c, h, h}, rng)}, o);
  });
  add_case("avg_pool2d", [](Rng& rng, const GradcheckOptions& o) {
    const auto c = pick(rng, 1, 3), h = 2 * pick(rng, 2, 4);
    return gradcheck([](const V& v) { return avg_pool2d(v[0]); }, {random_tensor({2, c, h, h}, rng)}, o);
  });
  add_case("batch_norm2d", [](Rng& rng, const GradcheckOptions& o) {
    const auto n = pick(rng, 2, 3), c = pick(rng, 1, 3), h = pick(rng, 2, 4);
    auto stats = std::make_shared<BatchNormStats>(c);
    return gradcheck([stats](const V& v) { return batch_norm2d(v[0], v[1], v[2], *stats, Mode::kTrain); },
                     {random_tensor({n, c, h, h}, rng), random_tensor({c}, rng, 0.5, 1.5), random_tensor({c}, rng)},
                     o);
  });
  add_case("relu", [](Rng& rng, const GradcheckOptions& o) {
    return gradcheck([](const V& v) { return relu(v[0]); }, {random_tensor({2, pick(rng, 1, 3), 4, 4}, rng)}, o);
  });
  add_case("sigmoid", [](Rng& rng, const GradcheckOptions& o) {
    return gradcheck([](const V& v) { return sigmoid(v[0]); }, {random_tensor({pick(rng, 1, 4), 5}, rng, -4, 4)}, o);
  });
  add_case("concat_channels", [](Rng& rng, const GradcheckOptions& o) {
    const auto a = pick(rng, 1, 3), b = pick(rng, 1, 3);
    return gradcheck([](const V& v) { return concat_channels({v[0], v[1]}); },
                     {random_tensor({2, a, 3, 3}, rng), random_tensor({2, b, 3, 3}, rng)}, o);
  });
  add_case("split_channels", [](Rng& rng, const GradcheckOptions& o) {
    const auto a = pick(rng, 1, 3), b = pick(rng, 1, 3);
    return gradcheck(
        [=](const V& v) {
          auto parts = split_channels(v[0], {a, b});
          return add(sum(mul(parts[0], parts[0])), sum(parts[1]));
        },
        {random_tensor({2, a + b, 3, 3}, rng)}, o);
  });
  add_case("global_avg_pool", [](Rng& rng, const GradcheckOptions& o) {
    return gradcheck([](const V& v) { return global_avg_pool(v[0]); },
                     {random_tensor({2, pick(rng, 1, 4), pick(rng, 1, 5), 3}, rng)}, o);
  });
  add_case("linear", [](Rng& rng, const GradcheckOptions& o) {
    const auto n = pick(rng, 1, 3), in = pick(rng, 1, 6), out = pick(rng, 1, 5);
    return gradcheck([](const V& v) { return linear(v[0], v[1], v[2]); },
                     {random_tensor({n, in}, rng), random_tensor({out, in}, rng), random_tensor({out}, rng)}, o);
  });
  add_case("dropout", [](Rng& rng, const GradcheckOptions& o) {
    const std::uint64_t mask_seed = rng();
    return gradcheck(
        [=](const V& v) {
          Rng local(mask_seed);  // same mask on every evaluation
          return dropout(v[0], 0.3, Mode::kTrain, &local);
        },
        {random_tensor({3, 6}, rng)}, o);
  });
  add_case("add", [](Rng& rng, const GradcheckOptions& o) {
    const auto n = pick(rng, 1, 4);
    return gradcheck([](const V& v) { return add(v[0], v[1]); }, {random_tensor({n, 3}, rng), random_tensor({n, 3}, rng)},
                     o);
  });
  add_case("mul", [](Rng& rng, const GradcheckOptions& o) {
    const auto n = pick(rng, 1, 4);
    return gradcheck([](const V& v) { return mul(v[0], v[1]); }, {random_tensor({n, 3}, rng), random_tensor({n, 3}, rng)},
                     o);
  });
  add_case("sum", [](Rng& rng, const GradcheckOptions& o) {
    return gradcheck([](const V& v) { return sum(v[0]); }, {random_tensor({pick(rng, 1, 4), 3, 2}, rng)}, o);
  });
  add_case("weighted_sum", [](Rng& rng, const GradcheckOptions& o) {
    const Tensor w = random_tensor({3, 4}, rng);
    return gradcheck([w](const V& v) { return weighted_sum(v[0], w); }, {random_tensor({3, 4}, rng)}, o);
  });
  add_case("select", [](Rng& rng, const GradcheckOptions& o) {
    const auto r = pick(rng, 0, 2), c = pick(rng, 0, 4);
    return gradcheck([=](const V& v) { return select(v[0], r, c); }, {random_tensor({3, 5}, rng)}, o);
  });
  add_case("weighted_bce_loss", [](Rng& rng, const GradcheckOptions& o) {
    const auto n = pick(rng, 1, 4);
    Tensor targets({n, 5}), mask({n, 5});
    for (double& t : targets.data()) t = static_cast<double>(uniform_index(rng, 2));
    for (double& m : mask.data()) m = uniform_index(rng, 4) == 0 ? 0.0 : 1.0;
    mask[0] = 1.0;
    std::vector<double> w(5);
    for (double& x : w) x = uniform(rng, 0.2, 3.0);
    return gradcheck([=](const V& v) { return weighted_bce_loss(v[0], targets, w, mask); },
                     {random_tensor({n, 5}, rng, 0.05, 0.95)}, o);
  });
  add_case("l2_penalty", [](Rng& rng, const GradcheckOptions& o) {
    const double lambda = uniform(rng, 1e-3, 1.0);
    return gradcheck([=](const V& v) { return l2_penalty({v[0], v[1]}, lambda); },
                     {random_tensor({2, 3}, rng), random_tensor({4}, rng)}, o);
  });
  return cases;
}

}  // namespace

std::vector<AuditEntry> gradient_audit(int seeds, std::uint64_t base_seed) {
  std::vector<AuditEntry> entries;
  const auto cases = op_cases();
  for (std::size_t c = 0; c < cases.size(); ++c) {
    const auto& [name, run] = cases[c];
    AuditEntry entry;
    entry.name = name;
    entry.tolerance = kOpTolerance;
    entry.seeds = seeds;
    for (int s = 0; s < seeds; ++s) {
      const std::uint64_t seed = derive_seed(base_seed, static_cast<std::uint64_t>(s), c + 1);
      Rng rng(seed);
      GradcheckOptions opts;
      opts.seed = seed;
      record(entry, run(rng, opts), seed);
    }
    entries.push_back(std::move(entry));
  }

  AuditEntry model_entry;
  model_entry.name = "micro_model_loss";
  model_entry.tolerance = kModelTolerance;
  model_entry.seeds = seeds;
  const ModelConfig config = preset_micro();
  for (int s = 0; s < seeds; ++s) {
    const std::uint64_t seed = derive_seed(base_seed, static_cast<std::uint64_t>(s), 0x6d6f64656cULL);
    Rng rng(seed);
    DenseNet net(config, seed);
    const Tensor x = random_tensor({2, 1, config.input_size, config.input_size}, rng, -2.0, 2.0);
    Tensor targets({2, 5}), mask({2, 5}, 1.0);
    for (double& t : targets.data()) t = static_cast<double>(uniform_index(rng, 2));
    std::vector<double> w(5);
    for (double& v : w) v = uniform(rng, 0.5, 2.0);
    GradcheckOptions opts;
    opts.seed = seed;
    opts.max_coords_per_leaf = 2;
    record(model_entry,
           gradcheck(
               [&] {
                 auto out = net.forward(Variable(x), Mode::kTrain);
                 return add(weighted_bce_loss(out.probs, targets, w, mask), l2_penalty(net.parameter_vars(), 1e-5));
               },
               net.parameter_vars(), opts),
           seed);
  }
  entries.push_back(std::move(model_entry));
  return entries;
}

}  // namespace cxr
