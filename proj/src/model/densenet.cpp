#include "cxr/model/densenet.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "cxr/common/error.hpp"

namespace cxr {

namespace {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

int parse_int(const std::string& key, const std::string& value) {
  int out = 0;
  const auto* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  require(ec == std::errc() && ptr == end, ErrorKind::kInvalidArgument,
          "model config: '" + key + "' expects an integer, got '" + value + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double out = std::stod(value, &used);
    if (used == value.size()) return out;
  } catch (const std::exception&) {
  }
  fail(ErrorKind::kInvalidArgument, "model config: '" + key + "' expects a number, got '" + value + "'");
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  fail(ErrorKind::kInvalidArgument, "model config: '" + key + "' expects true/false, got '" + value + "'");
}

int conv_out(int in, int kernel, int stride, int padding) { return (in + 2 * padding - kernel) / stride + 1; }

}  // namespace

std::string ModelConfig::to_text() const {
  std::ostringstream out;
  out << "input_size=" << input_size << '\n' << "in_channels=" << in_channels << '\n' << "block_layers=";
  for (std::size_t i = 0; i < block_layers.size(); ++i) out << (i ? "," : "") << block_layers[i];
  out << '\n'
      << "growth_rate=" << growth_rate << '\n'
      << "compression=" << format_double(compression) << '\n'
      << "stem_channels=" << stem_channels << '\n'
      << "num_classes=" << num_classes << '\n'
      << "dropout_rate=" << format_double(dropout_rate) << '\n'
      << "bottleneck=" << (bottleneck ? "true" : "false") << '\n'
      << "bottleneck_width=" << bottleneck_width << '\n'
      << "stem_kernel=" << stem_kernel << '\n'
      << "stem_stride=" << stem_stride << '\n'
      << "stem_pool_window=" << stem_pool_window << '\n'
      << "stem_pool_stride=" << stem_pool_stride << '\n'
      << "stem_pool_padding=" << stem_pool_padding << '\n';
  return out.str();
}

void ModelConfig::set(const std::string& key, const std::string& value) {
  if (key == "input_size") input_size = parse_int(key, value);
  else if (key == "in_channels") in_channels = parse_int(key, value);
  else if (key == "block_layers") {
    block_layers.clear();
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) block_layers.push_back(parse_int(key, item));
  } else if (key == "growth_rate") growth_rate = parse_int(key, value);
  else if (key == "compression") compression = parse_double(key, value);
  else if (key == "stem_channels") stem_channels = parse_int(key, value);
  else if (key == "num_classes") num_classes = parse_int(key, value);
  else if (key == "dropout_rate") dropout_rate = parse_double(key, value);
  else if (key == "bottleneck") bottleneck = parse_bool(key, value);
  else if (key == "bottleneck_width") bottleneck_width = parse_int(key, value);
  else if (key == "stem_kernel") stem_kernel = parse_int(key, value);
  else if (key == "stem_stride") stem_stride = parse_int(key, value);
  else if (key == "stem_pool_window") stem_pool_window = parse_int(key, value);
  else if (key == "stem_pool_stride") stem_pool_stride = parse_int(key, value);
  else if (key == "stem_pool_padding") stem_pool_padding = parse_int(key, value);
  else fail(ErrorKind::kInvalidArgument, "model config: unknown key '" + key + "'");
}

ModelConfig ModelConfig::from_text(const std::string& text) {
  ModelConfig config;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, ErrorKind::kParse, "model config: expected key=value, got '" + line + "'");
    config.set(line.substr(0, eq), line.substr(eq + 1));
  }
  return config;
}

ModelConfig preset_densenet121() {
  ModelConfig c;
  c.input_size = 224;
  c.block_layers = {6, 12, 24, 16};
  c.growth_rate = 32;
  c.compression = 0.5;
  c.stem_channels = 64;
  c.bottleneck = true;
  c.bottleneck_width = 4;
  c.stem_kernel = 7;
  c.stem_stride = 2;
  c.stem_pool_window = 3;
  c.stem_pool_stride = 2;
  c.stem_pool_padding = 1;
  return c;
}

ModelConfig preset_micro() { return ModelConfig{}; }

ModelConfig preset_by_name(const std::string& name) {
  if (name == "micro") return preset_micro();
  if (name == "densenet121") return preset_densenet121();
  fail(ErrorKind::kInvalidArgument, "unknown model preset '" + name + "' (expected micro or densenet121)");
}

ArchitecturePlan plan_architecture(const ModelConfig& c) {
  auto check = [](bool ok, const std::string& msg) { require(ok, ErrorKind::kInvalidArgument, "model config: " + msg); };
  check(c.input_size >= 1 && c.in_channels >= 1, "input_size and in_channels must be positive");
  check(!c.block_layers.empty(), "at least one dense block is required");
  for (int l : c.block_layers) check(l >= 1, "every block needs at least one layer");
  check(c.growth_rate >= 1, "growth_rate must be >= 1");
  check(c.compression > 0.0 && c.compression <= 1.0, "compression must lie in (0, 1]");
  check(c.stem_channels >= 1 && c.num_classes >= 1, "stem_channels and num_classes must be positive");
  check(c.dropout_rate >= 0.0 && c.dropout_rate < 1.0, "dropout_rate must lie in [0, 1)");
  check(c.bottleneck_width >= 1, "bottleneck_width must be >= 1");
  check(c.stem_kernel >= 1 && c.stem_kernel % 2 == 1 && c.stem_stride >= 1, "stem kernel must be odd");
  check(c.stem_pool_window >= 1 && c.stem_pool_stride >= 1 && c.stem_pool_padding >= 0 &&
            c.stem_pool_padding < c.stem_pool_window,
        "bad stem pooling");

  ArchitecturePlan plan;
  plan.stem_spatial = conv_out(c.input_size, c.stem_kernel, c.stem_stride, c.stem_kernel / 2);
  check(plan.stem_spatial >= 1, "input too small for the stem");
  plan.pooled_spatial = conv_out(plan.stem_spatial, c.stem_pool_window, c.stem_pool_stride, c.stem_pool_padding);
  check(plan.pooled_spatial >= 1, "input " + std::to_string(c.input_size) + " too small for the stem pool");

  int channels = c.stem_channels;
  int spatial = plan.pooled_spatial;
  for (std::size_t b = 0; b < c.block_layers.size(); ++b) {
    StagePlan stage;
    stage.block_in_channels = channels;
    stage.spatial = spatial;
    channels += c.block_layers[b] * c.growth_rate;
    stage.block_out_channels = channels;
    if (b + 1 < c.block_layers.size()) {
      stage.transition_out_channels = static_cast<int>(std::floor(c.compression * channels));
      check(stage.transition_out_channels >= 1, "compression leaves no channels after block " + std::to_string(b + 1));
      check(spatial >= 2, "spatial extent underflow: input " + std::to_string(c.input_size) + " reaches " +
                              std::to_string(spatial) + "x" + std::to_string(spatial) + " before transition " +
                              std::to_string(b + 1));
      channels = stage.transition_out_channels;
      spatial /= 2;
    }
    plan.stages.push_back(stage);
  }
  plan.feature_channels = channels;
  plan.feature_spatial = spatial;
  return plan;
}

int layer_depth(const ModelConfig& config) {
  int depth = 1;  // stem conv
  for (int l : config.block_layers) depth += l * (config.bottleneck ? 2 : 1);
  depth += static_cast<int>(config.block_layers.size()) - 1;  // transitions
  return depth + 1;                                           // classifier
}

namespace {

struct BatchNorm {
  Variable gamma, beta;
  BatchNormStats stats;
};

struct DenseLayer {
  int bn1 = -1, bn2 = -1;
  Variable conv1, conv2;  // conv1 only with bottleneck
};

struct Stage {
  std::vector<DenseLayer> layers;
  int transition_bn = -1;
  Variable transition_conv;
};

}  // namespace

struct DenseNet::Impl {
  ModelConfig config;
  ArchitecturePlan plan;
  Rng init_rng;
  std::vector<std::unique_ptr<BatchNorm>> norms;
  std::vector<NamedVariable> params;
  std::vector<std::string> norm_names;

  Variable stem_conv;
  int stem_bn = -1;
  std::vector<Stage> stages;
  int final_bn = -1;
  Variable fc_weight, fc_bias;

  Variable conv_param(const std::string& name, int out, int in, int k) {
    // He-normal initialisation for ReLU networks.
    Tensor w({out, in, k, k});
    const double std = std::sqrt(2.0 / (static_cast<double>(in) * k * k));
    for (double& v : w.data()) v = normal(init_rng, 0.0, std);
    Variable var(std::move(w), true);
    params.push_back({name, var});
    return var;
  }

  int make_norm(const std::string& name, int channels) {
    auto bn = std::make_unique<BatchNorm>();
    bn->gamma = Variable(Tensor({channels}, 1.0), true);
    bn->beta = Variable(Tensor({channels}, 0.0), true);
    bn->stats = BatchNormStats(channels);
    params.push_back({name + ".gamma", bn->gamma});
    params.push_back({name + ".beta", bn->beta});
    norm_names.push_back(name);
    norms.push_back(std::move(bn));
    return static_cast<int>(norms.size()) - 1;
  }

  Variable bn_relu(int index, const Variable& x, Mode mode) {
    auto& bn = *norms[static_cast<std::size_t>(index)];
    return relu(batch_norm2d(x, bn.gamma, bn.beta, bn.stats, mode));
  }
};

DenseNet::DenseNet(const ModelConfig& config, std::uint64_t seed) : impl_(std::make_unique<Impl>()) {
  auto& m = *impl_;
  m.config = config;
  m.plan = plan_architecture(config);
  m.init_rng.seed(seed);

  m.stem_conv = m.conv_param("stem.conv", config.stem_channels, config.in_channels, config.stem_kernel);
  m.stem_bn = m.make_norm("stem.bn", config.stem_channels);
  const int k = config.growth_rate;
  for (std::size_t b = 0; b < config.block_layers.size(); ++b) {
    const auto& sp = m.plan.stages[b];
    const std::string prefix = "block" + std::to_string(b + 1);
    Stage stage;
    int channels = sp.block_in_channels;
    for (int l = 0; l < config.block_layers[b]; ++l) {
      const std::string name = prefix + ".layer" + std::to_string(l + 1);
      DenseLayer layer;
      layer.bn1 = m.make_norm(name + ".bn1", channels);
      if (config.bottleneck) {
        const int width = config.bottleneck_width * k;
        layer.conv1 = m.conv_param(name + ".conv1", width, channels, 1);
        layer.bn2 = m.make_norm(name + ".bn2", width);
        layer.conv2 = m.conv_param(name + ".conv2", k, width, 3);
      } else {
        layer.conv2 = m.conv_param(name + ".conv", k, channels, 3);
      }
      channels += k;
      stage.layers.push_back(std::move(layer));
    }
    require(channels == sp.block_out_channels, ErrorKind::kMismatch, "channel bookkeeping mismatch in " + prefix);
    if (sp.transition_out_channels > 0) {
      const std::string name = "transition" + std::to_string(b + 1);
      stage.transition_bn = m.make_norm(name + ".bn", channels);
      stage.transition_conv = m.conv_param(name + ".conv", sp.transition_out_channels, channels, 1);
    }
    m.stages.push_back(std::move(stage));
  }
  const int features = m.plan.feature_channels;
  m.final_bn = m.make_norm("final.bn", features);
  Tensor w({config.num_classes, features});
  const double bound = 1.0 / std::sqrt(static_cast<double>(features));
  for (double& v : w.data()) v = uniform(m.init_rng, -bound, bound);
  m.fc_weight = Variable(std::move(w), true);
  m.fc_bias = Variable(Tensor({config.num_classes}, 0.0), true);
  m.params.push_back({"classifier.weight", m.fc_weight});
  m.params.push_back({"classifier.bias", m.fc_bias});
}

DenseNet::DenseNet(DenseNet&&) noexcept = default;
DenseNet& DenseNet::operator=(DenseNet&&) noexcept = default;
DenseNet::~DenseNet() = default;

DenseNet::Output DenseNet::forward(const Variable& input, Mode mode, Rng* rng) {
  auto& m = *impl_;
  const auto& c = m.config;
  const auto& s = input.shape();
  require(s.size() == 4 && s[1] == c.in_channels && s[2] == c.input_size && s[3] == c.input_size,
          ErrorKind::kShapeMismatch,
          "model expects (N, " + std::to_string(c.in_channels) + ", " + std::to_string(c.input_size) + ", " +
              std::to_string(c.input_size) + "), got " + shape_to_string(s));

  Variable x = conv2d(input, m.stem_conv, c.stem_stride, c.stem_kernel / 2);
  x = m.bn_relu(m.stem_bn, x, mode);
  x = max_pool2d(x, c.stem_pool_window, c.stem_pool_stride, c.stem_pool_padding);
  for (auto& stage : m.stages) {
    std::vector<Variable> features{x};
    for (auto& layer : stage.layers) {
      const Variable in = features.size() == 1 ? features[0] : concat_channels(features);
      Variable h = m.bn_relu(layer.bn1, in, mode);
      if (c.bottleneck) {
        h = conv2d(h, layer.conv1, 1, 0);
        h = m.bn_relu(layer.bn2, h, mode);
      }
      features.push_back(conv2d(h, layer.conv2, 1, 1));
    }
    x = concat_channels(features);
    x = dropout(x, c.dropout_rate, mode, rng);
    if (stage.transition_bn >= 0) {
      x = m.bn_relu(stage.transition_bn, x, mode);
      x = conv2d(x, stage.transition_conv, 1, 0);
      x = avg_pool2d(x, 2, 2);
    }
  }
  Output out;
  out.features = m.bn_relu(m.final_bn, x, mode);
  out.logits = linear(global_avg_pool(out.features), m.fc_weight, m.fc_bias);
  out.probs = sigmoid(out.logits);
  return out;
}

Tensor DenseNet::predict(const Tensor& input) {
  require(input.rank() == 4, ErrorKind::kShapeMismatch, "predict expects an NCHW batch");
  const std::int64_t n = input.dim(0);
  const std::int64_t per = input.size() / static_cast<std::size_t>(n);
  const int classes = impl_->config.num_classes;
  Tensor out({n, classes});
  constexpr std::int64_t kChunk = 32;
  for (std::int64_t start = 0; start < n; start += kChunk) {
    const std::int64_t count = std::min(kChunk, n - start);
    Shape shape = input.shape();
    shape[0] = count;
    std::vector<double> values(input.values().begin() + start * per, input.values().begin() + (start + count) * per);
    const Tensor probs = forward(Variable(Tensor(shape, std::move(values))), Mode::kEval).probs.value();
    std::copy(probs.values().begin(), probs.values().end(), out.ptr() + start * classes);
  }
  return out;
}

const ModelConfig& DenseNet::config() const { return impl_->config; }
const ArchitecturePlan& DenseNet::plan() const { return impl_->plan; }

std::vector<NamedVariable> DenseNet::parameters() const { return impl_->params; }

std::vector<Variable> DenseNet::parameter_vars() const {
  std::vector<Variable> out;
  for (const auto& p : impl_->params) out.push_back(p.var);
  return out;
}

std::vector<NamedBuffer> DenseNet::buffers() {
  std::vector<NamedBuffer> out;
  for (std::size_t i = 0; i < impl_->norms.size(); ++i) {
    auto& stats = impl_->norms[i]->stats;
    out.push_back({impl_->norm_names[i] + ".running_mean", &stats.running_mean});
    out.push_back({impl_->norm_names[i] + ".running_var", &stats.running_var});
  }
  return out;
}

std::size_t DenseNet::parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : impl_->params) total += p.var.value().size();
  return total;
}

void DenseNet::begin_stat_collection() {
  for (auto& bn : impl_->norms) bn->stats.begin_collection();
}

void DenseNet::finish_stat_collection() {
  for (auto& bn : impl_->norms) bn->stats.finish_collection();
}

void DenseNet::zero_grad() {
  for (auto& p : impl_->params) p.var.zero_grad();
}

}  // namespace cxr
