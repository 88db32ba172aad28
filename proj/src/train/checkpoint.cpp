#include "cxr/train/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "cxr/common/error.hpp"

namespace cxr {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'C', 'X', 'R', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint8_t kDtypeF64 = 1;

bool bits_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return a.size() == 0 || std::memcmp(a.ptr(), b.ptr(), a.size() * sizeof(double)) == 0;
}

bool bits_equal(const std::vector<NamedTensor>& a, const std::vector<NamedTensor>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].name != b[i].name || !bits_equal(a[i].tensor, b[i].tensor)) return false;
  }
  return true;
}

bool bits_equal(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!bits_equal(a[i], b[i])) return false;
  }
  return true;
}

bool same_double(double a, double b) { return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b); }

class Writer {
 public:
  template <typename T>
  void pod(const T& value) {
    const auto* p = reinterpret_cast<const char*>(&value);
    out_.append(p, sizeof(T));
  }
  void str(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    out_.append(s);
  }
  void tensor(const std::string& name, const Tensor& t) {
    str(name);
    pod(kDtypeF64);
    pod(static_cast<std::uint32_t>(t.shape().size()));
    for (auto e : t.shape()) pod(static_cast<std::int64_t>(e));
    if (t.size()) out_.append(reinterpret_cast<const char*>(t.ptr()), t.size() * sizeof(double));
  }
  void section(const std::vector<NamedTensor>& items) {
    pod(static_cast<std::uint32_t>(items.size()));
    for (const auto& item : items) tensor(item.name, item.tensor);
  }
  void section(const std::vector<Tensor>& items) {
    pod(static_cast<std::uint32_t>(items.size()));
    for (const auto& item : items) tensor("", item);
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  Reader(const std::string& bytes, const std::string& source) : bytes_(bytes), source_(source) {}

  template <typename T>
  T pod() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  NamedTensor tensor() {
    NamedTensor out;
    out.name = str();
    const auto dtype = pod<std::uint8_t>();
    require(dtype == kDtypeF64, ErrorKind::kUnsupportedFormat,
            source_ + ": tensor '" + out.name + "' has unsupported dtype tag " + std::to_string(dtype));
    const auto rank = pod<std::uint32_t>();
    require(rank >= 1 && rank <= 8, ErrorKind::kParse, source_ + ": bad tensor rank");
    Shape shape(rank);
    std::size_t count = 1;
    for (auto& e : shape) {
      e = pod<std::int64_t>();
      require(e >= 1 && e < (std::int64_t{1} << 40), ErrorKind::kParse, source_ + ": bad tensor extent");
      count *= static_cast<std::size_t>(e);
    }
    need(count * sizeof(double));
    std::vector<double> values(count);
    std::memcpy(values.data(), bytes_.data() + pos_, count * sizeof(double));
    pos_ += count * sizeof(double);
    out.tensor = Tensor(std::move(shape), std::move(values));
    return out;
  }
  std::vector<NamedTensor> section() {
    const auto n = pod<std::uint32_t>();
    std::vector<NamedTensor> out;
    out.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) out.push_back(tensor());
    return out;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    require(bytes_.size() - pos_ >= n, ErrorKind::kParse, source_ + ": truncated checkpoint");
  }

  const std::string& bytes_;
  const std::string& source_;
  std::size_t pos_ = 0;
};

}  // namespace

bool Checkpoint::operator==(const Checkpoint& o) const {
  if (format_version != o.format_version || architecture != o.architecture || config_echo != o.config_echo ||
      epoch != o.epoch || !same_double(val_loss, o.val_loss) || !same_double(mean_pixel, o.mean_pixel) ||
      !bits_equal(params, o.params) || !bits_equal(buffers, o.buffers) ||
      optimizer.has_value() != o.optimizer.has_value()) {
    return false;
  }
  if (!optimizer) return true;
  return optimizer->step == o.optimizer->step && bits_equal(optimizer->first_moment, o.optimizer->first_moment) &&
         bits_equal(optimizer->second_moment, o.optimizer->second_moment);
}

Checkpoint capture(DenseNet& model, double mean_pixel) {
  Checkpoint c;
  c.architecture = model.config().to_text();
  c.mean_pixel = mean_pixel;
  for (const auto& p : model.parameters()) c.params.push_back({p.name, p.var.value()});
  for (const auto& b : model.buffers()) c.buffers.push_back({b.name, *b.tensor});
  return c;
}

void restore(DenseNet& model, const Checkpoint& checkpoint) {
  require(checkpoint.architecture == model.config().to_text(), ErrorKind::kMismatch,
          "checkpoint architecture differs from the model");
  auto params = model.parameters();
  auto buffers = model.buffers();
  require(params.size() == checkpoint.params.size() && buffers.size() == checkpoint.buffers.size(),
          ErrorKind::kMismatch, "checkpoint tensor count differs from the model");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& src = checkpoint.params[i];
    require(src.name == params[i].name && src.tensor.shape() == params[i].var.shape(), ErrorKind::kMismatch,
            "checkpoint parameter '" + src.name + "' does not match model parameter '" + params[i].name + "'");
    params[i].var.mutable_value() = src.tensor;
  }
  for (std::size_t i = 0; i < buffers.size(); ++i) {
    const auto& src = checkpoint.buffers[i];
    require(src.name == buffers[i].name && src.tensor.shape() == buffers[i].tensor->shape(), ErrorKind::kMismatch,
            "checkpoint buffer '" + src.name + "' does not match model buffer '" + buffers[i].name + "'");
    *buffers[i].tensor = src.tensor;
  }
}

DenseNet instantiate(const Checkpoint& checkpoint) {
  DenseNet model(ModelConfig::from_text(checkpoint.architecture), 0);
  restore(model, checkpoint);
  return model;
}

std::string serialize_checkpoint(const Checkpoint& c) {
  Writer w;
  for (char ch : kMagic) w.pod(ch);
  w.pod(c.format_version);
  w.str(c.architecture);
  w.str(c.config_echo);
  w.pod(c.epoch);
  w.pod(c.val_loss);
  w.pod(c.mean_pixel);
  w.section(c.params);
  w.section(c.buffers);
  w.pod(static_cast<std::uint8_t>(c.optimizer ? 1 : 0));
  if (c.optimizer) {
    w.pod(c.optimizer->step);
    w.section(c.optimizer->first_moment);
    w.section(c.optimizer->second_moment);
  }
  return w.take();
}

Checkpoint deserialize_checkpoint(const std::string& bytes, const std::string& source) {
  Reader r(bytes, source);
  for (char ch : kMagic) {
    require(r.pod<char>() == ch, ErrorKind::kUnsupportedFormat, source + ": not a checkpoint file");
  }
  Checkpoint c;
  c.format_version = r.pod<std::uint32_t>();
  require(c.format_version == Checkpoint::kFormatVersion, ErrorKind::kUnsupportedFormat,
          source + ": unsupported checkpoint version " + std::to_string(c.format_version));
  c.architecture = r.str();
  c.config_echo = r.str();
  c.epoch = r.pod<std::int32_t>();
  c.val_loss = r.pod<double>();
  c.mean_pixel = r.pod<double>();
  c.params = r.section();
  c.buffers = r.section();
  if (r.pod<std::uint8_t>() != 0) {
    AdamState state;
    state.step = r.pod<std::int64_t>();
    for (auto& t : r.section()) state.first_moment.push_back(std::move(t.tensor));
    for (auto& t : r.section()) state.second_moment.push_back(std::move(t.tensor));
    c.optimizer = std::move(state);
  }
  require(r.done(), ErrorKind::kParse, source + ": trailing bytes after checkpoint");
  return c;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::string bytes = serialize_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(out.good(), ErrorKind::kIo, "cannot write checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::kIo, "cannot open checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_checkpoint(buf.str(), path.string());
}

namespace {

// a + (sum_i (x_i - a)) / n with a the first entry: exact when every input
// is equal, and the naive mean to within rounding otherwise.
void average_into(std::vector<NamedTensor>& out, const std::vector<Checkpoint>& all,
                  std::vector<NamedTensor> Checkpoint::*field, const char* what) {
  const auto& first = all.front().*field;
  out = first;
  const double n = static_cast<double>(all.size());
  for (std::size_t t = 0; t < first.size(); ++t) {
    const Tensor& base = first[t].tensor;
    std::vector<double> delta(base.size(), 0.0);
    for (std::size_t c = 1; c < all.size(); ++c) {
      const auto& other = (all[c].*field);
      require(other.size() == first.size() && other[t].name == first[t].name &&
                  other[t].tensor.shape() == base.shape(),
              ErrorKind::kMismatch, std::string("average_checkpoints: ") + what + " '" + first[t].name +
                                        "' differs between checkpoints");
      const double* x = other[t].tensor.ptr();
      for (std::size_t i = 0; i < delta.size(); ++i) delta[i] += x[i] - base[i];
    }
    double* dst = out[t].tensor.ptr();
    for (std::size_t i = 0; i < delta.size(); ++i) dst[i] = base[i] + delta[i] / n;
  }
}

}  // namespace

Checkpoint average_checkpoints(const std::vector<Checkpoint>& checkpoints) {
  require(!checkpoints.empty(), ErrorKind::kInvalidArgument, "average_checkpoints: no checkpoints");
  const auto& first = checkpoints.front();
  for (const auto& c : checkpoints) {
    require(c.architecture == first.architecture, ErrorKind::kMismatch,
            "average_checkpoints: architecture mismatch");
    require(c.params.size() == first.params.size() && c.buffers.size() == first.buffers.size(),
            ErrorKind::kMismatch, "average_checkpoints: tensor count mismatch");
  }
  Checkpoint out;
  out.architecture = first.architecture;
  out.config_echo = first.config_echo;
  out.mean_pixel = first.mean_pixel;
  out.epoch = -1;
  for (const auto& c : checkpoints) out.epoch = std::max(out.epoch, c.epoch);
  average_into(out.params, checkpoints, &Checkpoint::params, "parameter");
  average_into(out.buffers, checkpoints, &Checkpoint::buffers, "buffer");
  return out;
}

}  // namespace cxr
