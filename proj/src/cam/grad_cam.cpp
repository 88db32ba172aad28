#include "cxr/cam/grad_cam.hpp"

#include <algorithm>
#include <cmath>

#include "cxr/common/error.hpp"
#include "cxr/data/transforms.hpp"

namespace cxr {

Heatmap heatmap_from_gradients(const Tensor& features, const Tensor& gradients) {
  require(features.rank() == 4 && features.dim(0) == 1, ErrorKind::kShapeMismatch,
          "grad_cam: features must be (1, C, H, W)");
  require(gradients.shape() == features.shape(), ErrorKind::kShapeMismatch,
          "grad_cam: gradient shape differs from features");
  const std::int64_t c = features.dim(1), h = features.dim(2), w = features.dim(3);
  const std::size_t plane = static_cast<std::size_t>(h * w);
  Heatmap map;
  map.width = static_cast<int>(w);
  map.height = static_cast<int>(h);
  map.values.assign(plane, 0.0);
  for (std::int64_t ch = 0; ch < c; ++ch) {
    const double* g = gradients.ptr() + ch * plane;
    const double* a = features.ptr() + ch * plane;
    double weight = 0.0;
    for (std::size_t i = 0; i < plane; ++i) weight += g[i];
    weight /= static_cast<double>(plane);
    if (weight == 0.0) continue;
    for (std::size_t i = 0; i < plane; ++i) map.values[i] += weight * a[i];
  }
  double peak = 0.0;
  for (double& v : map.values) {
    v = std::max(v, 0.0);
    peak = std::max(peak, v);
  }
  require(std::isfinite(peak), ErrorKind::kNonFinite, "grad_cam: non-finite activation map");
  if (peak > 0.0) {
    for (double& v : map.values) v /= peak;
  }
  return map;
}

Heatmap grad_cam(DenseNet& model, const Tensor& image, double mean_pixel, std::size_t class_index) {
  require(class_index < static_cast<std::size_t>(model.config().num_classes), ErrorKind::kInvalidArgument,
          "grad_cam: class index out of range");
  require(image.rank() == 3, ErrorKind::kShapeMismatch, "grad_cam: image must be (1, S, S)");
  for (const auto& p : model.parameters()) {
    require(p.var.value().all_finite(), ErrorKind::kNonFinite, "grad_cam: parameter " + p.name + " is not finite");
  }
  Tensor input({1, image.dim(0), image.dim(1), image.dim(2)});
  for (std::size_t i = 0; i < image.size(); ++i) input[i] = image[i] - mean_pixel;
  auto out = model.forward(Variable(input), Mode::kEval);
  for (double v : out.logits.value().data()) {
    require(std::isfinite(v), ErrorKind::kNonFinite, "grad_cam: model produced a non-finite logit");
  }
  Variable target = select(out.logits, 0, static_cast<std::int64_t>(class_index));
  target.backward();
  Tensor grads = out.features.has_grad() ? out.features.grad() : Tensor(out.features.shape());
  Heatmap map = heatmap_from_gradients(out.features.value(), grads);
  map.class_index = class_index;
  model.zero_grad();
  return map;
}

std::vector<double> upsample(const Heatmap& heatmap, int width, int height) {
  return resize_plane(heatmap.values, heatmap.width, heatmap.height, width, height);
}

std::pair<int, int> heatmap_argmax(const Heatmap& heatmap, int width, int height) {
  const auto up = upsample(heatmap, width, height);
  const auto it = std::max_element(up.begin(), up.end());
  const auto idx = static_cast<int>(it - up.begin());
  return {idx % width, idx / width};
}

std::array<std::uint8_t, 3> heat_color(double v) {
  v = std::clamp(v, 0.0, 1.0);
  auto ch = [](double x) { return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(x, 0.0, 1.0))); };
  return {ch(3.0 * v), ch(3.0 * v - 1.0), ch(3.0 * v - 2.0)};
}

RgbImage overlay(const Heatmap& heatmap, const ImageBuffer& image) {
  require(image.width > 0 && image.height > 0, ErrorKind::kInvalidArgument, "overlay: empty image");
  const auto up = upsample(heatmap, image.width, image.height);
  RgbImage out{image.width, image.height, std::vector<std::uint8_t>(image.pixels.size() * 3)};
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    const double h = std::clamp(up[i], 0.0, 1.0);
    const double a = kOverlayOpacity * h;
    const auto color = heat_color(h);
    for (int c = 0; c < 3; ++c) {
      const double v = (1.0 - a) * image.pixels[i] + a * color[c];
      out.pixels[i * 3 + c] = a == 0.0 ? image.pixels[i] : static_cast<std::uint8_t>(std::lround(v));
    }
  }
  return out;
}

void export_overlay(const Heatmap& heatmap, const ImageBuffer& image, const std::filesystem::path& path) {
  write_png(overlay(heatmap, image), path);
}

void export_heatmap_pgm16(const Heatmap& heatmap, const std::filesystem::path& path) {
  std::vector<std::uint16_t> samples(heatmap.values.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    samples[i] = static_cast<std::uint16_t>(std::lround(65535.0 * std::clamp(heatmap.values[i], 0.0, 1.0)));
  }
  write_pgm16(heatmap.width, heatmap.height, samples, path);
}

}  // namespace cxr
