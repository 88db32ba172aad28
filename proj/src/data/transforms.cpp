#include "cxr/data/transforms.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cxr/common/error.hpp"

namespace cxr {

namespace {

struct Tap {
  int i0, i1;
  double frac;
};

std::vector<Tap> taps(int src, int dst) {
  std::vector<Tap> out(static_cast<std::size_t>(dst));
  const double scale = static_cast<double>(src) / static_cast<double>(dst);
  for (int i = 0; i < dst; ++i) {
    double s = (i + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(src - 1));
    const int i0 = static_cast<int>(std::floor(s));
    out[i] = {i0, std::min(i0 + 1, src - 1), s - i0};
  }
  return out;
}

template <typename Get>
void resample(int width, int height, int out_width, int out_height, Get get, double* out) {
  const auto xs = taps(width, out_width);
  const auto ys = taps(height, out_height);
  for (int y = 0; y < out_height; ++y) {
    const Tap& ty = ys[y];
    for (int x = 0; x < out_width; ++x) {
      const Tap& tx = xs[x];
      const double top = get(tx.i0, ty.i0) * (1.0 - tx.frac) + get(tx.i1, ty.i0) * tx.frac;
      const double bottom = get(tx.i0, ty.i1) * (1.0 - tx.frac) + get(tx.i1, ty.i1) * tx.frac;
      out[static_cast<std::size_t>(y) * out_width + x] = top * (1.0 - ty.frac) + bottom * ty.frac;
    }
  }
}

}  // namespace

Tensor resize_bilinear(const ImageBuffer& image, int size) {
  require(size >= 1, ErrorKind::kInvalidArgument, "resize_bilinear: size must be >= 1");
  require(image.width > 0 && image.height > 0, ErrorKind::kInvalidArgument, "resize_bilinear: empty image");
  Tensor out({1, size, size});
  resample(image.width, image.height, size, size,
           [&](int x, int y) { return static_cast<double>(image.at(x, y)); }, out.ptr());
  return out;
}

std::vector<double> resize_plane(std::span<const double> plane, int width, int height, int out_width,
                                 int out_height) {
  require(plane.size() == static_cast<std::size_t>(width) * height && out_width > 0 && out_height > 0,
          ErrorKind::kInvalidArgument, "resize_plane: bad extents");
  std::vector<double> out(static_cast<std::size_t>(out_width) * out_height);
  resample(width, height, out_width, out_height,
           [&](int x, int y) { return plane[static_cast<std::size_t>(y) * width + x]; }, out.data());
  return out;
}

Tensor caffe_preprocess(const Tensor& image, double mean_pixel) {
  Tensor out = image;
  for (double& v : out.data()) v -= mean_pixel;
  return out;
}

double compute_mean_pixel(std::span<const Tensor> images) {
  double total = 0.0;
  double count = 0.0;
  for (const auto& image : images) {
    for (double v : image.data()) total += v;
    count += static_cast<double>(image.size());
  }
  require(count > 0.0, ErrorKind::kInvalidArgument, "compute_mean_pixel: no pixels");
  return total / count;
}

void AugmentConfig::validate() const {
  require(!flips_enabled, ErrorKind::kInvalidArgument, "augmentation must not flip images");
  require(max_shift_fraction >= 0.0 && max_shift_fraction <= 0.10, ErrorKind::kInvalidArgument,
          "max_shift_fraction must lie in [0, 0.10]");
  require(rotation_min_degrees <= rotation_max_degrees, ErrorKind::kInvalidArgument,
          "rotation range is empty");
  require(zoom_fraction >= 0.0 && zoom_fraction < 1.0, ErrorKind::kInvalidArgument,
          "zoom_fraction must lie in [0, 1)");
}

std::array<double, 4> AffineParams::linear_part() const {
  const double theta = rotation_degrees * std::numbers::pi / 180.0;
  const double c = std::cos(theta) * zoom, s = std::sin(theta) * zoom;
  return {c, -s, s, c};
}

double AffineParams::determinant() const {
  const auto m = linear_part();
  return m[0] * m[3] - m[1] * m[2];
}

AffineParams sample_affine(const AugmentConfig& config, int width, int height, Rng& rng) {
  config.validate();
  AffineParams p;
  p.shift_x = uniform(rng, -config.max_shift_fraction * width, config.max_shift_fraction * width);
  p.shift_y = uniform(rng, -config.max_shift_fraction * height, config.max_shift_fraction * height);
  p.rotation_degrees = uniform(rng, config.rotation_min_degrees, config.rotation_max_degrees);
  p.zoom = uniform(rng, 1.0 - config.zoom_fraction, 1.0 + config.zoom_fraction);
  return p;
}

Tensor apply_affine(const Tensor& image, const AffineParams& params, double fill) {
  require(image.rank() == 3, ErrorKind::kShapeMismatch, "apply_affine expects (C, H, W)");
  require(params.zoom > 0.0, ErrorKind::kInvalidArgument, "apply_affine: zoom must be positive");
  const auto channels = image.dim(0);
  const int h = static_cast<int>(image.dim(1)), w = static_cast<int>(image.dim(2));
  const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
  const double theta = params.rotation_degrees * std::numbers::pi / 180.0;
  // Inverse map: input = c + R(-theta) (output - c - t) / zoom.
  const double cos_t = std::cos(theta) / params.zoom, sin_t = std::sin(theta) / params.zoom;
  Tensor out(image.shape());
  for (std::int64_t ch = 0; ch < channels; ++ch) {
    const double* src = image.ptr() + ch * h * w;
    double* dst = out.ptr() + ch * h * w;
    auto get = [&](int x, int y) {
      return (x < 0 || y < 0 || x >= w || y >= h) ? fill : src[static_cast<std::size_t>(y) * w + x];
    };
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double dx = x - cx - params.shift_x, dy = y - cy - params.shift_y;
        const double sx = cx + cos_t * dx + sin_t * dy;
        const double sy = cy - sin_t * dx + cos_t * dy;
        const double fx0 = std::floor(sx), fy0 = std::floor(sy);
        const double fx = sx - fx0, fy = sy - fy0;
        const int x0 = static_cast<int>(fx0), y0 = static_cast<int>(fy0);
        const double top = get(x0, y0) * (1.0 - fx) + get(x0 + 1, y0) * fx;
        const double bottom = get(x0, y0 + 1) * (1.0 - fx) + get(x0 + 1, y0 + 1) * fx;
        dst[static_cast<std::size_t>(y) * w + x] = top * (1.0 - fy) + bottom * fy;
      }
    }
  }
  return out;
}

Tensor augment(const Tensor& image, const AugmentConfig& config, Rng& rng, double fill) {
  const AffineParams params =
      sample_affine(config, static_cast<int>(image.dim(2)), static_cast<int>(image.dim(1)), rng);
  return apply_affine(image, params, fill);
}

}  // namespace cxr
