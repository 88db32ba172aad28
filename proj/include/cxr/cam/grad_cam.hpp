#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cxr/data/image.hpp"
#include "cxr/model/densenet.hpp"

namespace cxr {

// Values in [0, 1] over the final feature map's spatial grid.
struct Heatmap {
  int width = 0;
  int height = 0;
  std::vector<double> values;  // row-major
  std::size_t class_index = 0;
  std::string study_id;

  double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

// features and gradients are (1, C, H, W). Channel weight = spatial mean of
// its gradient; map = ReLU(sum_c w_c A_c) divided by its maximum. A map with
// no positive entry stays all zero.
Heatmap heatmap_from_gradients(const Tensor& features, const Tensor& gradients);

// Grad-CAM for one raw (1, S, S) image: gradient of the class logit with
// respect to the final BN-ReLU features. Throws kNonFinite when the model
// produces non-finite outputs.
Heatmap grad_cam(DenseNet& model, const Tensor& image, double mean_pixel, std::size_t class_index);

// Bilinear upsample (pixel-centre aligned) to width x height.
std::vector<double> upsample(const Heatmap& heatmap, int width, int height);

// Pixel (x, y) of the first maximum of the heatmap upsampled to width x height.
std::pair<int, int> heatmap_argmax(const Heatmap& heatmap, int width, int height);

// Monotone black-red-yellow-white ramp; v in [0, 1].
std::array<std::uint8_t, 3> heat_color(double v);

inline constexpr double kOverlayOpacity = 0.4;

// out = (1 - a) * gray + a * color(h) with a = 0.4 * h, so zero heat leaves
// the pixel untouched.
RgbImage overlay(const Heatmap& heatmap, const ImageBuffer& image);
void export_overlay(const Heatmap& heatmap, const ImageBuffer& image, const std::filesystem::path& path);
// Raw map as a 16-bit PGM, 65535 = 1.0.
void export_heatmap_pgm16(const Heatmap& heatmap, const std::filesystem::path& path);

}  // namespace cxr
