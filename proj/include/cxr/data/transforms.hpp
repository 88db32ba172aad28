#pragma once

#include <array>
#include <span>
#include <vector>

#include "cxr/common/random.hpp"
#include "cxr/data/image.hpp"
#include "cxr/tensor/tensor.hpp"

namespace cxr {

// Bilinear resize to (1, size, size) with pixel-centre alignment:
// x_src = (x_dst + 0.5) * W / size - 0.5, clamped to the border.
Tensor resize_bilinear(const ImageBuffer& image, int size);

// Same sampling rule on a single real-valued plane.
std::vector<double> resize_plane(std::span<const double> plane, int width, int height, int out_width,
                                 int out_height);

// Mean-pixel subtraction ("Caffe-style" zero-centring).
Tensor caffe_preprocess(const Tensor& image, double mean_pixel);

// Arithmetic mean over every value of every tensor.
double compute_mean_pixel(std::span<const Tensor> images);

struct AugmentConfig {
  double max_shift_fraction = 0.10;
  double rotation_min_degrees = 0.0;
  double rotation_max_degrees = 3.0;
  double zoom_fraction = 0.05;
  bool flips_enabled = false;

  static AugmentConfig none() { return {0.0, 0.0, 0.0, 0.0, false}; }
  // Throws kInvalidArgument if flips are enabled or a range is out of bounds.
  void validate() const;
};

// Shift, rotation about the image centre, and isotropic zoom. No reflection
// is representable: the linear part always has positive determinant.
struct AffineParams {
  double shift_x = 0.0;  // pixels
  double shift_y = 0.0;
  double rotation_degrees = 0.0;
  double zoom = 1.0;

  // Forward linear part [a b; c d] mapping centred input to output coords.
  std::array<double, 4> linear_part() const;
  double determinant() const;
};

AffineParams sample_affine(const AugmentConfig& config, int width, int height, Rng& rng);

// Resamples every (C, H, W) plane under `params`; uncovered pixels take
// `fill`.
Tensor apply_affine(const Tensor& image, const AffineParams& params, double fill);

Tensor augment(const Tensor& image, const AugmentConfig& config, Rng& rng, double fill);

}  // namespace cxr
