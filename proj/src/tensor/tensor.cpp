#include "cxr/tensor/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "cxr/common/error.hpp"

namespace cxr {

std::int64_t shape_size(const Shape& shape) {
  std::int64_t n = 1;
  for (auto extent : shape) n *= extent;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ", ";
    out << shape[i];
  }
  out << ')';
  return out.str();
}

namespace {

void check_shape(const Shape& shape) {
  require(!shape.empty(), ErrorKind::kShapeMismatch, "tensor shape must have rank >= 1");
  for (auto extent : shape) {
    require(extent > 0, ErrorKind::kShapeMismatch,
            "tensor extents must be positive, got " + shape_to_string(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  values_.assign(static_cast<std::size_t>(shape_size(shape_)), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  check_shape(shape_);
  require(static_cast<std::int64_t>(values_.size()) == shape_size(shape_),
          ErrorKind::kShapeMismatch,
          "value count " + std::to_string(values_.size()) + " does not match shape " +
              shape_to_string(shape_));
}

double Tensor::item() const {
  require(values_.size() == 1, ErrorKind::kShapeMismatch,
          "item() on tensor of shape " + shape_to_string(shape_));
  return values_[0];
}

bool Tensor::all_finite() const {
  for (double v : values_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::fill(double value) { std::fill(values_.begin(), values_.end(), value); }

Tensor Tensor::reshaped(Shape shape) const {
  require(shape_size(shape) == static_cast<std::int64_t>(values_.size()), ErrorKind::kShapeMismatch,
          "cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
  return Tensor(std::move(shape), values_);
}

bool operator==(const Tensor& a, const Tensor& b) {
  if (a.shape_ != b.shape_) return false;
  return a.values_.size() == b.values_.size() &&
         (a.values_.empty() ||
          std::memcmp(a.values_.data(), b.values_.data(), a.values_.size() * sizeof(double)) == 0);
}

void add_into(Tensor& dst, const Tensor& src) {
  require(dst.shape() == src.shape(), ErrorKind::kShapeMismatch,
          "add_into " + shape_to_string(dst.shape()) + " vs " + shape_to_string(src.shape()));
  double* d = dst.ptr();
  const double* s = src.ptr();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

}  // namespace cxr
