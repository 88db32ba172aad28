#include "cxr/tensor/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "cxr/common/error.hpp"
#include "cxr/common/parallel.hpp"

namespace cxr {

using detail::Node;

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

void require_rank(const Variable& v, std::size_t rank, const char* what) {
  require(v.value().rank() == rank, ErrorKind::kShapeMismatch,
          std::string(what) + ": expected rank " + std::to_string(rank) + ", got shape " +
              shape_to_string(v.shape()));
}

struct ConvGeometry {
  std::int64_t n, c, h, w;
  std::int64_t o, kh, kw;
  std::int64_t ho, wo;
  int stride, padding;

  std::int64_t patch() const { return c * kh * kw; }
  std::int64_t out_plane() const { return ho * wo; }
  bool direct() const { return kh == 1 && kw == 1 && stride == 1 && padding == 0; }
};

// Output columns [lo, hi) whose input column ow * stride - padding + k is in
// bounds.
std::pair<std::int64_t, std::int64_t> valid_columns(const ConvGeometry& g, std::int64_t k) {
  const std::int64_t offset = k - g.padding;
  std::int64_t lo = offset >= 0 ? 0 : (-offset + g.stride - 1) / g.stride;
  std::int64_t hi = g.w - offset <= 0 ? 0 : (g.w - offset - 1) / g.stride + 1;
  hi = std::min(hi, g.wo);
  lo = std::min(lo, hi);
  return {lo, hi};
}

void im2col(const double* x, const ConvGeometry& g, double* col) {
  for (std::int64_t kw = 0; kw < g.kw; ++kw) {
    const auto [lo, hi] = valid_columns(g, kw);
    const std::int64_t offset = kw - g.padding;
    for (std::int64_t c = 0; c < g.c; ++c) {
      for (std::int64_t kh = 0; kh < g.kh; ++kh) {
        double* dst = col + ((c * g.kh + kh) * g.kw + kw) * g.out_plane();
        for (std::int64_t oh = 0; oh < g.ho; ++oh) {
          const std::int64_t ih = oh * g.stride - g.padding + kh;
          double* row = dst + oh * g.wo;
          if (ih < 0 || ih >= g.h) {
            std::fill(row, row + g.wo, 0.0);
            continue;
          }
          const double* src = x + (c * g.h + ih) * g.w + offset;
          std::fill(row, row + lo, 0.0);
          if (g.stride == 1) {
            std::copy(src + lo, src + hi, row + lo);
          } else {
            for (std::int64_t ow = lo; ow < hi; ++ow) row[ow] = src[ow * g.stride];
          }
          std::fill(row + hi, row + g.wo, 0.0);
        }
      }
    }
  }
}

void col2im_add(const double* col, const ConvGeometry& g, double* dx) {
  for (std::int64_t kw = 0; kw < g.kw; ++kw) {
    const auto [lo, hi] = valid_columns(g, kw);
    const std::int64_t offset = kw - g.padding;
    for (std::int64_t c = 0; c < g.c; ++c) {
      for (std::int64_t kh = 0; kh < g.kh; ++kh) {
        const double* src = col + ((c * g.kh + kh) * g.kw + kw) * g.out_plane();
        for (std::int64_t oh = 0; oh < g.ho; ++oh) {
          const std::int64_t ih = oh * g.stride - g.padding + kh;
          if (ih < 0 || ih >= g.h) continue;
          double* dst = dx + (c * g.h + ih) * g.w + offset;
          const double* row = src + oh * g.wo;
          if (g.stride == 1) {
            for (std::int64_t ow = lo; ow < hi; ++ow) dst[ow] += row[ow];
          } else {
            for (std::int64_t ow = lo; ow < hi; ++ow) dst[ow * g.stride] += row[ow];
          }
        }
      }
    }
  }
}

// Per-thread im2col buffer; grows only, so steady-state training does not
// allocate.
double* scratch(std::size_t count) {
  thread_local std::vector<double> buffer;
  if (buffer.size() < count) buffer.resize(count);
  return buffer.data();
}

}  // namespace

// ---------------------------------------------------------------------------
// Convolution

Variable conv2d(const Variable& input, const Variable& kernel, int stride, int padding) {
  require_rank(input, 4, "conv2d input");
  require_rank(kernel, 4, "conv2d kernel");
  require(stride >= 1 && padding >= 0, ErrorKind::kInvalidArgument,
          "conv2d: stride must be >= 1 and padding >= 0");
  const auto& xs = input.shape();
  const auto& ks = kernel.shape();
  require(xs[1] == ks[1], ErrorKind::kShapeMismatch,
          "conv2d: input channels " + std::to_string(xs[1]) + " vs kernel channels " +
              std::to_string(ks[1]));
  ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ks[0], ks[2], ks[3], 0, 0, stride, padding};
  const std::int64_t span_h = g.h + 2 * padding - g.kh;
  const std::int64_t span_w = g.w + 2 * padding - g.kw;
  require(span_h >= 0 && span_w >= 0, ErrorKind::kShapeMismatch,
          "conv2d: non-positive output extent for input " + shape_to_string(xs) + " and kernel " +
              shape_to_string(ks));
  g.ho = span_h / stride + 1;
  g.wo = span_w / stride + 1;

  Tensor out({g.n, g.o, g.ho, g.wo});
  const double* x = input.value().ptr();
  const double* k = kernel.value().ptr();
  double* y = out.ptr();
  parallel_for(static_cast<std::size_t>(g.n), [&](std::size_t n) {
    ConstMatrixMap weights(k, g.o, g.patch());
    MatrixMap result(y + n * g.o * g.out_plane(), g.o, g.out_plane());
    const double* xn = x + n * g.c * g.h * g.w;
    if (g.direct()) {
      result.noalias() = weights * ConstMatrixMap(xn, g.c, g.h * g.w);
    } else {
      double* col = scratch(static_cast<std::size_t>(g.patch() * g.out_plane()));
      im2col(xn, g, col);
      result.noalias() = weights * ConstMatrixMap(col, g.patch(), g.out_plane());
    }
  });

  return Variable::make(std::move(out), "conv2d", {input, kernel}, [g](Node& self) {
    Node& in = *self.inputs[0];
    Node& ker = *self.inputs[1];
    const bool need_dx = in.requires_grad;
    const bool need_dw = ker.requires_grad;
    const double* x = in.value.ptr();
    const double* k = ker.value.ptr();
    const double* gy = self.grad.ptr();
    double* dx = need_dx ? in.grad_buffer().ptr() : nullptr;
    const std::int64_t wsize = g.o * g.patch();
    std::vector<double> dw_parts(need_dw ? static_cast<std::size_t>(g.n * wsize) : 0);

    parallel_for(static_cast<std::size_t>(g.n), [&](std::size_t n) {
      ConstMatrixMap weights(k, g.o, g.patch());
      ConstMatrixMap grad_out(gy + n * g.o * g.out_plane(), g.o, g.out_plane());
      const double* xn = x + n * g.c * g.h * g.w;
      if (g.direct()) {
        ConstMatrixMap xmat(xn, g.c, g.h * g.w);
        if (need_dw) {
          MatrixMap(dw_parts.data() + n * wsize, g.o, g.patch()).noalias() =
              grad_out * xmat.transpose();
        }
        if (need_dx) {
          MatrixMap(dx + n * g.c * g.h * g.w, g.c, g.h * g.w).noalias() +=
              weights.transpose() * grad_out;
        }
        return;
      }
      double* col = scratch(static_cast<std::size_t>(g.patch() * g.out_plane()));
      if (need_dw) {
        im2col(xn, g, col);
        MatrixMap(dw_parts.data() + n * wsize, g.o, g.patch()).noalias() =
            grad_out * ConstMatrixMap(col, g.patch(), g.out_plane()).transpose();
      }
      if (need_dx) {
        MatrixMap(col, g.patch(), g.out_plane()).noalias() = weights.transpose() * grad_out;
        col2im_add(col, g, dx + n * g.c * g.h * g.w);
      }
    });

    if (need_dw) {
      double* dw = ker.grad_buffer().ptr();
      for (std::int64_t n = 0; n < g.n; ++n) {
        const double* part = dw_parts.data() + n * wsize;
        for (std::int64_t i = 0; i < wsize; ++i) dw[i] += part[i];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Pooling

Variable max_pool2d(const Variable& input, int window, int stride, int padding) {
  require_rank(input, 4, "max_pool2d");
  require(window >= 1 && stride >= 1 && padding >= 0 && padding < window, ErrorKind::kInvalidArgument,
          "max_pool2d: bad window");
  const auto& s = input.shape();
  const std::int64_t n = s[0], c = s[1], h = s[2], w = s[3];
  require(h + 2 * padding >= window && w + 2 * padding >= window, ErrorKind::kShapeMismatch,
          "max_pool2d: spatial extent " + shape_to_string(s) + " smaller than window");
  const std::int64_t ho = (h + 2 * padding - window) / stride + 1;
  const std::int64_t wo = (w + 2 * padding - window) / stride + 1;
  Tensor out({n, c, ho, wo});
  std::vector<std::int64_t> argmax(out.size());
  const double* x = input.value().ptr();
  std::size_t o = 0;
  for (std::int64_t plane = 0; plane < n * c; ++plane) {
    const double* xp = x + plane * h * w;
    for (std::int64_t oh = 0; oh < ho; ++oh) {
      for (std::int64_t ow = 0; ow < wo; ++ow, ++o) {
        // Padding never wins: only in-bounds taps are candidates.
        std::int64_t best = -1;
        for (int dh = 0; dh < window; ++dh) {
          const std::int64_t ih = oh * stride + dh - padding;
          if (ih < 0 || ih >= h) continue;
          for (int dw = 0; dw < window; ++dw) {
            const std::int64_t iw = ow * stride + dw - padding;
            if (iw < 0 || iw >= w) continue;
            const std::int64_t idx = ih * w + iw;
            if (best < 0 || xp[idx] > xp[best]) best = idx;  // strict: ties keep the first index
          }
        }
        out[o] = xp[best];
        argmax[o] = plane * h * w + best;
      }
    }
  }
  return Variable::make(std::move(out), "max_pool2d", {input},
                        [argmax = std::move(argmax)](Node& self) {
                          double* dx = self.inputs[0]->grad_buffer().ptr();
                          const double* gy = self.grad.ptr();
                          for (std::size_t i = 0; i < argmax.size(); ++i) dx[argmax[i]] += gy[i];
                        });
}

Variable avg_pool2d(const Variable& input, int window, int stride) {
  require_rank(input, 4, "avg_pool2d");
  require(window >= 1 && stride >= 1, ErrorKind::kInvalidArgument, "avg_pool2d: bad window");
  const auto& s = input.shape();
  const std::int64_t n = s[0], c = s[1], h = s[2], w = s[3];
  require(h >= window && w >= window, ErrorKind::kShapeMismatch,
          "avg_pool2d: spatial extent " + shape_to_string(s) + " smaller than window");
  const std::int64_t ho = (h - window) / stride + 1;
  const std::int64_t wo = (w - window) / stride + 1;
  const double scale = 1.0 / (window * window);
  Tensor out({n, c, ho, wo});
  const double* x = input.value().ptr();
  std::size_t o = 0;
  for (std::int64_t plane = 0; plane < n * c; ++plane) {
    const double* xp = x + plane * h * w;
    for (std::int64_t oh = 0; oh < ho; ++oh) {
      for (std::int64_t ow = 0; ow < wo; ++ow, ++o) {
        double acc = 0.0;
        for (int dh = 0; dh < window; ++dh) {
          for (int dw = 0; dw < window; ++dw) acc += xp[(oh * stride + dh) * w + ow * stride + dw];
        }
        out[o] = acc * scale;
      }
    }
  }
  return Variable::make(std::move(out), "avg_pool2d", {input},
                        [=](Node& self) {
                          double* dx = self.inputs[0]->grad_buffer().ptr();
                          const double* gy = self.grad.ptr();
                          std::size_t o = 0;
                          for (std::int64_t plane = 0; plane < n * c; ++plane) {
                            double* dp = dx + plane * h * w;
                            for (std::int64_t oh = 0; oh < ho; ++oh) {
                              for (std::int64_t ow = 0; ow < wo; ++ow, ++o) {
                                const double gv = gy[o] * scale;
                                for (int dh = 0; dh < window; ++dh) {
                                  for (int dw = 0; dw < window; ++dw) {
                                    dp[(oh * stride + dh) * w + ow * stride + dw] += gv;
                                  }
                                }
                              }
                            }
                          }
                        });
}

// ---------------------------------------------------------------------------
// Batch normalization

BatchNormStats::BatchNormStats(std::int64_t channels) {
  if (channels > 0) {
    running_mean = Tensor({channels}, 0.0);
    running_var = Tensor({channels}, 1.0);
  }
}

void BatchNormStats::begin_collection() {
  const auto c = static_cast<std::size_t>(channels());
  collect_sum.assign(c, 0.0);
  collect_sumsq.assign(c, 0.0);
  collect_count = 0;
}

void BatchNormStats::finish_collection() {
  require(collect_count > 1, ErrorKind::kInvalidArgument,
          "batch-norm statistics collection saw fewer than two values per channel");
  const auto count = static_cast<double>(collect_count);
  for (std::size_t c = 0; c < collect_sum.size(); ++c) {
    const double mean = collect_sum[c] / count;
    const double var = std::max(0.0, collect_sumsq[c] / count - mean * mean);
    running_mean[c] = mean;
    running_var[c] = var * count / (count - 1.0);
  }
  collect_sum.clear();
  collect_sumsq.clear();
  collect_count = 0;
}

Variable batch_norm2d(const Variable& input, const Variable& gamma, const Variable& beta,
                      BatchNormStats& stats, Mode mode) {
  require_rank(input, 4, "batch_norm2d");
  const auto& s = input.shape();
  const std::int64_t n = s[0], c = s[1], plane = s[2] * s[3];
  require(gamma.value().size() == static_cast<std::size_t>(c) &&
              beta.value().size() == static_cast<std::size_t>(c) && stats.channels() == c,
          ErrorKind::kShapeMismatch,
          "batch_norm2d: parameters do not match " + std::to_string(c) + " channels");
  const std::int64_t m = n * plane;
  require(m > 0, ErrorKind::kShapeMismatch, "batch_norm2d: empty batch");

  const double* x = input.value().ptr();
  const double* gm = gamma.value().ptr();
  const double* bt = beta.value().ptr();
  Tensor out(s);
  Tensor xhat(s);
  std::vector<double> inv_std(static_cast<std::size_t>(c));
  const bool batch_stats = mode != Mode::kEval;
  if (mode == Mode::kCollectStats && stats.collect_sum.size() != static_cast<std::size_t>(c)) {
    stats.begin_collection();
  }

  for (std::int64_t ch = 0; ch < c; ++ch) {
    double mean, var;
    if (batch_stats) {
      double acc = 0.0;
      for (std::int64_t b = 0; b < n; ++b) {
        const double* xp = x + (b * c + ch) * plane;
        for (std::int64_t i = 0; i < plane; ++i) acc += xp[i];
      }
      mean = acc / static_cast<double>(m);
      double sq = 0.0;
      for (std::int64_t b = 0; b < n; ++b) {
        const double* xp = x + (b * c + ch) * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          const double d = xp[i] - mean;
          sq += d * d;
        }
      }
      var = sq / static_cast<double>(m);
      if (mode == Mode::kTrain) {
        const double unbiased = m > 1 ? var * static_cast<double>(m) / static_cast<double>(m - 1) : var;
        stats.running_mean[ch] = stats.momentum * stats.running_mean[ch] + (1.0 - stats.momentum) * mean;
        stats.running_var[ch] = stats.momentum * stats.running_var[ch] + (1.0 - stats.momentum) * unbiased;
      } else {
        stats.collect_sum[ch] += acc;
        stats.collect_sumsq[ch] += sq + static_cast<double>(m) * mean * mean;
      }
    } else {
      mean = stats.running_mean[ch];
      var = stats.running_var[ch];
    }
    const double istd = 1.0 / std::sqrt(var + stats.eps);
    inv_std[ch] = istd;
    for (std::int64_t b = 0; b < n; ++b) {
      const std::int64_t off = (b * c + ch) * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        const double xh = (x[off + i] - mean) * istd;
        xhat[off + i] = xh;
        out[off + i] = gm[ch] * xh + bt[ch];
      }
    }
  }
  if (mode == Mode::kCollectStats) stats.collect_count += m;

  return Variable::make(
      std::move(out), "batch_norm2d", {input, gamma, beta},
      [xhat = std::move(xhat), inv_std = std::move(inv_std), batch_stats, n, c, plane,
       m](Node& self) {
        Node& in = *self.inputs[0];
        Node& gnode = *self.inputs[1];
        Node& bnode = *self.inputs[2];
        const double* gy = self.grad.ptr();
        const double* gm = gnode.value.ptr();
        double* dx = in.requires_grad ? in.grad_buffer().ptr() : nullptr;
        double* dgamma = gnode.requires_grad ? gnode.grad_buffer().ptr() : nullptr;
        double* dbeta = bnode.requires_grad ? bnode.grad_buffer().ptr() : nullptr;
        for (std::int64_t ch = 0; ch < c; ++ch) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::int64_t b = 0; b < n; ++b) {
            const std::int64_t off = (b * c + ch) * plane;
            for (std::int64_t i = 0; i < plane; ++i) {
              sum_dy += gy[off + i];
              sum_dy_xhat += gy[off + i] * xhat[off + i];
            }
          }
          if (dgamma) dgamma[ch] += sum_dy_xhat;
          if (dbeta) dbeta[ch] += sum_dy;
          if (!dx) continue;
          const double scale = gm[ch] * inv_std[ch];
          if (!batch_stats) {
            for (std::int64_t b = 0; b < n; ++b) {
              const std::int64_t off = (b * c + ch) * plane;
              for (std::int64_t i = 0; i < plane; ++i) dx[off + i] += scale * gy[off + i];
            }
            continue;
          }
          const double mean_dy = sum_dy / static_cast<double>(m);
          const double mean_dy_xhat = sum_dy_xhat / static_cast<double>(m);
          for (std::int64_t b = 0; b < n; ++b) {
            const std::int64_t off = (b * c + ch) * plane;
            for (std::int64_t i = 0; i < plane; ++i) {
              dx[off + i] += scale * (gy[off + i] - mean_dy - xhat[off + i] * mean_dy_xhat);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Elementwise and shape ops

Variable relu(const Variable& input) {
  Tensor out = input.value();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return Variable::make(std::move(out), "relu", {input}, [](Node& self) {
    double* dx = self.inputs[0]->grad_buffer().ptr();
    const double* y = self.value.ptr();
    const double* gy = self.grad.ptr();
    for (std::size_t i = 0; i < self.value.size(); ++i) {
      if (y[i] > 0.0) dx[i] += gy[i];
    }
  });
}

Variable sigmoid(const Variable& input) {
  static const double kLow = std::numeric_limits<double>::min();
  static const double kHigh = std::nextafter(1.0, 0.0);
  Tensor out = input.value();
  for (double& v : out.data()) {
    const double s = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    v = std::clamp(s, kLow, kHigh);
  }
  return Variable::make(std::move(out), "sigmoid", {input}, [](Node& self) {
    double* dx = self.inputs[0]->grad_buffer().ptr();
    const double* y = self.value.ptr();
    const double* gy = self.grad.ptr();
    for (std::size_t i = 0; i < self.value.size(); ++i) dx[i] += gy[i] * y[i] * (1.0 - y[i]);
  });
}

Variable concat_channels(const std::vector<Variable>& inputs) {
  require(!inputs.empty(), ErrorKind::kInvalidArgument, "concat_channels: no inputs");
  for (const auto& in : inputs) require_rank(in, 4, "concat_channels");
  const auto& first = inputs.front().shape();
  const std::int64_t n = first[0], h = first[2], w = first[3];
  std::int64_t total = 0;
  std::vector<std::int64_t> channels;
  for (const auto& in : inputs) {
    const auto& s = in.shape();
    require(s[0] == n && s[2] == h && s[3] == w, ErrorKind::kShapeMismatch,
            "concat_channels: " + shape_to_string(s) + " does not match " + shape_to_string(first));
    channels.push_back(s[1]);
    total += s[1];
  }
  const std::int64_t plane = h * w;
  Tensor out({n, total, h, w});
  for (std::int64_t b = 0; b < n; ++b) {
    double* dst = out.ptr() + b * total * plane;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const double* src = inputs[i].value().ptr() + b * channels[i] * plane;
      dst = std::copy(src, src + channels[i] * plane, dst);
    }
  }
  return Variable::make(std::move(out), "concat_channels", inputs,
                        [channels, n, total, plane](Node& self) {
                          const double* gy = self.grad.ptr();
                          std::int64_t offset = 0;
                          for (std::size_t i = 0; i < channels.size(); ++i) {
                            Node& in = *self.inputs[i];
                            if (in.requires_grad) {
                              double* dx = in.grad_buffer().ptr();
                              for (std::int64_t b = 0; b < n; ++b) {
                                const double* src = gy + (b * total + offset) * plane;
                                double* dst = dx + b * channels[i] * plane;
                                for (std::int64_t j = 0; j < channels[i] * plane; ++j) dst[j] += src[j];
                              }
                            }
                            offset += channels[i];
                          }
                        });
}

std::vector<Variable> split_channels(const Variable& input, const std::vector<std::int64_t>& sizes) {
  require_rank(input, 4, "split_channels");
  const auto& s = input.shape();
  std::int64_t total = 0;
  for (auto c : sizes) {
    require(c > 0, ErrorKind::kShapeMismatch, "split_channels: sizes must be positive");
    total += c;
  }
  require(total == s[1], ErrorKind::kShapeMismatch, "split_channels: sizes do not sum to channels");
  const std::int64_t n = s[0], plane = s[2] * s[3];
  std::vector<Variable> parts;
  std::int64_t offset = 0;
  for (auto c : sizes) {
    Tensor out({n, c, s[2], s[3]});
    for (std::int64_t b = 0; b < n; ++b) {
      const double* src = input.value().ptr() + (b * total + offset) * plane;
      std::copy(src, src + c * plane, out.ptr() + b * c * plane);
    }
    parts.push_back(Variable::make(std::move(out), "split_channels", {input},
                                   [n, c, offset, total, plane](Node& self) {
                                     double* dx = self.inputs[0]->grad_buffer().ptr();
                                     const double* gy = self.grad.ptr();
                                     for (std::int64_t b = 0; b < n; ++b) {
                                       double* dst = dx + (b * total + offset) * plane;
                                       const double* src = gy + b * c * plane;
                                       for (std::int64_t j = 0; j < c * plane; ++j) dst[j] += src[j];
                                     }
                                   }));
    offset += c;
  }
  return parts;
}

Variable global_avg_pool(const Variable& input) {
  require_rank(input, 4, "global_avg_pool");
  const auto& s = input.shape();
  const std::int64_t planes = s[0] * s[1], plane = s[2] * s[3];
  Tensor out({s[0], s[1]});
  const double* x = input.value().ptr();
  for (std::int64_t p = 0; p < planes; ++p) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < plane; ++i) acc += x[p * plane + i];
    out[p] = acc / static_cast<double>(plane);
  }
  return Variable::make(std::move(out), "global_avg_pool", {input}, [planes, plane](Node& self) {
    double* dx = self.inputs[0]->grad_buffer().ptr();
    const double* gy = self.grad.ptr();
    const double inv = 1.0 / static_cast<double>(plane);
    for (std::int64_t p = 0; p < planes; ++p) {
      const double gv = gy[p] * inv;
      for (std::int64_t i = 0; i < plane; ++i) dx[p * plane + i] += gv;
    }
  });
}

Variable linear(const Variable& input, const Variable& weight, const Variable& bias) {
  require_rank(input, 2, "linear input");
  require_rank(weight, 2, "linear weight");
  require_rank(bias, 1, "linear bias");
  const std::int64_t n = input.shape()[0], in = input.shape()[1], outf = weight.shape()[0];
  require(weight.shape()[1] == in && bias.shape()[0] == outf, ErrorKind::kShapeMismatch,
          "linear: input " + shape_to_string(input.shape()) + ", weight " +
              shape_to_string(weight.shape()) + ", bias " + shape_to_string(bias.shape()));
  Tensor out({n, outf});
  MatrixMap y(out.ptr(), n, outf);
  y.noalias() = ConstMatrixMap(input.value().ptr(), n, in) *
                ConstMatrixMap(weight.value().ptr(), outf, in).transpose();
  const double* b = bias.value().ptr();
  for (std::int64_t r = 0; r < n; ++r) {
    for (std::int64_t j = 0; j < outf; ++j) y(r, j) += b[j];
  }
  return Variable::make(std::move(out), "linear", {input, weight, bias}, [n, in, outf](Node& self) {
    Node& x = *self.inputs[0];
    Node& w = *self.inputs[1];
    Node& b = *self.inputs[2];
    ConstMatrixMap gy(self.grad.ptr(), n, outf);
    if (x.requires_grad) {
      MatrixMap(x.grad_buffer().ptr(), n, in).noalias() += gy * ConstMatrixMap(w.value.ptr(), outf, in);
    }
    if (w.requires_grad) {
      MatrixMap(w.grad_buffer().ptr(), outf, in).noalias() +=
          gy.transpose() * ConstMatrixMap(x.value.ptr(), n, in);
    }
    if (b.requires_grad) {
      double* db = b.grad_buffer().ptr();
      for (std::int64_t r = 0; r < n; ++r) {
        for (std::int64_t j = 0; j < outf; ++j) db[j] += gy(r, j);
      }
    }
  });
}

Variable dropout(const Variable& input, double rate, Mode mode, Rng* rng) {
  require(rate >= 0.0 && rate < 1.0, ErrorKind::kInvalidArgument, "dropout rate must be in [0, 1)");
  if (mode != Mode::kTrain || rate == 0.0) return input;
  require(rng != nullptr, ErrorKind::kInvalidArgument, "dropout in train mode needs an rng");
  const double keep = 1.0 - rate;
  std::vector<double> mask(input.value().size());
  for (double& m : mask) m = uniform01(*rng) < keep ? 1.0 / keep : 0.0;
  Tensor out = input.value();
  for (std::size_t i = 0; i < mask.size(); ++i) out[i] *= mask[i];
  return Variable::make(std::move(out), "dropout", {input}, [mask = std::move(mask)](Node& self) {
    double* dx = self.inputs[0]->grad_buffer().ptr();
    const double* gy = self.grad.ptr();
    for (std::size_t i = 0; i < mask.size(); ++i) dx[i] += gy[i] * mask[i];
  });
}

Variable add(const Variable& a, const Variable& b) {
  require(a.shape() == b.shape(), ErrorKind::kShapeMismatch,
          "add: " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
  Tensor out = a.value();
  add_into(out, b.value());
  return Variable::make(std::move(out), "add", {a, b}, [](Node& self) {
    for (auto& in : self.inputs) {
      if (in->requires_grad) add_into(in->grad_buffer(), self.grad);
    }
  });
}

Variable mul(const Variable& a, const Variable& b) {
  require(a.shape() == b.shape(), ErrorKind::kShapeMismatch,
          "mul: " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return Variable::make(std::move(out), "mul", {a, b}, [](Node& self) {
    Node& x = *self.inputs[0];
    Node& y = *self.inputs[1];
    const double* gy = self.grad.ptr();
    if (x.requires_grad) {
      double* d = x.grad_buffer().ptr();
      for (std::size_t i = 0; i < self.value.size(); ++i) d[i] += gy[i] * y.value[i];
    }
    if (y.requires_grad) {
      double* d = y.grad_buffer().ptr();
      for (std::size_t i = 0; i < self.value.size(); ++i) d[i] += gy[i] * x.value[i];
    }
  });
}

Variable sum(const Variable& input) {
  double acc = 0.0;
  for (double v : input.value().data()) acc += v;
  return Variable::make(Tensor::scalar(acc), "sum", {input}, [](Node& self) {
    const double g = self.grad[0];
    for (double& d : self.inputs[0]->grad_buffer().data()) d += g;
  });
}

Variable weighted_sum(const Variable& input, const Tensor& weights) {
  require(weights.shape() == input.shape(), ErrorKind::kShapeMismatch, "weighted_sum: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) acc += input.value()[i] * weights[i];
  return Variable::make(Tensor::scalar(acc), "weighted_sum", {input}, [weights](Node& self) {
    const double g = self.grad[0];
    double* d = self.inputs[0]->grad_buffer().ptr();
    for (std::size_t i = 0; i < weights.size(); ++i) d[i] += g * weights[i];
  });
}

Variable select(const Variable& input, std::int64_t row, std::int64_t col) {
  require_rank(input, 2, "select");
  const auto& s = input.shape();
  require(row >= 0 && row < s[0] && col >= 0 && col < s[1], ErrorKind::kInvalidArgument,
          "select: index out of range");
  const auto idx = static_cast<std::size_t>(row * s[1] + col);
  return Variable::make(Tensor::scalar(input.value()[idx]), "select", {input}, [idx](Node& self) {
    self.inputs[0]->grad_buffer()[idx] += self.grad[0];
  });
}

// ---------------------------------------------------------------------------
// Losses

Variable weighted_bce_loss(const Variable& probs, const Tensor& targets,
                           std::span<const double> class_weights, const Tensor& mask) {
  require_rank(probs, 2, "weighted_bce_loss probs");
  const auto& s = probs.shape();
  require(targets.shape() == s && mask.shape() == s, ErrorKind::kShapeMismatch,
          "weighted_bce_loss: probs " + shape_to_string(s) + ", targets " +
              shape_to_string(targets.shape()) + ", mask " + shape_to_string(mask.shape()));
  const std::int64_t n = s[0], k = s[1];
  require(static_cast<std::int64_t>(class_weights.size()) == k, ErrorKind::kShapeMismatch,
          "weighted_bce_loss: expected " + std::to_string(k) + " class weights");
  double count = 0.0;
  for (double m : mask.data()) {
    require(m == 0.0 || m == 1.0, ErrorKind::kInvalidArgument, "weighted_bce_loss: mask must be 0/1");
    count += m;
  }
  require(count > 0.0, ErrorKind::kInvalidArgument, "weighted_bce_loss: mask excludes every cell");
  const double lo = kProbabilityClamp, hi = 1.0 - kProbabilityClamp;
  const double* p = probs.value().ptr();
  double acc = 0.0;
  for (std::int64_t i = 0; i < n * k; ++i) {
    if (mask[i] == 0.0) continue;
    const double y = targets[i];
    require(y >= 0.0 && y <= 1.0, ErrorKind::kInvalidArgument, "weighted_bce_loss: target outside [0,1]");
    const double pc = std::clamp(p[i], lo, hi);
    acc += -class_weights[i % k] * (y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc));
  }
  std::vector<double> weights(class_weights.begin(), class_weights.end());
  return Variable::make(
      Tensor::scalar(acc / count), "weighted_bce_loss", {probs},
      [targets, mask, weights = std::move(weights), count, n, k, lo, hi](Node& self) {
        const double g = self.grad[0] / count;
        const double* p = self.inputs[0]->value.ptr();
        double* dp = self.inputs[0]->grad_buffer().ptr();
        for (std::int64_t i = 0; i < n * k; ++i) {
          if (mask[i] == 0.0 || p[i] < lo || p[i] > hi) continue;
          const double y = targets[i];
          dp[i] += g * -weights[i % k] * (y / p[i] - (1.0 - y) / (1.0 - p[i]));
        }
      });
}

Variable l2_penalty(const std::vector<Variable>& params, double lambda) {
  require(lambda >= 0.0, ErrorKind::kInvalidArgument, "l2_penalty: lambda must be >= 0");
  double acc = 0.0;
  for (const auto& p : params) {
    for (double v : p.value().data()) acc += v * v;
  }
  return Variable::make(Tensor::scalar(lambda * acc), "l2_penalty", params, [lambda](Node& self) {
    const double g = self.grad[0] * 2.0 * lambda;
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      double* d = in->grad_buffer().ptr();
      const double* w = in->value.ptr();
      for (std::size_t i = 0; i < in->value.size(); ++i) d[i] += g * w[i];
    }
  });
}

}  // namespace cxr
