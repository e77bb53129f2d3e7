#pragma once

// Layer primitives with explicit forward/backward. Backward functions
// accumulate parameter gradients into the tensors' grad arrays and return the
// gradient with respect to the input.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "splitee/error.hpp"
#include "splitee/tensor.hpp"

namespace splitee::nn {

enum class Mode { train, eval };

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

inline void ensure_grad(Tensor &t) {
  if (!t.has_grad()) t.zero_grad();
}

inline std::string dims(const Tensor &t) { return shape_str(t.shape); }

} // namespace detail

// ---------------------------------------------------------------------------
// linear

inline Tensor linear_forward(const Tensor &input, const Tensor &weight, const Tensor &bias) {
  require_rank(input, 2, "linear input");
  require_rank(weight, 2, "linear weight");
  require_rank(bias, 1, "linear bias");
  const auto batch = input.dim(0), in = input.dim(1), out = weight.dim(1);
  if (weight.dim(0) != in || bias.dim(0) != out)
    throw dimension_error("linear: input " + detail::dims(input) + ", weight " + detail::dims(weight) +
                          ", bias " + detail::dims(bias));
  Tensor y({batch, out});
  detail::ConstMapMat x(input.data(), batch, in);
  detail::ConstMapMat w(weight.data(), in, out);
  detail::MapMat ym(y.data(), batch, out);
  // row by row so a sample's output does not depend on the batch it came in
  for (std::size_t b = 0; b < batch; ++b) ym.row(static_cast<Eigen::Index>(b)).noalias() = x.row(static_cast<Eigen::Index>(b)) * w;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t j = 0; j < out; ++j) y[b * out + j] += bias[j];
  return y;
}

inline Tensor linear_backward(const Tensor &input, Tensor &weight, Tensor &bias, const Tensor &grad_out,
                              bool need_input_grad = true) {
  const auto batch = input.dim(0), in = input.dim(1), out = weight.dim(1);
  if (grad_out.shape != Shape{batch, out}) throw dimension_error("linear backward: grad " + detail::dims(grad_out));
  detail::ensure_grad(weight);
  detail::ensure_grad(bias);
  detail::ConstMapMat x(input.data(), batch, in);
  detail::ConstMapMat gy(grad_out.data(), batch, out);
  detail::MapMat gw(weight.grad.data(), in, out);
  gw.noalias() += x.transpose() * gy;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t j = 0; j < out; ++j) bias.grad[j] += grad_out[b * out + j];
  if (!need_input_grad) return {};
  Tensor gx({batch, in});
  detail::ConstMapMat w(weight.data(), in, out);
  detail::MapMat gxm(gx.data(), batch, in);
  gxm.noalias() = gy * w.transpose();
  return gx;
}

// ---------------------------------------------------------------------------
// conv2d (cross-correlation, square kernel, no bias)

struct Conv2dGeometry {
  std::size_t batch, in_c, in_h, in_w;
  std::size_t out_c, k, stride, padding;
  std::size_t out_h, out_w;

  std::size_t col_rows() const { return in_c * k * k; }
  std::size_t col_cols() const { return out_h * out_w; }
  bool is_pointwise() const { return k == 1 && stride == 1 && padding == 0; }
};

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t padding) {
  return (in + 2 * padding - k) / stride + 1;
}

inline Conv2dGeometry conv2d_geometry(const Tensor &input, const Tensor &weight, std::size_t stride,
                                      std::size_t padding) {
  require_rank(input, 4, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  if (stride == 0) throw config_error("conv2d: stride must be positive");
  const auto k = weight.dim(2);
  if (weight.dim(3) != k) throw dimension_error("conv2d: kernel must be square, got " + detail::dims(weight));
  if (k != 1 && k != 3 && k != 7) throw config_error("conv2d: kernel size must be 1, 3 or 7, got " + std::to_string(k));
  if (weight.dim(1) != input.dim(1))
    throw dimension_error("conv2d: input " + detail::dims(input) + " has " + std::to_string(input.dim(1)) +
                          " channels, weight " + detail::dims(weight) + " expects " + std::to_string(weight.dim(1)));
  const auto h = input.dim(2), w = input.dim(3);
  if (h + 2 * padding < k || w + 2 * padding < k)
    throw dimension_error("conv2d: kernel " + std::to_string(k) + " exceeds padded input " + detail::dims(input));
  return {input.dim(0), input.dim(1), h, w, weight.dim(0), k, stride, padding,
          conv_out_extent(h, k, stride, padding), conv_out_extent(w, k, stride, padding)};
}

namespace detail {

inline void im2col(const double *img, const Conv2dGeometry &g, double *cols) {
  const auto oh = g.out_h, ow = g.out_w, ih = g.in_h, iw = g.in_w;
  const auto s = g.stride;
  const auto p = static_cast<std::ptrdiff_t>(g.padding);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_c; ++c) {
    const double *plane = img + c * ih * iw;
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj, ++row) {
        double *dst = cols + row * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * s + ki) - p;
          double *d = dst + oy * ow;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(ih)) {
            std::fill(d, d + ow, 0.0);
            continue;
          }
          const double *src = plane + static_cast<std::size_t>(iy) * iw;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * s + kj) - p;
            d[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(iw)) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

inline void col2im_add(const double *cols, const Conv2dGeometry &g, double *img) {
  const auto oh = g.out_h, ow = g.out_w, ih = g.in_h, iw = g.in_w;
  const auto s = g.stride;
  const auto p = static_cast<std::ptrdiff_t>(g.padding);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_c; ++c) {
    double *plane = img + c * ih * iw;
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj, ++row) {
        const double *src = cols + row * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * s + ki) - p;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(ih)) continue;
          double *d = plane + static_cast<std::size_t>(iy) * iw;
          const double *sr = src + oy * ow;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * s + kj) - p;
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(iw)) d[ix] += sr[ox];
          }
        }
      }
    }
  }
}

} // namespace detail

/// Each sample is an independent GEMM, so a sample's output does not depend on
/// the rest of the batch.
inline Tensor conv2d_forward(const Tensor &input, const Tensor &weight, std::size_t stride, std::size_t padding) {
  const auto g = conv2d_geometry(input, weight, stride, padding);
  Tensor y({g.batch, g.out_c, g.out_h, g.out_w});
  const auto rows = g.col_rows(), cols_n = g.col_cols();
  const auto in_sample = g.in_c * g.in_h * g.in_w;
  const auto out_sample = g.out_c * cols_n;
  detail::ConstMapMat w(weight.data(), g.out_c, rows);
  std::vector<double> cols(g.is_pointwise() ? 0 : rows * cols_n);
  for (std::size_t b = 0; b < g.batch; ++b) {
    const double *src = input.data() + b * in_sample;
    if (!g.is_pointwise()) {
      detail::im2col(src, g, cols.data());
      src = cols.data();
    }
    detail::ConstMapMat c(src, rows, cols_n);
    detail::MapMat out(y.data() + b * out_sample, g.out_c, cols_n);
    out.noalias() = w * c;
  }
  return y;
}

inline Tensor conv2d_backward(const Tensor &input, Tensor &weight, std::size_t stride, std::size_t padding,
                              const Tensor &grad_out, bool need_input_grad = true) {
  const auto g = conv2d_geometry(input, weight, stride, padding);
  if (grad_out.shape != Shape{g.batch, g.out_c, g.out_h, g.out_w})
    throw dimension_error("conv2d backward: grad " + detail::dims(grad_out));
  detail::ensure_grad(weight);
  const auto rows = g.col_rows(), cols_n = g.col_cols();
  const auto in_sample = g.in_c * g.in_h * g.in_w;
  const auto out_sample = g.out_c * cols_n;
  detail::ConstMapMat w(weight.data(), g.out_c, rows);
  detail::MapMat gw(weight.grad.data(), g.out_c, rows);
  Tensor gx;
  if (need_input_grad) gx = Tensor(input.shape);
  std::vector<double> cols(g.is_pointwise() ? 0 : rows * cols_n);
  std::vector<double> gcols(need_input_grad && !g.is_pointwise() ? rows * cols_n : 0);
  for (std::size_t b = 0; b < g.batch; ++b) {
    const double *src = input.data() + b * in_sample;
    if (!g.is_pointwise()) {
      detail::im2col(src, g, cols.data());
      src = cols.data();
    }
    detail::ConstMapMat c(src, rows, cols_n);
    detail::ConstMapMat gy(grad_out.data() + b * out_sample, g.out_c, cols_n);
    gw.noalias() += gy * c.transpose();
    if (!need_input_grad) continue;
    if (g.is_pointwise()) {
      detail::MapMat gxm(gx.data() + b * in_sample, rows, cols_n);
      gxm.noalias() = w.transpose() * gy;
    } else {
      detail::MapMat gc(gcols.data(), rows, cols_n);
      gc.noalias() = w.transpose() * gy;
      detail::col2im_add(gcols.data(), g, gx.data() + b * in_sample);
    }
  }
  return gx;
}

// ---------------------------------------------------------------------------
// batchnorm2d

inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr double kBatchNormEps = 1e-5;

struct BatchNormCache {
  Shape shape;
  Mode mode = Mode::train;
  std::vector<double> xhat;
  std::vector<double> inv_std; // per channel
};

namespace detail {

inline void check_bn(const Tensor &x, const Tensor &gamma, const Tensor &beta) {
  require_rank(x, 4, "batchnorm2d input");
  const auto c = x.dim(1);
  if (gamma.shape != Shape{c} || beta.shape != Shape{c})
    throw dimension_error("batchnorm2d: input " + dims(x) + ", gamma " + dims(gamma) + ", beta " + dims(beta));
}

} // namespace detail

/// Train mode: normalize by batch statistics and update the running estimates
/// (biased variance for normalization, unbiased for the running estimate).
inline Tensor batchnorm2d_train(const Tensor &x, const Tensor &gamma, const Tensor &beta, Tensor &running_mean,
                                Tensor &running_var, BatchNormCache *cache = nullptr) {
  detail::check_bn(x, gamma, beta);
  const auto B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  const auto n = B * HW;
  if (n < 2)
    throw contract_error("batchnorm2d: degenerate variance, train mode needs at least 2 values per channel, got " +
                         detail::dims(x));
  if (running_mean.shape != Shape{C} || running_var.shape != Shape{C})
    throw dimension_error("batchnorm2d: running stats do not match " + std::to_string(C) + " channels");
  Tensor y(x.shape);
  std::vector<double> xhat(cache ? x.numel() : 0);
  std::vector<double> inv_stds(C);
  for (std::size_t c = 0; c < C; ++c) {
    double sum = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
      const double *p = x.data() + (b * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) sum += p[i];
    }
    const double mean = sum / static_cast<double>(n);
    double sq = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
      const double *p = x.data() + (b * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) {
        const double d = p[i] - mean;
        sq += d * d;
      }
    }
    const double var = sq / static_cast<double>(n);
    const double inv_std = 1.0 / std::sqrt(var + kBatchNormEps);
    inv_stds[c] = inv_std;
    const double gm = gamma[c], bt = beta[c];
    for (std::size_t b = 0; b < B; ++b) {
      const auto off = (b * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) {
        const double xh = (x[off + i] - mean) * inv_std;
        if (cache) xhat[off + i] = xh;
        y[off + i] = gm * xh + bt;
      }
    }
    running_mean[c] = (1.0 - kBatchNormMomentum) * running_mean[c] + kBatchNormMomentum * mean;
    running_var[c] = (1.0 - kBatchNormMomentum) * running_var[c] +
                     kBatchNormMomentum * var * static_cast<double>(n) / static_cast<double>(n - 1);
  }
  if (cache) *cache = {x.shape, Mode::train, std::move(xhat), std::move(inv_stds)};
  return y;
}

inline Tensor batchnorm2d_eval(const Tensor &x, const Tensor &gamma, const Tensor &beta, const Tensor &running_mean,
                               const Tensor &running_var, BatchNormCache *cache = nullptr) {
  detail::check_bn(x, gamma, beta);
  const auto B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (running_mean.shape != Shape{C} || running_var.shape != Shape{C})
    throw dimension_error("batchnorm2d: running stats do not match " + std::to_string(C) + " channels");
  Tensor y(x.shape);
  std::vector<double> xhat(cache ? x.numel() : 0);
  std::vector<double> inv_stds(C);
  for (std::size_t c = 0; c < C; ++c) {
    const double inv_std = 1.0 / std::sqrt(running_var[c] + kBatchNormEps);
    inv_stds[c] = inv_std;
    const double mean = running_mean[c], gm = gamma[c], bt = beta[c];
    for (std::size_t b = 0; b < B; ++b) {
      const auto off = (b * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) {
        const double xh = (x[off + i] - mean) * inv_std;
        if (cache) xhat[off + i] = xh;
        y[off + i] = gm * xh + bt;
      }
    }
  }
  if (cache) *cache = {x.shape, Mode::eval, std::move(xhat), std::move(inv_stds)};
  return y;
}

inline Tensor batchnorm2d_backward(const BatchNormCache &cache, Tensor &gamma, Tensor &beta, const Tensor &grad_out,
                                   bool need_input_grad = true) {
  if (grad_out.shape != cache.shape) throw dimension_error("batchnorm2d backward: grad " + detail::dims(grad_out));
  detail::ensure_grad(gamma);
  detail::ensure_grad(beta);
  const auto B = cache.shape[0], C = cache.shape[1], HW = cache.shape[2] * cache.shape[3];
  const double n = static_cast<double>(B * HW);
  Tensor gx;
  if (need_input_grad) gx = Tensor(cache.shape);
  for (std::size_t c = 0; c < C; ++c) {
    double dg = 0.0, db = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
      const auto off = (b * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) {
        db += grad_out[off + i];
        dg += grad_out[off + i] * cache.xhat[off + i];
      }
    }
    gamma.grad[c] += dg;
    beta.grad[c] += db;
    if (!need_input_grad) continue;
    const double scale = gamma[c] * cache.inv_std[c];
    for (std::size_t b = 0; b < B; ++b) {
      const auto off = (b * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) {
        if (cache.mode == Mode::train)
          gx[off + i] = scale / n * (n * grad_out[off + i] - db - cache.xhat[off + i] * dg);
        else
          gx[off + i] = scale * grad_out[off + i];
      }
    }
  }
  return gx;
}

// ---------------------------------------------------------------------------
// relu

/// NaN passes through so divergence is not masked.
inline Tensor relu_forward(const Tensor &x) {
  Tensor y = x;
  y.grad.clear();
  for (auto &v : y.values) v = v < 0.0 ? 0.0 : v;
  return y;
}

/// Uses the forward output as the mask.
inline Tensor relu_backward(const Tensor &output, const Tensor &grad_out) {
  if (grad_out.shape != output.shape) throw dimension_error("relu backward: grad " + detail::dims(grad_out));
  Tensor gx(output.shape);
  for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] = output[i] > 0.0 ? grad_out[i] : 0.0;
  return gx;
}

// ---------------------------------------------------------------------------
// max pool

struct MaxPoolCache {
  Shape input_shape;
  std::vector<std::size_t> argmax; // flat input index per output element
};

/// Padded positions never win. Ties resolve to the first position in scan order.
inline Tensor max_pool_forward(const Tensor &x, std::size_t k, std::size_t stride, std::size_t padding,
                               MaxPoolCache *cache = nullptr) {
  require_rank(x, 4, "max_pool input");
  if (stride == 0 || k == 0) throw config_error("max_pool: kernel and stride must be positive");
  if (padding * 2 > k) throw config_error("max_pool: padding must be at most half the kernel");
  const auto B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H + 2 * padding < k || W + 2 * padding < k)
    throw dimension_error("max_pool: window " + std::to_string(k) + " exceeds padded input " + detail::dims(x));
  const auto oh = conv_out_extent(H, k, stride, padding), ow = conv_out_extent(W, k, stride, padding);
  Tensor y({B, C, oh, ow});
  std::vector<std::size_t> arg(cache ? y.numel() : 0);
  const auto p = static_cast<std::ptrdiff_t>(padding);
  std::size_t o = 0;
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const auto base = bc * H * W;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox, ++o) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_i = base;
        bool found = false;
        for (std::size_t ki = 0; ki < k; ++ki) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ki) - p;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
          for (std::size_t kj = 0; kj < k; ++kj) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kj) - p;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
            const auto idx = base + static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix);
            if (!found || x[idx] > best) {
              best = x[idx];
              best_i = idx;
              found = true;
            }
          }
        }
        y[o] = best;
        if (cache) arg[o] = best_i;
      }
    }
  }
  if (cache) *cache = {x.shape, std::move(arg)};
  return y;
}

inline Tensor max_pool_backward(const MaxPoolCache &cache, const Tensor &grad_out) {
  if (grad_out.numel() != cache.argmax.size()) throw dimension_error("max_pool backward: grad " + detail::dims(grad_out));
  Tensor gx(cache.input_shape);
  for (std::size_t o = 0; o < grad_out.numel(); ++o) gx[cache.argmax[o]] += grad_out[o];
  return gx;
}

// ---------------------------------------------------------------------------
// global average pool and flatten

inline Tensor global_avg_pool_forward(const Tensor &x) {
  require_rank(x, 4, "global_avg_pool input");
  const auto B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor y({B, C, 1, 1});
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    double s = 0.0;
    const double *p = x.data() + bc * HW;
    for (std::size_t i = 0; i < HW; ++i) s += p[i];
    y[bc] = s / static_cast<double>(HW);
  }
  return y;
}

inline Tensor global_avg_pool_backward(const Shape &input_shape, const Tensor &grad_out) {
  const auto B = input_shape.at(0), C = input_shape.at(1), HW = input_shape.at(2) * input_shape.at(3);
  if (grad_out.numel() != B * C) throw dimension_error("global_avg_pool backward: grad " + detail::dims(grad_out));
  Tensor gx(input_shape);
  const double inv = 1.0 / static_cast<double>(HW);
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const double g = grad_out[bc] * inv;
    double *p = gx.data() + bc * HW;
    for (std::size_t i = 0; i < HW; ++i) p[i] = g;
  }
  return gx;
}

inline Tensor flatten(const Tensor &x) {
  if (x.rank() < 1) throw dimension_error("flatten: scalar input");
  return x.reshaped({x.dim(0), x.numel() / x.dim(0)});
}

// ---------------------------------------------------------------------------
// softmax and loss

inline Tensor softmax_rows(const Tensor &logits) {
  require_rank(logits, 2, "softmax logits");
  const auto B = logits.dim(0), K = logits.dim(1);
  Tensor p(logits.shape);
  for (std::size_t b = 0; b < B; ++b) {
    const double *z = logits.data() + b * K;
    double *q = p.data() + b * K;
    const double mx = *std::max_element(z, z + K);
    double s = 0.0;
    for (std::size_t j = 0; j < K; ++j) {
      q[j] = std::exp(z[j] - mx);
      s += q[j];
    }
    for (std::size_t j = 0; j < K; ++j) q[j] /= s;
  }
  return p;
}

/// Lowest index wins ties.
inline std::vector<int> argmax_rows(const Tensor &scores) {
  require_rank(scores, 2, "argmax input");
  const auto B = scores.dim(0), K = scores.dim(1);
  std::vector<int> out(B);
  for (std::size_t b = 0; b < B; ++b) {
    const double *z = scores.data() + b * K;
    out[b] = static_cast<int>(std::max_element(z, z + K) - z);
  }
  return out;
}

struct LossResult {
  double loss = 0.0;
  Tensor grad_logits;
};

/// Mean negative log-likelihood of the labels under a row softmax.
inline LossResult softmax_cross_entropy(const Tensor &logits, std::span<const int> labels) {
  require_rank(logits, 2, "cross-entropy logits");
  const auto B = logits.dim(0), K = logits.dim(1);
  if (K < 2) throw config_error("cross-entropy needs at least 2 classes, got " + std::to_string(K));
  if (labels.size() != B)
    throw dimension_error("cross-entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                          std::to_string(B));
  LossResult r{0.0, Tensor(logits.shape)};
  const double inv_b = 1.0 / static_cast<double>(B);
  for (std::size_t b = 0; b < B; ++b) {
    const int y = labels[b];
    if (y < 0 || static_cast<std::size_t>(y) >= K)
      throw contract_error("cross-entropy: label " + std::to_string(y) + " outside [0," + std::to_string(K) + ")");
    const double *z = logits.data() + b * K;
    double *g = r.grad_logits.data() + b * K;
    const double mx = *std::max_element(z, z + K);
    double s = 0.0;
    for (std::size_t j = 0; j < K; ++j) {
      g[j] = std::exp(z[j] - mx);
      s += g[j];
    }
    r.loss += (std::log(s) + mx - z[y]) * inv_b;
    for (std::size_t j = 0; j < K; ++j) g[j] = (g[j] / s - (static_cast<std::size_t>(y) == j ? 1.0 : 0.0)) * inv_b;
  }
  return r;
}

} // namespace splitee::nn
