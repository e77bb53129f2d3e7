#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "splitee/data/dataset.hpp"
#include "splitee/rng.hpp"

namespace splitee::data {

/// Zero-pad, random crop of the original size, horizontal flip, then
/// per-channel normalization. Evaluation applies normalization only.
struct AugmentConfig {
  bool enabled = true;
  int pad = 4;
  double hflip_probability = 0.5;
  Normalization norm;

  void validate() const {
    if (pad < 0) throw config_error("augment pad must be non-negative");
    if (!(hflip_probability >= 0.0 && hflip_probability <= 1.0))
      throw config_error("augment flip probability must be in [0,1]");
  }
};

/// Crop offset into the padded image and flip decision.
struct AugmentDraw {
  std::size_t dy = 0;
  std::size_t dx = 0;
  bool flip = false;
};

inline AugmentDraw draw_augment(const AugmentConfig &cfg, Rng &rng) {
  const auto span = static_cast<std::uint64_t>(2 * cfg.pad + 1);
  AugmentDraw d;
  d.dy = rng.below(span);
  d.dx = rng.below(span);
  d.flip = rng.bernoulli(cfg.hflip_probability);
  return d;
}

/// Pad by `pad` zeros, crop HxW at (dy, dx), then optionally mirror columns.
/// Writes C*H*W values to `out`.
inline void crop_flip(const double *image, std::size_t C, std::size_t H, std::size_t W, int pad, const AugmentDraw &d,
                      double *out) {
  const auto p = static_cast<std::ptrdiff_t>(pad);
  for (std::size_t c = 0; c < C; ++c) {
    const double *src = image + c * H * W;
    double *dst = out + c * H * W;
    for (std::size_t y = 0; y < H; ++y) {
      const auto sy = static_cast<std::ptrdiff_t>(y + d.dy) - p;
      for (std::size_t x = 0; x < W; ++x) {
        const auto cx = d.flip ? W - 1 - x : x;
        const auto sx = static_cast<std::ptrdiff_t>(cx + d.dx) - p;
        const bool inside = sy >= 0 && sy < static_cast<std::ptrdiff_t>(H) && sx >= 0 &&
                            sx < static_cast<std::ptrdiff_t>(W);
        dst[y * W + x] = inside ? src[static_cast<std::size_t>(sy) * W + static_cast<std::size_t>(sx)] : 0.0;
      }
    }
  }
}

inline void normalize_inplace(double *image, std::size_t C, std::size_t HW, const Normalization &norm) {
  if (norm.mean.empty()) return;
  if (norm.mean.size() != C || norm.std.size() != C)
    throw dimension_error("normalization has " + std::to_string(norm.mean.size()) + " channels, image has " +
                          std::to_string(C));
  for (std::size_t c = 0; c < C; ++c) {
    const double m = norm.mean[c], inv = 1.0 / norm.std[c];
    for (std::size_t i = 0; i < HW; ++i) image[c * HW + i] = (image[c * HW + i] - m) * inv;
  }
}

/// Augments one CxHxW image with an explicit draw.
inline Tensor augment_with(const Tensor &image, const AugmentConfig &cfg, const AugmentDraw &d) {
  require_rank(image, 3, "augment input");
  const auto C = image.dim(0), H = image.dim(1), W = image.dim(2);
  Tensor out(image.shape);
  crop_flip(image.data(), C, H, W, cfg.pad, d, out.data());
  normalize_inplace(out.data(), C, H * W, cfg.norm);
  return out;
}

inline Tensor augment(const Tensor &image, const AugmentConfig &cfg, Rng &rng) {
  return augment_with(image, cfg, draw_augment(cfg, rng));
}

/// Evaluation path.
inline Tensor normalize(const Tensor &image, const Normalization &norm) {
  require_rank(image, 3, "normalize input");
  Tensor out = image;
  normalize_inplace(out.data(), image.dim(0), image.dim(1) * image.dim(2), norm);
  return out;
}

/// Gathers samples into a BxCxHxW batch. With `rng` the training augmentation
/// is applied (when enabled), otherwise only normalization.
inline Tensor make_batch(const Dataset &d, std::span<const std::size_t> indices, const AugmentConfig &cfg, Rng *rng) {
  const auto C = d.channels(), H = d.height(), W = d.width(), n = d.sample_numel();
  Tensor batch({indices.size(), C, H, W});
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const double *src = d.sample(indices[b]);
    double *dst = batch.data() + b * n;
    if (rng && cfg.enabled) {
      crop_flip(src, C, H, W, cfg.pad, draw_augment(cfg, *rng), dst);
    } else {
      std::copy(src, src + n, dst);
    }
    normalize_inplace(dst, C, H * W, cfg.norm);
  }
  return batch;
}

inline std::vector<int> gather_labels(const Dataset &d, std::span<const std::size_t> indices) {
  std::vector<int> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(d.labels[i]);
  return out;
}

} // namespace splitee::data
