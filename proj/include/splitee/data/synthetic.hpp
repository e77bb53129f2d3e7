#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>

#include "splitee/data/dataset.hpp"
#include "splitee/rng.hpp"

namespace splitee::data {

/// Named difficulty levels for the synthetic gratings.
inline double difficulty_level(const std::string &name) {
  if (name == "easy") return 0.25;
  if (name == "mid") return 0.5;
  if (name == "hard") return 1.0;
  throw config_error("unknown difficulty '" + name + "' (expected easy, mid or hard)");
}

/// Class-conditional sinusoidal gratings. Class k has orientation pi*k/K, one
/// of three spatial frequencies and a fixed phase drawn from `seed`. Each
/// sample jitters the phase by up to +-pi*difficulty and adds Gaussian pixel
/// noise with standard deviation 0.3*difficulty, clamped to [0,1]. At
/// difficulty 0 every sample equals its class template.
///
/// `stream` selects independent per-sample draws over the same templates
/// (0 for a training split, 1 for a test split).
inline Dataset synth_make(int num_classes, int per_class, int channels, int height, int width, double difficulty,
                          std::uint64_t seed, std::uint64_t stream = 0) {
  if (num_classes < 2) throw config_error("synthetic data needs at least 2 classes");
  if (per_class < 1) throw config_error("synthetic data needs at least one sample per class");
  if (channels < 1 || height < 1 || width < 1) throw config_error("synthetic image extents must be positive");
  if (!(difficulty >= 0.0)) throw config_error("difficulty must be non-negative");

  const auto K = static_cast<std::size_t>(num_classes);
  const auto C = static_cast<std::size_t>(channels), H = static_cast<std::size_t>(height),
             W = static_cast<std::size_t>(width);
  const double extent = static_cast<double>(std::max(H, W));
  constexpr double amplitude = 0.3;

  std::vector<double> phase(K), freq(K), cos_t(K), sin_t(K);
  Rng trng(hash_seed({seed, hash_label("synthetic-templates")}));
  for (std::size_t k = 0; k < K; ++k) {
    const double theta = std::numbers::pi * static_cast<double>(k) / static_cast<double>(K);
    cos_t[k] = std::cos(theta);
    sin_t[k] = std::sin(theta);
    freq[k] = 1.5 + static_cast<double>(k % 3);
    phase[k] = trng.uniform(0.0, 2.0 * std::numbers::pi);
  }

  const auto M = K * static_cast<std::size_t>(per_class);
  Dataset d;
  d.name = "synthetic";
  d.num_classes = num_classes;
  d.images = Tensor({M, C, H, W});
  d.labels.resize(M);
  Rng rng(hash_seed({seed, hash_label("synthetic-samples"), stream}));
  for (std::size_t i = 0; i < M; ++i) {
    const auto k = i % K;
    d.labels[i] = static_cast<int>(k);
    const double jitter = difficulty > 0.0 ? rng.uniform(-1.0, 1.0) * std::numbers::pi * difficulty : 0.0;
    double *img = d.images.data() + i * C * H * W;
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
          const double u = (static_cast<double>(x) * cos_t[k] + static_cast<double>(y) * sin_t[k]) / extent;
          double v = 0.5 + amplitude * std::sin(2.0 * std::numbers::pi * freq[k] * u + phase[k] + jitter +
                                                static_cast<double>(c) * std::numbers::pi / 3.0);
          if (difficulty > 0.0) v += amplitude * difficulty * rng.normal();
          img[(c * H + y) * W + x] = std::clamp(v, 0.0, 1.0);
        }
      }
    }
  }
  return d;
}

} // namespace splitee::data
