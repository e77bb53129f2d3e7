#pragma once

#include <cmath>
#include <numbers>
#include <string>

#include "splitee/error.hpp"

namespace splitee::nn {

/// Per-epoch cosine annealing from lr_max to lr_min over t_max epochs,
/// optionally preceded by a linear warmup from lr_min.
struct CosineSchedule {
  double lr_max = 0.001;
  double lr_min = 1.0e-6;
  int t_max = 600;
  int warmup_epochs = 0;

  void validate() const {
    if (!(lr_min <= lr_max)) throw config_error("cosine schedule: lr_min must not exceed lr_max");
    if (!(lr_min >= 0.0)) throw config_error("cosine schedule: lr_min must be non-negative");
    if (t_max < 1) throw config_error("cosine schedule: t_max must be positive");
    if (warmup_epochs < 0 || warmup_epochs >= t_max)
      throw config_error("cosine schedule: warmup_epochs must be in [0, t_max)");
  }
};

/// Epochs past t_max clamp to lr_min.
inline double cosine_lr(const CosineSchedule &s, int epoch) {
  s.validate();
  if (epoch < 0) throw config_error("cosine_lr: negative epoch " + std::to_string(epoch));
  if (epoch >= s.t_max) return s.lr_min;
  if (epoch < s.warmup_epochs)
    return s.lr_min + (s.lr_max - s.lr_min) * static_cast<double>(epoch) / static_cast<double>(s.warmup_epochs);
  const double span = static_cast<double>(s.t_max - s.warmup_epochs);
  const double pos = static_cast<double>(epoch - s.warmup_epochs);
  return s.lr_min + 0.5 * (s.lr_max - s.lr_min) * (1.0 + std::cos(std::numbers::pi * pos / span));
}

} // namespace splitee::nn
