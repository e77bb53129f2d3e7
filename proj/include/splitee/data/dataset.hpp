#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "splitee/error.hpp"
#include "splitee/tensor.hpp"

namespace splitee::data {

/// Images in [0,1] with integer labels in [0, num_classes).
struct Dataset {
  std::string name;
  Tensor images; // M x C x H x W
  std::vector<int> labels;
  int num_classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t channels() const { return images.dim(1); }
  std::size_t height() const { return images.dim(2); }
  std::size_t width() const { return images.dim(3); }
  std::size_t sample_numel() const { return images.numel() / images.dim(0); }

  const double *sample(std::size_t i) const { return images.data() + i * sample_numel(); }

  void validate() const {
    require_rank(images, 4, "dataset images");
    if (labels.empty()) throw config_error("dataset '" + name + "' is empty");
    if (images.dim(0) != labels.size())
      throw dimension_error("dataset '" + name + "': " + std::to_string(images.dim(0)) + " images but " +
                            std::to_string(labels.size()) + " labels");
    if (num_classes < 2) throw config_error("dataset '" + name + "' needs at least 2 classes");
    for (int y : labels)
      if (y < 0 || y >= num_classes)
        throw config_error("dataset '" + name + "': label " + std::to_string(y) + " outside [0," +
                           std::to_string(num_classes) + ")");
  }
};

/// Per-channel mean and standard deviation.
struct Normalization {
  std::vector<double> mean;
  std::vector<double> std;
};

/// Statistics over every pixel of the given (training) split.
inline Normalization compute_normalization(const Dataset &d) {
  const auto C = d.channels(), HW = d.height() * d.width(), M = d.size();
  Normalization n{std::vector<double>(C, 0.0), std::vector<double>(C, 0.0)};
  const double count = static_cast<double>(M * HW);
  for (std::size_t c = 0; c < C; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < M; ++i) {
      const double *p = d.sample(i) + c * HW;
      for (std::size_t k = 0; k < HW; ++k) s += p[k];
    }
    const double mean = s / count;
    double sq = 0.0;
    for (std::size_t i = 0; i < M; ++i) {
      const double *p = d.sample(i) + c * HW;
      for (std::size_t k = 0; k < HW; ++k) sq += (p[k] - mean) * (p[k] - mean);
    }
    n.mean[c] = mean;
    const double sd = std::sqrt(sq / count);
    n.std[c] = sd > 1e-12 ? sd : 1.0;
  }
  return n;
}

} // namespace splitee::data
