#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "splitee/error.hpp"

namespace splitee {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape &shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, std::size_t b) { return a * b; });
}

inline std::string shape_str(const Shape &shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major float64 array with an optional gradient of the same extent.
struct Tensor {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad; // empty when absent

  Tensor() = default;

  explicit Tensor(Shape s, double fill = 0.0) : shape(std::move(s)) {
    check_extents();
    values.assign(shape_numel(shape), fill);
  }

  Tensor(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
    check_extents();
    if (shape_numel(shape) != values.size())
      throw dimension_error("tensor of shape " + shape_str(shape) + " given " +
                            std::to_string(values.size()) + " values");
  }

  std::size_t numel() const { return values.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }

  bool has_grad() const { return !grad.empty(); }
  void zero_grad() { grad.assign(values.size(), 0.0); }
  void drop_grad() {
    grad.clear();
    grad.shrink_to_fit();
  }

  double *data() { return values.data(); }
  const double *data() const { return values.data(); }

  double &operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }

  /// Same values, new extents with equal element count.
  Tensor reshaped(Shape s) const {
    Tensor t;
    t.shape = std::move(s);
    t.check_extents();
    if (shape_numel(t.shape) != values.size())
      throw dimension_error("cannot reshape " + shape_str(shape) + " to " + shape_str(t.shape));
    t.values = values;
    return t;
  }

  bool all_finite() const {
    for (double v : values)
      if (!std::isfinite(v)) return false;
    return true;
  }

private:
  void check_extents() const {
    for (auto e : shape)
      if (e == 0) throw dimension_error("tensor extents must be positive, got " + shape_str(shape));
  }
};

inline void require_rank(const Tensor &t, std::size_t rank, std::string_view what) {
  if (t.rank() != rank)
    throw dimension_error(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                          shape_str(t.shape));
}

inline void require_finite(const Tensor &t, std::string_view what) {
  if (!t.all_finite()) throw numeric_error(std::string(what) + " contains non-finite values");
}

} // namespace splitee
