#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "splitee/error.hpp"
#include "splitee/nn/parameters.hpp"

namespace splitee::nn {

struct AdamState {
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;
  std::uint64_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  /// Zero moments shaped like `params`.
  static AdamState for_parameters(const ParameterSet &params) {
    AdamState s;
    for (const auto &[name, p] : params) {
      s.m.emplace(name, std::vector<double>(p.numel(), 0.0));
      s.v.emplace(name, std::vector<double>(p.numel(), 0.0));
    }
    return s;
  }
};

/// One bias-corrected Adam update over every tensor in `params`, reading each
/// tensor's grad. Every parameter must carry a gradient. A fresh state with no
/// moments is sized on its first step.
inline void adam_step(ParameterSet &params, AdamState &state, double lr) {
  if (state.t == 0 && state.m.empty() && state.v.empty()) {
    const auto sized = AdamState::for_parameters(params);
    state.m = sized.m;
    state.v = sized.v;
  }
  for (const auto &[name, p] : params) {
    if (!p.has_grad()) throw protocol_error("adam_step: parameter '" + name + "' has no gradient");
    auto mi = state.m.find(name);
    auto vi = state.v.find(name);
    if (mi == state.m.end() || vi == state.v.end())
      throw protocol_error("adam_step: no optimizer state for '" + name + "'");
    if (mi->second.size() != p.numel() || vi->second.size() != p.numel())
      throw invariant_error("adam_step: moment extent mismatch for '" + name + "'");
  }
  if (state.m.size() != params.size()) throw protocol_error("adam_step: optimizer state covers other parameters");

  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (auto &[name, p] : params) {
    auto &m = state.m.at(name);
    auto &v = state.v.at(name);
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double g = p.grad[i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p.values[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

} // namespace splitee::nn
