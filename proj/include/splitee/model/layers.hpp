#pragma once

// Main layers of the base network (stem and residual stages) and the
// pool-flatten-linear output head. Parameters live in ParameterSets keyed by
// path; the functions here only know how to initialize and run them.

#include <cmath>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "splitee/model/spec.hpp"
#include "splitee/nn/ops.hpp"
#include "splitee/nn/parameters.hpp"
#include "splitee/rng.hpp"

namespace splitee::model {

using nn::Mode;
using nn::ParameterSet;

inline std::string layer_prefix(int l) { return "layer" + std::to_string(l) + "."; }

struct StemTrace {
  Tensor input;
  nn::BatchNormCache bn;
  Tensor relu_out;
  std::optional<nn::MaxPoolCache> pool;
};

struct BlockTrace {
  Tensor input;
  nn::BatchNormCache bn1;
  Tensor relu1_out;
  nn::BatchNormCache bn2;
  std::optional<nn::BatchNormCache> shortcut_bn;
  Tensor out;
};

using LayerTrace = std::variant<std::monostate, StemTrace, std::vector<BlockTrace>>;

struct HeadTrace {
  Shape pooled_from;
  Tensor flat;
};

namespace detail {

inline void init_conv(ParameterSet &params, const std::string &name, std::size_t out_c, std::size_t in_c,
                      std::size_t k, Rng &rng) {
  Tensor w({out_c, in_c, k, k});
  const double bound = std::sqrt(6.0 / static_cast<double>(in_c * k * k));
  for (auto &v : w.values) v = rng.uniform(-bound, bound);
  params.add(name, std::move(w));
}

inline void init_bn(ParameterSet &params, ParameterSet &buffers, const std::string &prefix, std::size_t c) {
  params.add(prefix + "weight", Tensor({c}, 1.0));
  params.add(prefix + "bias", Tensor({c}, 0.0));
  buffers.add(prefix + "running_mean", Tensor({c}, 0.0));
  buffers.add(prefix + "running_var", Tensor({c}, 1.0));
}

inline bool needs_shortcut(std::size_t in_c, std::size_t out_c, std::size_t stride) {
  return stride != 1 || in_c != out_c;
}

struct BufferAccess {
  const ParameterSet &read;
  ParameterSet *write; // non-null in train mode
};

inline Tensor bn_forward(const std::string &prefix, const ParameterSet &params, BufferAccess buf, const Tensor &x,
                         Mode mode, nn::BatchNormCache *cache) {
  const auto &g = params.at(prefix + "weight");
  const auto &b = params.at(prefix + "bias");
  if (mode == Mode::train) {
    if (!buf.write) throw protocol_error("train-mode forward needs writable running statistics");
    return nn::batchnorm2d_train(x, g, b, buf.write->at(prefix + "running_mean"), buf.write->at(prefix + "running_var"),
                                 cache);
  }
  return nn::batchnorm2d_eval(x, g, b, buf.read.at(prefix + "running_mean"), buf.read.at(prefix + "running_var"),
                              cache);
}

inline void add_inplace(Tensor &a, const Tensor &b) {
  if (a.shape != b.shape) throw dimension_error("residual add: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  for (std::size_t i = 0; i < a.numel(); ++i) a[i] += b[i];
}

} // namespace detail

/// Draws the parameters of main layer l in a fixed order.
inline void init_layer(const BaseNetworkSpec &spec, int l, ParameterSet &params, ParameterSet &buffers, Rng &rng) {
  const auto &ls = spec.layer(l);
  const auto prefix = layer_prefix(l);
  const auto in_c = static_cast<std::size_t>(spec.channels(l - 1));
  const auto out_c = static_cast<std::size_t>(spec.channels(l));
  if (ls.kind == LayerKind::stem) {
    detail::init_conv(params, prefix + "conv.weight", out_c, in_c, static_cast<std::size_t>(ls.kernel), rng);
    detail::init_bn(params, buffers, prefix + "bn.", out_c);
    return;
  }
  for (int b = 1; b <= ls.blocks; ++b) {
    const auto bp = prefix + "block" + std::to_string(b) + ".";
    const auto bin = b == 1 ? in_c : out_c;
    const auto stride = b == 1 ? static_cast<std::size_t>(ls.stride) : 1;
    detail::init_conv(params, bp + "conv1.weight", out_c, bin, 3, rng);
    detail::init_bn(params, buffers, bp + "bn1.", out_c);
    detail::init_conv(params, bp + "conv2.weight", out_c, out_c, 3, rng);
    detail::init_bn(params, buffers, bp + "bn2.", out_c);
    if (detail::needs_shortcut(bin, out_c, stride)) {
      detail::init_conv(params, bp + "shortcut.conv.weight", out_c, bin, 1, rng);
      detail::init_bn(params, buffers, bp + "shortcut.bn.", out_c);
    }
  }
}

/// Runs main layer l. In train mode `writable_buffers` receives the running
/// statistics updates and must refer to `buffers`.
inline Tensor layer_forward(const BaseNetworkSpec &spec, int l, const ParameterSet &params, const ParameterSet &buffers,
                            ParameterSet *writable_buffers, const Tensor &x, Mode mode, LayerTrace *trace) {
  const auto &ls = spec.layer(l);
  const auto prefix = layer_prefix(l);
  const detail::BufferAccess buf{buffers, writable_buffers};
  require_rank(x, 4, "layer input");
  if (x.dim(1) != static_cast<std::size_t>(spec.channels(l - 1)))
    throw dimension_error("layer " + std::to_string(l) + " expects " + std::to_string(spec.channels(l - 1)) +
                          " input channels, got " + shape_str(x.shape));

  if (ls.kind == LayerKind::stem) {
    StemTrace st;
    const auto k = static_cast<std::size_t>(ls.kernel);
    auto y = nn::conv2d_forward(x, params.at(prefix + "conv.weight"), static_cast<std::size_t>(ls.stride), k / 2);
    y = detail::bn_forward(prefix + "bn.", params, buf, y, mode, trace ? &st.bn : nullptr);
    y = nn::relu_forward(y);
    if (trace) {
      st.input = x;
      st.relu_out = y;
    }
    if (ls.max_pool) {
      nn::MaxPoolCache pc;
      y = nn::max_pool_forward(y, 3, 2, 1, trace ? &pc : nullptr);
      if (trace) st.pool = std::move(pc);
    }
    if (trace) *trace = std::move(st);
    return y;
  }

  std::vector<BlockTrace> blocks;
  Tensor cur = x;
  for (int b = 1; b <= ls.blocks; ++b) {
    const auto bp = prefix + "block" + std::to_string(b) + ".";
    const auto stride = b == 1 ? static_cast<std::size_t>(ls.stride) : 1;
    BlockTrace bt;
    auto y = nn::conv2d_forward(cur, params.at(bp + "conv1.weight"), stride, 1);
    y = detail::bn_forward(bp + "bn1.", params, buf, y, mode, trace ? &bt.bn1 : nullptr);
    y = nn::relu_forward(y);
    if (trace) bt.relu1_out = y;
    y = nn::conv2d_forward(y, params.at(bp + "conv2.weight"), 1, 1);
    y = detail::bn_forward(bp + "bn2.", params, buf, y, mode, trace ? &bt.bn2 : nullptr);
    if (params.contains(bp + "shortcut.conv.weight")) {
      auto s = nn::conv2d_forward(cur, params.at(bp + "shortcut.conv.weight"), stride, 0);
      nn::BatchNormCache sc;
      s = detail::bn_forward(bp + "shortcut.bn.", params, buf, s, mode, trace ? &sc : nullptr);
      if (trace) bt.shortcut_bn = std::move(sc);
      detail::add_inplace(y, s);
    } else {
      detail::add_inplace(y, cur);
    }
    y = nn::relu_forward(y);
    if (trace) {
      bt.input = std::move(cur);
      bt.out = y;
      blocks.push_back(std::move(bt));
    }
    cur = std::move(y);
  }
  if (trace) *trace = std::move(blocks);
  return cur;
}

/// Accumulates parameter gradients of layer l; returns the input gradient when
/// requested (otherwise an empty tensor).
inline Tensor layer_backward(const BaseNetworkSpec &spec, int l, ParameterSet &params, const LayerTrace &trace,
                             const Tensor &grad_out, bool need_input_grad) {
  const auto &ls = spec.layer(l);
  const auto prefix = layer_prefix(l);

  if (ls.kind == LayerKind::stem) {
    const auto *st = std::get_if<StemTrace>(&trace);
    if (!st) throw protocol_error("layer " + std::to_string(l) + ": backward without a stem trace");
    Tensor g = st->pool ? nn::max_pool_backward(*st->pool, grad_out) : grad_out;
    g = nn::relu_backward(st->relu_out, g);
    g = nn::batchnorm2d_backward(st->bn, params.at(prefix + "bn.weight"), params.at(prefix + "bn.bias"), g);
    const auto k = static_cast<std::size_t>(ls.kernel);
    return nn::conv2d_backward(st->input, params.at(prefix + "conv.weight"), static_cast<std::size_t>(ls.stride), k / 2,
                               g, need_input_grad);
  }

  const auto *blocks = std::get_if<std::vector<BlockTrace>>(&trace);
  if (!blocks || blocks->size() != static_cast<std::size_t>(ls.blocks))
    throw protocol_error("layer " + std::to_string(l) + ": backward without a matching stage trace");
  Tensor g = grad_out;
  for (int b = ls.blocks; b >= 1; --b) {
    const auto &bt = (*blocks)[static_cast<std::size_t>(b - 1)];
    const auto bp = prefix + "block" + std::to_string(b) + ".";
    const auto stride = b == 1 ? static_cast<std::size_t>(ls.stride) : 1;
    const bool want_gx = need_input_grad || b > 1;
    g = nn::relu_backward(bt.out, g);
    // main branch
    auto gm = nn::batchnorm2d_backward(bt.bn2, params.at(bp + "bn2.weight"), params.at(bp + "bn2.bias"), g);
    gm = nn::conv2d_backward(bt.relu1_out, params.at(bp + "conv2.weight"), 1, 1, gm);
    gm = nn::relu_backward(bt.relu1_out, gm);
    gm = nn::batchnorm2d_backward(bt.bn1, params.at(bp + "bn1.weight"), params.at(bp + "bn1.bias"), gm);
    gm = nn::conv2d_backward(bt.input, params.at(bp + "conv1.weight"), stride, 1, gm, want_gx);
    // shortcut branch
    Tensor gs;
    if (bt.shortcut_bn) {
      gs = nn::batchnorm2d_backward(*bt.shortcut_bn, params.at(bp + "shortcut.bn.weight"),
                                    params.at(bp + "shortcut.bn.bias"), g);
      gs = nn::conv2d_backward(bt.input, params.at(bp + "shortcut.conv.weight"), stride, 0, gs, want_gx);
    } else {
      gs = std::move(g);
    }
    if (!want_gx) return {};
    detail::add_inplace(gm, gs);
    g = std::move(gm);
  }
  return g;
}

// ---------------------------------------------------------------------------
// output head: global average pool -> flatten -> linear(K)

inline void init_head(const std::string &prefix, std::size_t in_channels, std::size_t num_classes,
                      ParameterSet &params, Rng &rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_channels));
  Tensor w({in_channels, num_classes});
  for (auto &v : w.values) v = rng.uniform(-bound, bound);
  Tensor b({num_classes});
  for (auto &v : b.values) v = rng.uniform(-bound, bound);
  params.add(prefix + "fc.weight", std::move(w));
  params.add(prefix + "fc.bias", std::move(b));
}

inline Tensor head_forward(const std::string &prefix, const ParameterSet &params, const Tensor &x, HeadTrace *trace) {
  require_rank(x, 4, "head input");
  const auto &w = params.at(prefix + "fc.weight");
  if (x.dim(1) != w.dim(0))
    throw dimension_error("output head expects " + std::to_string(w.dim(0)) + " channels, got " + shape_str(x.shape));
  auto flat = nn::flatten(nn::global_avg_pool_forward(x));
  auto y = nn::linear_forward(flat, w, params.at(prefix + "fc.bias"));
  if (trace) *trace = {x.shape, std::move(flat)};
  return y;
}

inline Tensor head_backward(const std::string &prefix, ParameterSet &params, const HeadTrace &trace,
                            const Tensor &grad_out, bool need_input_grad) {
  auto gflat = nn::linear_backward(trace.flat, params.at(prefix + "fc.weight"), params.at(prefix + "fc.bias"), grad_out,
                                   need_input_grad);
  if (!need_input_grad) return {};
  return nn::global_avg_pool_backward(trace.pooled_from, gflat);
}

} // namespace splitee::model
