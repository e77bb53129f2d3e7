#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "splitee/model/layers.hpp"
#include "splitee/nn/adam.hpp"

namespace splitee::model {

inline const std::string kClientHead = "client_head.";
inline const std::string kServerHead = "server_head.";

/// Parameters, running statistics and optimizer state of one main layer or
/// output head. Heads use index L+1.
struct LayerState {
  int index = 0;
  ParameterSet params;
  ParameterSet buffers;
  nn::AdamState adam;

  void reset_optimizer() { adam = nn::AdamState{}; }
};

struct BaseModel {
  BaseNetworkSpec spec;
  std::uint64_t seed = 0;
  std::vector<LayerState> layers; // 1..L
  LayerState server_head;

  /// Every main-layer and server-head parameter in one set.
  ParameterSet all_parameters() const {
    ParameterSet out;
    for (const auto &ls : layers)
      for (const auto &[k, t] : ls.params) out.add(k, t);
    for (const auto &[k, t] : server_head.params) out.add(k, t);
    return out;
  }
};

/// Layers 1..end_layer plus the early-exit head.
struct ClientModel {
  BaseNetworkSpec spec;
  int end_layer = 1;
  std::vector<LayerState> layers;
  LayerState head;

  ParameterSet all_parameters() const {
    ParameterSet out;
    for (const auto &ls : layers)
      for (const auto &[k, t] : ls.params) out.add(k, t);
    for (const auto &[k, t] : head.params) out.add(k, t);
    return out;
  }
};

/// Layers first_layer..L plus the server head. A model built for cut l has
/// first_layer = l + 1; a shared server may accept any cut >= first_layer - 1.
struct ServerModel {
  BaseNetworkSpec spec;
  int first_layer = 1;
  std::vector<LayerState> layers;
  LayerState head;

  int lowest_cut() const { return first_layer - 1; }

  LayerState &layer(int l) { return layers.at(static_cast<std::size_t>(l - first_layer)); }
  const LayerState &layer(int l) const { return layers.at(static_cast<std::size_t>(l - first_layer)); }

  ParameterSet all_parameters() const {
    ParameterSet out;
    for (const auto &ls : layers)
      for (const auto &[k, t] : ls.params) out.add(k, t);
    for (const auto &[k, t] : head.params) out.add(k, t);
    return out;
  }
};

/// Deterministic initialization: main layers 1..L are drawn first, in order,
/// then the server head, all from one stream seeded by `seed`.
inline BaseModel build_base(const BaseNetworkSpec &spec, std::uint64_t seed) {
  spec.validate();
  BaseModel m;
  m.spec = spec;
  m.seed = seed;
  Rng rng(hash_seed({seed, hash_label("base")}));
  for (int l = 1; l <= spec.depth(); ++l) {
    LayerState ls;
    ls.index = l;
    init_layer(spec, l, ls.params, ls.buffers, rng);
    ls.reset_optimizer();
    m.layers.push_back(std::move(ls));
  }
  m.server_head.index = spec.depth() + 1;
  init_head(kServerHead, static_cast<std::size_t>(spec.channels(spec.depth())),
            static_cast<std::size_t>(spec.num_classes), m.server_head.params, rng);
  m.server_head.reset_optimizer();
  return m;
}

/// Client head for cut l. Clients with equal (seed, l) get identical heads.
inline LayerState make_client_head(const BaseNetworkSpec &spec, int end_layer, std::uint64_t seed) {
  LayerState head;
  head.index = spec.depth() + 1;
  Rng rng(hash_seed({seed, hash_label("client_head"), static_cast<std::uint64_t>(end_layer)}));
  init_head(kClientHead, static_cast<std::size_t>(spec.channels(end_layer)), static_cast<std::size_t>(spec.num_classes),
            head.params, rng);
  head.reset_optimizer();
  return head;
}

inline std::pair<ClientModel, ServerModel> split(const BaseModel &base, int end_layer) {
  const int L = base.spec.depth();
  if (end_layer < 1 || end_layer > L)
    throw config_error("end layer " + std::to_string(end_layer) + " outside [1," + std::to_string(L) + "]");
  ClientModel c;
  c.spec = base.spec;
  c.end_layer = end_layer;
  ServerModel s;
  s.spec = base.spec;
  s.first_layer = end_layer + 1;
  for (const auto &ls : base.layers) (ls.index <= end_layer ? c.layers : s.layers).push_back(ls);
  c.head = make_client_head(base.spec, end_layer, base.seed);
  s.head = base.server_head;
  return {std::move(c), std::move(s)};
}

// ---------------------------------------------------------------------------
// forward / backward

struct ClientTrace {
  std::vector<LayerTrace> layers;
  HeadTrace head;
};

struct ServerTrace {
  int cut = 0;
  std::vector<LayerTrace> layers; // layers cut+1..L
  HeadTrace head;
};

struct ClientOutput {
  Tensor features; // h, output of the end layer
  Tensor logits;   // early-exit head
};

namespace detail {

inline void check_batch_shape(const Tensor &x, const Shape &sample, const std::string &what) {
  require_rank(x, 4, what);
  if (Shape{x.dim(1), x.dim(2), x.dim(3)} != sample)
    throw dimension_error(what + ": expected per-sample extents " + shape_str(sample) + ", got " + shape_str(x.shape));
}

} // namespace detail

inline ClientOutput client_forward_impl(ClientModel *writable, const ClientModel &m, const Tensor &x, Mode mode,
                                        ClientTrace *trace) {
  detail::check_batch_shape(x, m.spec.input_shape(), "client input");
  if (trace) trace->layers.assign(m.layers.size(), {});
  Tensor h = x;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const auto &ls = m.layers[i];
    ParameterSet *wb = writable ? &writable->layers[i].buffers : nullptr;
    h = layer_forward(m.spec, ls.index, ls.params, ls.buffers, wb, h, mode, trace ? &trace->layers[i] : nullptr);
  }
  auto logits = head_forward(kClientHead, m.head.params, h, trace ? &trace->head : nullptr);
  return {std::move(h), std::move(logits)};
}

/// Eval mode.
inline ClientOutput client_forward(const ClientModel &m, const Tensor &x) {
  return client_forward_impl(nullptr, m, x, Mode::eval, nullptr);
}

inline ClientOutput client_forward(ClientModel &m, const Tensor &x, Mode mode, ClientTrace *trace = nullptr) {
  return client_forward_impl(&m, m, x, mode, trace);
}

inline Tensor server_forward_impl(ServerModel *writable, const ServerModel &s, const Tensor &h, int cut, Mode mode,
                                  ServerTrace *trace) {
  const int L = s.spec.depth();
  if (cut < s.lowest_cut() || cut > L)
    throw dimension_error("server spanning layers " + std::to_string(s.first_layer) + ".." + std::to_string(L) +
                          " cannot accept features cut at layer " + std::to_string(cut));
  detail::check_batch_shape(h, s.spec.feature_shape(cut), "server features for cut " + std::to_string(cut));
  if (trace) {
    trace->cut = cut;
    trace->layers.assign(static_cast<std::size_t>(L - cut), {});
  }
  Tensor y = h;
  for (int l = cut + 1; l <= L; ++l) {
    const auto &ls = s.layer(l);
    ParameterSet *wb = writable ? &writable->layer(l).buffers : nullptr;
    y = layer_forward(s.spec, l, ls.params, ls.buffers, wb, y, mode,
                      trace ? &trace->layers[static_cast<std::size_t>(l - cut - 1)] : nullptr);
  }
  return head_forward(kServerHead, s.head.params, y, trace ? &trace->head : nullptr);
}

/// Eval mode; `cut` defaults to the server's own cut.
inline Tensor server_forward(const ServerModel &s, const Tensor &h, int cut = -1) {
  return server_forward_impl(nullptr, s, h, cut < 0 ? s.lowest_cut() : cut, Mode::eval, nullptr);
}

inline Tensor server_forward(ServerModel &s, const Tensor &h, int cut, Mode mode, ServerTrace *trace = nullptr) {
  return server_forward_impl(&s, s, h, cut < 0 ? s.lowest_cut() : cut, mode, trace);
}

/// Backpropagates through the head and every client layer. No gradient is
/// produced for the input.
inline void client_backward(ClientModel &m, const ClientTrace &trace, const Tensor &grad_logits) {
  Tensor g = head_backward(kClientHead, m.head.params, trace.head, grad_logits, !m.layers.empty());
  for (std::size_t i = m.layers.size(); i-- > 0;)
    g = layer_backward(m.spec, m.layers[i].index, m.layers[i].params, trace.layers[i], g, i > 0);
}

/// Backpropagates through the server head and layers cut+1..L. The gradient
/// stops at the cut: nothing flows back toward the client.
inline void server_backward(ServerModel &s, const ServerTrace &trace, const Tensor &grad_logits) {
  const int L = s.spec.depth();
  Tensor g = head_backward(kServerHead, s.head.params, trace.head, grad_logits, trace.cut < L);
  for (int l = L; l > trace.cut; --l)
    g = layer_backward(s.spec, l, s.layer(l).params, trace.layers[static_cast<std::size_t>(l - trace.cut - 1)], g,
                       l > trace.cut + 1);
}

/// Eval-mode pass through the unsplit network: main layers 1..L then the
/// server head.
inline Tensor full_forward(const BaseModel &m, const Tensor &x) {
  detail::check_batch_shape(x, m.spec.input_shape(), "network input");
  Tensor y = x;
  for (const auto &ls : m.layers) y = layer_forward(m.spec, ls.index, ls.params, ls.buffers, nullptr, y, Mode::eval, nullptr);
  return head_forward(kServerHead, m.server_head.params, y, nullptr);
}

} // namespace splitee::model
