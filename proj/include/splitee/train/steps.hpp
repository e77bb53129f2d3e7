#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "splitee/data/augment.hpp"
#include "splitee/model/split_model.hpp"
#include "splitee/train/config.hpp"

namespace splitee::train {

/// Features sent from a client to the server. `h` is a plain value: nothing
/// links it back to the client's computation.
struct FeatureBatch {
  int client_id = 0;
  int cut = 0;
  Tensor h;
  std::vector<int> labels;
  std::uint64_t arrival_seq = 0;

  std::uint64_t wire_bytes() const { return 8 * h.numel() + 8 * labels.size(); }
};

/// Sample indices of every batch client `client_id` trains on in `round`
/// (0-based): E reshuffled passes over its partition, each cut into batches.
/// A trailing batch under two samples is dropped since batch statistics need
/// at least two values.
inline std::vector<std::vector<std::size_t>> plan_batches(const std::vector<std::size_t> &partition,
                                                          const TrainConfig &cfg, int client_id, int round) {
  std::vector<std::vector<std::size_t>> out;
  for (int e = 0; e < cfg.local_epochs; ++e) {
    auto order = partition;
    Rng rng(hash_seed({cfg.seed, hash_label("shuffle"), static_cast<std::uint64_t>(client_id),
                       static_cast<std::uint64_t>(round), static_cast<std::uint64_t>(e)}));
    rng.shuffle(order.begin(), order.end());
    for (std::size_t at = 0; at < order.size(); at += cfg.batch_size) {
      const auto end = std::min(order.size(), at + cfg.batch_size);
      if (end - at < 2) break;
      out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(at), order.begin() + static_cast<std::ptrdiff_t>(end));
    }
  }
  if (cfg.max_batches_per_round > 0 && out.size() > cfg.max_batches_per_round) out.resize(cfg.max_batches_per_round);
  return out;
}

inline Rng augment_stream(const TrainConfig &cfg, int client_id, int round) {
  return Rng(hash_seed({cfg.seed, hash_label("augment"), static_cast<std::uint64_t>(client_id),
                        static_cast<std::uint64_t>(round)}));
}

inline void check_loss(double loss, const std::string &where, int round, int client_id) {
  if (!std::isfinite(loss))
    throw numeric_error("non-finite " + where + " loss in round " + std::to_string(round + 1) + " at client " +
                        std::to_string(client_id));
}

inline void step_group(model::LayerState &ls, double lr) {
  nn::adam_step(ls.params, ls.adam, lr);
  ls.params.drop_grad();
}

/// Client forward, early-exit loss, backward through head and client layers,
/// Adam step. Returns the features for the server and writes the loss.
inline FeatureBatch client_step(model::ClientModel &c, const Tensor &x, std::vector<int> labels, double lr,
                                int client_id, int round, double &loss) {
  model::ClientTrace trace;
  auto out = model::client_forward(c, x, nn::Mode::train, &trace);
  const auto ce = nn::softmax_cross_entropy(out.logits, labels);
  check_loss(ce.loss, "client", round, client_id);
  loss = ce.loss;
  for (auto &ls : c.layers) ls.params.zero_grad();
  c.head.params.zero_grad();
  model::client_backward(c, trace, ce.grad_logits);
  for (auto &ls : c.layers) step_group(ls, lr);
  step_group(c.head, lr);
  return {client_id, c.end_layer, std::move(out.features), std::move(labels), 0};
}

/// Server forward from the batch's cut, loss, backward down to the cut and an
/// Adam step on the layers it reached. With `update` false only the loss is
/// computed (eval mode, nothing changes).
inline double server_step(model::ServerModel &s, const FeatureBatch &fb, double lr, bool update, int round) {
  if (!update) {
    const auto logits = model::server_forward(static_cast<const model::ServerModel &>(s), fb.h, fb.cut);
    const double loss = nn::softmax_cross_entropy(logits, fb.labels).loss;
    check_loss(loss, "server", round, fb.client_id);
    return loss;
  }
  model::ServerTrace trace;
  const auto logits = model::server_forward(s, fb.h, fb.cut, nn::Mode::train, &trace);
  const auto ce = nn::softmax_cross_entropy(logits, fb.labels);
  check_loss(ce.loss, "server", round, fb.client_id);
  const int L = s.spec.depth();
  for (int l = fb.cut + 1; l <= L; ++l) s.layer(l).params.zero_grad();
  s.head.params.zero_grad();
  model::server_backward(s, trace, ce.grad_logits);
  for (int l = fb.cut + 1; l <= L; ++l) step_group(s.layer(l), lr);
  step_group(s.head, lr);
  return ce.loss;
}

/// Client-head and server-path predictions for test samples.
struct PathPredictions {
  std::vector<int> labels;
  std::vector<int> client;
  std::vector<int> server;
  Tensor client_probs; // M x K softmax of the client head
};

inline PathPredictions predict_paths(const model::ClientModel &c, const model::ServerModel &s, const data::Dataset &test,
                                     const data::Normalization &norm, std::size_t batch, std::size_t limit) {
  const auto M = limit > 0 ? std::min(limit, test.size()) : test.size();
  const auto K = static_cast<std::size_t>(c.spec.num_classes);
  PathPredictions p;
  p.client_probs = Tensor({M, K});
  data::AugmentConfig cfg;
  cfg.enabled = false;
  cfg.norm = norm;
  std::vector<std::size_t> idx;
  for (std::size_t at = 0; at < M; at += batch) {
    idx.clear();
    for (std::size_t i = at; i < std::min(M, at + batch); ++i) idx.push_back(i);
    const auto x = data::make_batch(test, idx, cfg, nullptr);
    const auto out = model::client_forward(c, x);
    const auto probs = nn::softmax_rows(out.logits);
    std::copy(probs.values.begin(), probs.values.end(), p.client_probs.values.begin() + static_cast<std::ptrdiff_t>(at * K));
    const auto cp = nn::argmax_rows(out.logits);
    const auto sp = nn::argmax_rows(model::server_forward(s, out.features, c.end_layer));
    p.client.insert(p.client.end(), cp.begin(), cp.end());
    p.server.insert(p.server.end(), sp.begin(), sp.end());
    for (auto i : idx) p.labels.push_back(test.labels[i]);
  }
  return p;
}

inline double accuracy(const std::vector<int> &pred, const std::vector<int> &labels) {
  if (labels.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += pred[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

} // namespace splitee::train
