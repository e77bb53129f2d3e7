#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "splitee/model/split_model.hpp"
#include "splitee/train/log.hpp"

namespace splitee::train {

/// Indices i with end_layers[i] < l. Layer L+1 (the server head) belongs to
/// every client.
inline std::vector<std::size_t> aggregation_members(const std::vector<int> &end_layers, int l, int L) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < end_layers.size(); ++i)
    if (l == L + 1 || end_layers[i] < l) out.push_back(i);
  return out;
}

/// Layer l of a server replica; l = L+1 is the head.
inline model::LayerState &server_group(model::ServerModel &s, int l) {
  return l == s.spec.depth() + 1 ? s.head : s.layer(l);
}

namespace detail {

inline void average_set(std::vector<nn::ParameterSet *> sets, const std::string &what) {
  const auto &ref = *sets.front();
  for (const auto *s : sets) {
    if (s->size() != ref.size()) throw invariant_error(what + ": replicas hold different tensor sets");
    for (auto a = s->begin(), b = ref.begin(); a != s->end(); ++a, ++b)
      if (a->first != b->first || a->second.shape != b->second.shape)
        throw invariant_error(what + ": tensor '" + a->first + "' does not align with '" + b->first + "'");
  }
  const double n = static_cast<double>(sets.size());
  for (const auto &[name, t0] : ref) {
    const auto count = t0.numel();
    std::vector<double> mean(count);
    // Shifted sum over members in ascending client order: exact on consensus.
    for (std::size_t k = 0; k < count; ++k) {
      const double base = sets.front()->at(name)[k];
      double s = 0.0;
      for (const auto *set : sets) s += set->at(name)[k] - base;
      mean[k] = base + s / n;
    }
    for (auto *set : sets) set->at(name).values = mean;
  }
}

} // namespace detail

/// Replaces every parameter of layer l, in all replicas of C_l, by the mean
/// over C_l. Running statistics are averaged too when `buffers` is set;
/// optimizer moments stay per replica. Returns the traffic this would cost.
inline Counters cross_layer_aggregate(std::vector<model::ServerModel *> servers, const std::vector<int> &end_layers,
                                      bool average_buffers = true) {
  if (servers.size() != end_layers.size())
    throw invariant_error("aggregation: " + std::to_string(servers.size()) + " servers for " +
                          std::to_string(end_layers.size()) + " clients");
  Counters traffic;
  if (servers.empty()) return traffic;
  const int L = servers.front()->spec.depth();
  for (std::size_t i = 0; i < servers.size(); ++i)
    if (servers[i]->first_layer != end_layers[i] + 1)
      throw invariant_error("aggregation: server " + std::to_string(i + 1) + " starts at layer " +
                            std::to_string(servers[i]->first_layer) + " but its client ends at " +
                            std::to_string(end_layers[i]));
  for (int l = 1; l <= L + 1; ++l) {
    const auto members = aggregation_members(end_layers, l, L);
    if (members.size() < 2) continue;
    std::vector<nn::ParameterSet *> params, buffers;
    for (auto i : members) {
      auto &g = server_group(*servers[i], l);
      params.push_back(&g.params);
      buffers.push_back(&g.buffers);
    }
    const std::string what = "aggregation of layer " + std::to_string(l);
    detail::average_set(params, what);
    if (average_buffers) detail::average_set(buffers, what);
    const auto bytes = 8 * (params.front()->total_numel() + (average_buffers ? buffers.front()->total_numel() : 0));
    traffic.aggregation_messages += 2 * members.size();
    traffic.aggregation_bytes += 2 * members.size() * bytes;
  }
  return traffic;
}

} // namespace splitee::train
