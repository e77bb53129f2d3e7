#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "json.hpp"

namespace splitee::train {

/// Communication accounting. Feature traffic is client to server; aggregation
/// traffic is the parameter exchange among server replicas of different
/// clients (upload plus broadcast per member and layer).
struct Counters {
  std::uint64_t feature_messages = 0;
  std::uint64_t feature_bytes = 0;
  std::uint64_t aggregation_messages = 0;
  std::uint64_t aggregation_bytes = 0;

  Counters &operator+=(const Counters &o) {
    feature_messages += o.feature_messages;
    feature_bytes += o.feature_bytes;
    aggregation_messages += o.aggregation_messages;
    aggregation_bytes += o.aggregation_bytes;
    return *this;
  }
  friend bool operator==(const Counters &, const Counters &) = default;
};

struct ClientRoundStats {
  int client_id = 0;
  int end_layer = 0;
  std::size_t batches = 0;
  double client_loss = 0.0; // mean over the round's batches
  double server_loss = 0.0;
  std::optional<double> client_accuracy; // set on evaluation rounds
  std::optional<double> server_accuracy;
};

/// One global round. Wall-clock time is kept out of the JSON form so logs of
/// identical runs compare byte for byte.
struct RoundLog {
  int round = 0; // 1-based
  double lr = 0.0;
  double server_lr = 0.0;
  std::vector<ClientRoundStats> clients;
  std::vector<int> arrival_order; // sequential: client ids in the round's arrival order
  Counters counters;              // cumulative
  double wall_seconds = 0.0;
};

inline nlohmann::json to_json(const Counters &c) {
  return {{"feature_messages", c.feature_messages},
          {"feature_bytes", c.feature_bytes},
          {"aggregation_messages", c.aggregation_messages},
          {"aggregation_bytes", c.aggregation_bytes}};
}

inline nlohmann::json to_json(const RoundLog &r) {
  nlohmann::json clients = nlohmann::json::array();
  auto opt = [](const std::optional<double> &v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  for (const auto &c : r.clients)
    clients.push_back({{"client_id", c.client_id},
                       {"end_layer", c.end_layer},
                       {"batches", c.batches},
                       {"client_loss", c.client_loss},
                       {"server_loss", c.server_loss},
                       {"client_accuracy", opt(c.client_accuracy)},
                       {"server_accuracy", opt(c.server_accuracy)}});
  nlohmann::json j = {{"round", r.round}, {"lr", r.lr}, {"server_lr", r.server_lr}, {"clients", clients},
                      {"counters", to_json(r.counters)}};
  if (!r.arrival_order.empty()) j["arrival_order"] = r.arrival_order;
  return j;
}

} // namespace splitee::train
