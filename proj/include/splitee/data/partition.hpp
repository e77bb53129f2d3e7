#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"
#include "splitee/error.hpp"
#include "splitee/rng.hpp"

namespace splitee::data {

/// Sample indices per client; clients[i] belongs to client id i+1.
struct Partition {
  std::vector<std::vector<std::size_t>> clients;

  std::size_t num_clients() const { return clients.size(); }
};

/// Seeded shuffle of [0, M) followed by contiguous striping. The first M mod N
/// clients receive one extra sample.
inline Partition iid_partition(std::size_t samples, std::size_t clients, std::uint64_t seed) {
  if (clients < 1) throw config_error("partition needs at least one client");
  if (samples < clients)
    throw config_error("cannot partition " + std::to_string(samples) + " samples across " + std::to_string(clients) +
                       " clients");
  std::vector<std::size_t> order(samples);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(hash_seed({seed, hash_label("partition")}));
  rng.shuffle(order.begin(), order.end());
  Partition p;
  const auto base = samples / clients, extra = samples % clients;
  std::size_t at = 0;
  for (std::size_t i = 0; i < clients; ++i) {
    const auto n = base + (i < extra ? 1 : 0);
    p.clients.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(at),
                           order.begin() + static_cast<std::ptrdiff_t>(at + n));
    at += n;
  }
  return p;
}

inline nlohmann::json to_json(const Partition &p) {
  nlohmann::json clients = nlohmann::json::array();
  for (std::size_t i = 0; i < p.clients.size(); ++i)
    clients.push_back({{"client_id", i + 1}, {"size", p.clients[i].size()}, {"indices", p.clients[i]}});
  return {{"num_clients", p.clients.size()}, {"clients", clients}};
}

} // namespace splitee::data
