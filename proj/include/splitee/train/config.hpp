#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "splitee/data/augment.hpp"
#include "splitee/error.hpp"
#include "splitee/model/spec.hpp"
#include "splitee/nn/cosine.hpp"

namespace splitee::train {

enum class Strategy { sequential, averaging, centralized, distributed };

inline std::string strategy_name(Strategy s) {
  switch (s) {
  case Strategy::sequential: return "sequential";
  case Strategy::averaging: return "averaging";
  case Strategy::centralized: return "centralized";
  case Strategy::distributed: return "distributed";
  }
  return "?";
}

inline Strategy parse_strategy(const std::string &s) {
  if (s == "sequential") return Strategy::sequential;
  if (s == "averaging") return Strategy::averaging;
  if (s == "centralized") return Strategy::centralized;
  if (s == "distributed") return Strategy::distributed;
  throw config_error("unknown strategy '" + s + "' (expected sequential, averaging, centralized or distributed)");
}

struct TrainConfig {
  Strategy strategy = Strategy::averaging;
  std::vector<int> end_layers; // one per client, client id = index + 1
  int rounds = 1;              // T
  int local_epochs = 1;        // E
  std::size_t batch_size = 32;
  nn::CosineSchedule schedule;
  double server_lr_divisor = 0.0; // sequential only; 0 means N
  std::uint64_t seed = 0;
  int workers = 1;

  // evaluation
  int eval_every = 1; // rounds between evaluations; the last round is always evaluated
  std::size_t eval_batch = 256;
  std::size_t eval_limit = 0; // test samples used, 0 = all

  // 0 = whole partition; otherwise at most this many batches per client per round
  std::size_t max_batches_per_round = 0;

  // switches for controlled experiments
  bool server_updates = true;
  bool aggregate = true;         // averaging only
  bool aggregate_buffers = true; // also average batch-norm running statistics

  std::size_t num_clients() const { return end_layers.size(); }

  double divisor() const {
    return server_lr_divisor > 0.0 ? server_lr_divisor : static_cast<double>(std::max<std::size_t>(1, num_clients()));
  }

  void validate(const model::BaseNetworkSpec &spec) const {
    if (end_layers.empty()) throw config_error("at least one client end layer is required");
    for (int l : end_layers)
      if (l < 1 || l > spec.depth())
        throw config_error("end layer " + std::to_string(l) + " outside [1," + std::to_string(spec.depth()) + "]");
    if (rounds < 1) throw config_error("rounds must be at least 1");
    if (local_epochs < 1) throw config_error("local epochs must be at least 1");
    if (batch_size < 2) throw config_error("batch size must be at least 2");
    if (server_lr_divisor < 0.0) throw config_error("server lr divisor must be positive");
    if (workers < 1) throw config_error("workers must be at least 1");
    if (eval_every < 1) throw config_error("eval_every must be at least 1");
    if (eval_batch < 1) throw config_error("eval batch must be at least 1");
    schedule.validate();
  }
};

} // namespace splitee::train
