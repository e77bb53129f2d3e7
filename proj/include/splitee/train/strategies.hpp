#pragma once

#include <algorithm>
#include <chrono>
#include <functional>
#include <numeric>
#include <set>
#include <vector>

#include "splitee/data/partition.hpp"
#include "splitee/train/aggregate.hpp"
#include "splitee/train/log.hpp"
#include "splitee/train/steps.hpp"
#include "splitee/train/workers.hpp"

namespace splitee::train {

struct TrainData {
  const data::Dataset *train = nullptr;
  const data::Dataset *test = nullptr;
  data::AugmentConfig augment; // normalization is applied on both splits
};

struct TrainResult {
  Strategy strategy = Strategy::averaging;
  model::BaseNetworkSpec spec;
  std::uint64_t seed = 0;
  std::vector<int> ids; // client ids; for centralized, one pipeline per distinct end layer
  std::vector<int> end_layers;
  std::vector<model::ClientModel> clients;
  std::vector<model::ServerModel> servers; // sequential: one shared server
  std::vector<RoundLog> logs;
  Counters counters;

  const model::ServerModel &server_of(std::size_t i) const {
    return strategy == Strategy::sequential ? servers.front() : servers.at(i);
  }
};

using RoundCallback = std::function<void(const RoundLog &)>;

namespace detail {

using Clock = std::chrono::steady_clock;

inline void check_data(const TrainData &d, const model::BaseNetworkSpec &spec) {
  if (!d.train || !d.test) throw config_error("training needs both a train and a test split");
  d.train->validate();
  d.test->validate();
  for (const auto *ds : {d.train, d.test}) {
    if (Shape{ds->channels(), ds->height(), ds->width()} != spec.input_shape())
      throw config_error("dataset '" + ds->name + "' has samples " +
                         shape_str({ds->channels(), ds->height(), ds->width()}) + " but the network expects " +
                         shape_str(spec.input_shape()));
    if (ds->num_classes != spec.num_classes)
      throw config_error("dataset '" + ds->name + "' has " + std::to_string(ds->num_classes) +
                         " classes but the network has " + std::to_string(spec.num_classes));
  }
}

inline bool eval_due(const TrainConfig &cfg, int round) {
  return (round + 1) % cfg.eval_every == 0 || round + 1 == cfg.rounds;
}

inline void evaluate_round(const TrainResult &r, const TrainConfig &cfg, const TrainData &data, RoundLog &log) {
  parallel_for(r.clients.size(), cfg.workers, [&](std::size_t i) {
    const auto p = predict_paths(r.clients[i], r.server_of(i), *data.test, data.augment.norm, cfg.eval_batch,
                                 cfg.eval_limit);
    log.clients[i].client_accuracy = accuracy(p.client, p.labels);
    log.clients[i].server_accuracy = accuracy(p.server, p.labels);
  });
}

inline void finish_round(TrainResult &r, const TrainConfig &cfg, const TrainData &data, RoundLog &log,
                         Clock::time_point started, const RoundCallback &cb) {
  if (eval_due(cfg, log.round - 1)) evaluate_round(r, cfg, data, log);
  log.counters = r.counters;
  log.wall_seconds = std::chrono::duration<double>(Clock::now() - started).count();
  r.logs.push_back(log);
  if (cb) cb(r.logs.back());
}

inline std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

/// Independent client/server pairs (averaging, distributed, centralized).
/// Pair i trains on partitions[i] with the data streams of streams[i].
inline TrainResult run_pairs(Strategy strategy, const TrainConfig &cfg, const model::BaseNetworkSpec &spec,
                             const TrainData &data, std::vector<int> ids, std::vector<int> end_layers,
                             std::vector<int> streams, std::vector<std::vector<std::size_t>> partitions,
                             bool aggregate, bool count_features, const RoundCallback &cb) {
  TrainResult r;
  r.strategy = strategy;
  r.spec = spec;
  r.seed = cfg.seed;
  r.ids = std::move(ids);
  r.end_layers = std::move(end_layers);
  {
    const auto base = model::build_base(spec, cfg.seed);
    for (int l : r.end_layers) {
      auto [c, s] = model::split(base, l);
      r.clients.push_back(std::move(c));
      r.servers.push_back(std::move(s));
    }
  }
  const auto n = r.clients.size();
  for (int t = 0; t < cfg.rounds; ++t) {
    const auto started = Clock::now();
    RoundLog log;
    log.round = t + 1;
    log.lr = nn::cosine_lr(cfg.schedule, t);
    log.server_lr = log.lr;
    log.clients.resize(n);
    std::vector<Counters> traffic(n);
    parallel_for(n, cfg.workers, [&](std::size_t i) {
      auto &st = log.clients[i];
      st.client_id = r.ids[i];
      st.end_layer = r.end_layers[i];
      const auto plan = plan_batches(partitions[i], cfg, streams[i], t);
      auto aug = augment_stream(cfg, streams[i], t);
      double closs = 0.0, sloss = 0.0;
      for (std::size_t b = 0; b < plan.size(); ++b) {
        const auto x = data::make_batch(*data.train, plan[b], data.augment, &aug);
        double cl = 0.0;
        auto fb = client_step(r.clients[i], x, data::gather_labels(*data.train, plan[b]), log.lr, r.ids[i], t, cl);
        fb.arrival_seq = b;
        closs += cl;
        if (count_features) {
          traffic[i].feature_messages += 1;
          traffic[i].feature_bytes += fb.wire_bytes();
        }
        sloss += server_step(r.servers[i], fb, log.server_lr, cfg.server_updates, t);
      }
      st.batches = plan.size();
      const double nb = static_cast<double>(std::max<std::size_t>(1, plan.size()));
      st.client_loss = closs / nb;
      st.server_loss = sloss / nb;
    });
    for (const auto &c : traffic) r.counters += c;
    if (aggregate) {
      std::vector<model::ServerModel *> ptrs;
      for (auto &s : r.servers) ptrs.push_back(&s);
      r.counters += cross_layer_aggregate(ptrs, r.end_layers, cfg.aggregate_buffers);
    }
    finish_round(r, cfg, data, log, started, cb);
  }
  return r;
}

inline std::vector<int> client_ids(std::size_t n) {
  std::vector<int> ids(n);
  std::iota(ids.begin(), ids.end(), 1);
  return ids;
}

} // namespace detail

/// Every client pairs with its own server replica; after each round the
/// replicas are averaged layer by layer across the clients that hold them.
inline TrainResult run_averaging(const TrainConfig &cfg, const model::BaseNetworkSpec &spec, const TrainData &data,
                                 const RoundCallback &cb = {}) {
  cfg.validate(spec);
  detail::check_data(data, spec);
  const auto part = data::iid_partition(data.train->size(), cfg.num_clients(), cfg.seed);
  const auto ids = detail::client_ids(cfg.num_clients());
  return detail::run_pairs(Strategy::averaging, cfg, spec, data, ids, cfg.end_layers, ids, part.clients, cfg.aggregate,
                           true, cb);
}

/// Averaging without any aggregation: clients share nothing.
inline TrainResult run_distributed(const TrainConfig &cfg, const model::BaseNetworkSpec &spec, const TrainData &data,
                                   const RoundCallback &cb = {}) {
  cfg.validate(spec);
  detail::check_data(data, spec);
  const auto part = data::iid_partition(data.train->size(), cfg.num_clients(), cfg.seed);
  const auto ids = detail::client_ids(cfg.num_clients());
  return detail::run_pairs(Strategy::distributed, cfg, spec, data, ids, cfg.end_layers, ids, part.clients, false, true,
                           cb);
}

/// One actor trains the whole network with both heads on all training data,
/// once per distinct end layer. Every pipeline draws the data streams of
/// client 1, so a single-client distributed run is the same computation.
inline TrainResult run_centralized(const TrainConfig &cfg, const model::BaseNetworkSpec &spec, const TrainData &data,
                                   const RoundCallback &cb = {}) {
  cfg.validate(spec);
  detail::check_data(data, spec);
  const std::set<int> distinct(cfg.end_layers.begin(), cfg.end_layers.end());
  const std::vector<int> layers(distinct.begin(), distinct.end());
  const auto all = data::iid_partition(data.train->size(), 1, cfg.seed).clients.front();
  return detail::run_pairs(Strategy::centralized, cfg, spec, data, detail::client_ids(layers.size()), layers,
                           std::vector<int>(layers.size(), 1), std::vector(layers.size(), all), false, false, cb);
}

/// Clients train their own layers and send features to one shared server,
/// which consumes batches in arrival order. Features of client i enter the
/// server at layer l_i + 1, so the server spans min(l_i)+1..L. Arrival order
/// is round-robin over clients at batch granularity, with the client order
/// permuted every round from the seed.
inline TrainResult run_sequential(const TrainConfig &cfg, const model::BaseNetworkSpec &spec, const TrainData &data,
                                  const RoundCallback &cb = {}) {
  cfg.validate(spec);
  detail::check_data(data, spec);
  const auto part = data::iid_partition(data.train->size(), cfg.num_clients(), cfg.seed);
  const auto n = cfg.num_clients();
  TrainResult r;
  r.strategy = Strategy::sequential;
  r.spec = spec;
  r.seed = cfg.seed;
  r.ids = detail::client_ids(n);
  r.end_layers = cfg.end_layers;
  {
    const auto base = model::build_base(spec, cfg.seed);
    const int lowest = *std::min_element(cfg.end_layers.begin(), cfg.end_layers.end());
    r.servers.push_back(model::split(base, lowest).second);
    for (int l : cfg.end_layers) r.clients.push_back(model::split(base, l).first);
  }
  auto &server = r.servers.front();
  std::uint64_t seq = 0;
  for (int t = 0; t < cfg.rounds; ++t) {
    const auto started = detail::Clock::now();
    RoundLog log;
    log.round = t + 1;
    log.lr = nn::cosine_lr(cfg.schedule, t);
    log.server_lr = log.lr / cfg.divisor();
    log.clients.resize(n);
    std::vector<std::vector<std::vector<std::size_t>>> plans(n);
    std::vector<Rng> aug;
    std::size_t waves = 0;
    for (std::size_t i = 0; i < n; ++i) {
      plans[i] = plan_batches(part.clients[i], cfg, r.ids[i], t);
      aug.push_back(augment_stream(cfg, r.ids[i], t));
      waves = std::max(waves, plans[i].size());
      log.clients[i].client_id = r.ids[i];
      log.clients[i].end_layer = r.end_layers[i];
      log.clients[i].batches = plans[i].size();
    }
    auto order = detail::all_indices(n);
    Rng arrival(hash_seed({cfg.seed, hash_label("arrival"), static_cast<std::uint64_t>(t)}));
    arrival.shuffle(order.begin(), order.end());
    for (auto i : order) log.arrival_order.push_back(r.ids[i]);

    std::vector<double> closs(n, 0.0), sloss(n, 0.0);
    for (std::size_t k = 0; k < waves; ++k) {
      std::vector<std::size_t> active;
      for (auto i : order)
        if (k < plans[i].size()) active.push_back(i);
      std::vector<FeatureBatch> produced(active.size());
      parallel_for(active.size(), cfg.workers, [&](std::size_t j) {
        const auto i = active[j];
        const auto x = data::make_batch(*data.train, plans[i][k], data.augment, &aug[i]);
        double cl = 0.0;
        produced[j] = client_step(r.clients[i], x, data::gather_labels(*data.train, plans[i][k]), log.lr, r.ids[i], t, cl);
        closs[i] += cl;
      });
      for (std::size_t j = 0; j < active.size(); ++j) {
        auto &fb = produced[j];
        fb.arrival_seq = seq++;
        r.counters.feature_messages += 1;
        r.counters.feature_bytes += fb.wire_bytes();
        sloss[active[j]] += server_step(server, fb, log.server_lr, cfg.server_updates, t);
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      const double nb = static_cast<double>(std::max<std::size_t>(1, plans[i].size()));
      log.clients[i].client_loss = closs[i] / nb;
      log.clients[i].server_loss = sloss[i] / nb;
    }
    detail::finish_round(r, cfg, data, log, started, cb);
  }
  return r;
}

inline TrainResult run(const TrainConfig &cfg, const model::BaseNetworkSpec &spec, const TrainData &data,
                       const RoundCallback &cb = {}) {
  switch (cfg.strategy) {
  case Strategy::sequential: return run_sequential(cfg, spec, data, cb);
  case Strategy::averaging: return run_averaging(cfg, spec, data, cb);
  case Strategy::centralized: return run_centralized(cfg, spec, data, cb);
  case Strategy::distributed: return run_distributed(cfg, spec, data, cb);
  }
  throw config_error("unknown strategy");
}

} // namespace splitee::train
