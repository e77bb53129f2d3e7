#include <gtest/gtest.h>

#include <cmath>

#include "splitee/data/synthetic.hpp"
#include "splitee/model/checkpoint.hpp"
#include "splitee/train/strategies.hpp"
#include "support/oracles.hpp"

using namespace splitee;
using namespace splitee::train;

namespace {

struct Fixture {
  data::Dataset train, test;
  model::BaseNetworkSpec spec;
  TrainData td;

  Fixture(int K = 3, int per_class = 24, int depth = 4) {
    train = data::synth_make(K, per_class, 1, 8, 8, 0.5, 5, 0);
    test = data::synth_make(K, 8, 1, 8, 8, 0.5, 5, 1);
    spec = model::resnet18_spec(depth, K, 1, 8, 8, {1, 16});
    td.train = &train;
    td.test = &test;
    td.augment.norm = data::compute_normalization(train);
  }
};

TrainConfig small_config(Strategy s, std::vector<int> layers, int rounds = 2) {
  TrainConfig c;
  c.strategy = s;
  c.end_layers = std::move(layers);
  c.rounds = rounds;
  c.batch_size = 8;
  c.schedule.t_max = rounds;
  c.seed = 17;
  return c;
}

std::string param_bytes(const nn::ParameterSet &p) {
  Container c;
  for (const auto &[k, t] : p) c.tensors.emplace(k, Tensor(t.shape, t.values));
  return encode_container(c);
}

std::string client_bytes(const model::ClientModel &c) {
  nn::ParameterSet all;
  for (const auto &ls : c.layers) {
    for (const auto &[k, t] : ls.params) all.add(k, t);
    for (const auto &[k, t] : ls.buffers) all.add("buffer." + k, t);
  }
  for (const auto &[k, t] : c.head.params) all.add(k, t);
  return param_bytes(all);
}

std::string server_bytes(const model::ServerModel &s) {
  nn::ParameterSet all;
  for (const auto &ls : s.layers) {
    for (const auto &[k, t] : ls.params) all.add(k, t);
    for (const auto &[k, t] : ls.buffers) all.add("buffer." + k, t);
  }
  for (const auto &[k, t] : s.head.params) all.add(k, t);
  return param_bytes(all);
}

std::string log_text(const TrainResult &r) {
  std::string out;
  for (const auto &l : r.logs) out += to_json(l).dump() + "\n";
  return out;
}

std::string everything(const TrainResult &r) {
  std::string out = log_text(r);
  for (std::size_t i = 0; i < r.clients.size(); ++i)
    out += encode_container(model::to_container({r.spec, r.seed, r.clients[i], r.server_of(i), {}}));
  return out;
}

std::vector<model::ServerModel> random_servers(const std::vector<int> &layers, int L, Rng &rng) {
  const auto spec = model::resnet18_spec(L, 3, 1, 8, 8, {1, 16});
  const auto base = model::build_base(spec, 1);
  std::vector<model::ServerModel> out;
  for (int l : layers) {
    auto s = model::split(base, l).second;
    for (auto &ls : s.layers) {
      for (auto &[_, t] : ls.params) t = oracle::random_tensor(t.shape, rng);
      for (auto &[_, t] : ls.buffers) t = oracle::random_tensor(t.shape, rng, 0.1, 2.0);
    }
    for (auto &[_, t] : s.head.params) t = oracle::random_tensor(t.shape, rng);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<model::ServerModel *> pointers(std::vector<model::ServerModel> &v) {
  std::vector<model::ServerModel *> p;
  for (auto &s : v) p.push_back(&s);
  return p;
}

} // namespace

TEST(Aggregation, TwoPointMean) {
  const std::vector<int> layers{1, 1};
  Rng rng(1);
  auto servers = random_servers(layers, 2, rng);
  servers[0].layer(2).params.at("layer2.block1.conv1.weight")[0] = 0.2;
  servers[1].layer(2).params.at("layer2.block1.conv1.weight")[0] = 0.4;
  cross_layer_aggregate(pointers(servers), layers);
  EXPECT_NEAR(servers[0].layer(2).params.at("layer2.block1.conv1.weight")[0], 0.3, 1e-16);
  EXPECT_EQ(servers[1].layer(2).params.at("layer2.block1.conv1.weight")[0],
            servers[0].layer(2).params.at("layer2.block1.conv1.weight")[0]);
}

TEST(Aggregation, Membership) {
  const std::vector<int> layers{3, 3, 4, 5};
  EXPECT_TRUE(aggregation_members(layers, 3, 6).empty());
  EXPECT_EQ(aggregation_members(layers, 4, 6), (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(aggregation_members(layers, 5, 6), (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(aggregation_members(layers, 6, 6), (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_EQ(aggregation_members(layers, 7, 6).size(), 4u);
  std::size_t prev = 0;
  for (int l = 1; l <= 7; ++l) {
    EXPECT_GE(aggregation_members(layers, l, 6).size(), prev);
    prev = aggregation_members(layers, l, 6).size();
  }
}

TEST(Aggregation, MatchesPerScalarMeanAndLeavesOthersAlone) {
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const int L = 2 + static_cast<int>(rng.below(3));
    std::vector<int> layers(2 + rng.below(3));
    for (auto &l : layers) l = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(L)));
    auto servers = random_servers(layers, L, rng);
    const auto before = servers;
    cross_layer_aggregate(pointers(servers), layers);
    for (int l = 1; l <= L + 1; ++l) {
      std::vector<std::size_t> members;
      for (std::size_t i = 0; i < layers.size(); ++i)
        if (l == L + 1 || layers[i] < l) members.push_back(i);
      for (std::size_t i = 0; i < layers.size(); ++i) {
        if (l <= layers[i]) continue; // replica i does not hold layer l
        const auto &got = l == L + 1 ? servers[i].head : servers[i].layer(l);
        const auto &was = l == L + 1 ? before[i].head : before[i].layer(l);
        for (const auto &[name, t] : got.params) {
          for (std::size_t k = 0; k < t.numel(); ++k) {
            double s = 0.0;
            for (auto m : members) s += (l == L + 1 ? before[m].head : before[m].layer(l)).params.at(name)[k];
            const double want = members.size() > 1 ? s / static_cast<double>(members.size()) : was.params.at(name)[k];
            ASSERT_NEAR(t[k], want, 1e-15) << name;
          }
        }
      }
    }
  }
}

TEST(Aggregation, ConsensusIsFixedPoint) {
  const std::vector<int> layers{1, 2, 2};
  Rng rng(3);
  auto servers = random_servers({1}, 4, rng);
  auto full = servers.front();
  std::vector<model::ServerModel> same;
  same.push_back(full);
  for (int i = 0; i < 2; ++i) {
    auto s = full;
    s.layers.erase(s.layers.begin());
    s.first_layer = 3;
    same.push_back(s);
  }
  const auto before = same;
  cross_layer_aggregate(pointers(same), layers);
  for (std::size_t i = 0; i < same.size(); ++i) EXPECT_EQ(server_bytes(same[i]), server_bytes(before[i]));
}

TEST(Aggregation, RejectsMisalignedReplicas) {
  std::vector<int> layers{1, 1};
  Rng rng(4);
  auto servers = random_servers(layers, 3, rng);
  servers[1].head.params.at("server_head.fc.bias") = Tensor({7}, 0.0);
  EXPECT_THROW(cross_layer_aggregate(pointers(servers), layers), invariant_error);
  auto other = random_servers({1, 2}, 3, rng);
  EXPECT_THROW(cross_layer_aggregate(pointers(other), layers), invariant_error);
}

TEST(Aggregation, SingleClientIsIdentity) {
  Rng rng(5);
  auto servers = random_servers({2}, 4, rng);
  const auto before = server_bytes(servers[0]);
  const auto traffic = cross_layer_aggregate(pointers(servers), {2});
  EXPECT_EQ(server_bytes(servers[0]), before);
  EXPECT_EQ(traffic.aggregation_messages, 0u);
}

TEST(Training, LogsEveryRound) {
  Fixture f;
  auto cfg = small_config(Strategy::averaging, {1, 2, 3}, 3);
  std::vector<int> seen;
  const auto r = run(cfg, f.spec, f.td, [&](const RoundLog &l) { seen.push_back(l.round); });
  EXPECT_EQ(seen, (std::vector<int>{1, 2, 3}));
  ASSERT_EQ(r.logs.size(), 3u);
  for (const auto &l : r.logs) {
    ASSERT_EQ(l.clients.size(), 3u);
    for (const auto &c : l.clients) {
      EXPECT_TRUE(std::isfinite(c.client_loss));
      EXPECT_TRUE(std::isfinite(c.server_loss));
      ASSERT_TRUE(c.client_accuracy && c.server_accuracy);
      EXPECT_GE(*c.server_accuracy, 0.0);
      EXPECT_LE(*c.server_accuracy, 1.0);
    }
  }
  EXPECT_EQ(r.logs.front().lr, 0.001);
  EXPECT_GT(r.counters.feature_messages, 0u);
  EXPECT_GT(r.counters.aggregation_messages, 0u);
}

TEST(Training, EvalCadence) {
  Fixture f;
  auto cfg = small_config(Strategy::distributed, {2}, 3);
  cfg.eval_every = 2;
  const auto r = run(cfg, f.spec, f.td);
  EXPECT_FALSE(r.logs[0].clients[0].client_accuracy.has_value());
  EXPECT_TRUE(r.logs[1].clients[0].client_accuracy.has_value());
  EXPECT_TRUE(r.logs[2].clients[0].client_accuracy.has_value());
}

TEST(Training, SequentialServerIgnoresNothingItDoesNotOwn) {
  Fixture f;
  const auto r = run_sequential(small_config(Strategy::sequential, {2, 1, 3}), f.spec, f.td);
  ASSERT_EQ(r.servers.size(), 1u);
  EXPECT_EQ(r.servers[0].first_layer, 2);
  EXPECT_EQ(r.counters.aggregation_messages, 0u);
  EXPECT_DOUBLE_EQ(r.logs[0].server_lr, r.logs[0].lr / 3.0);
  auto order = r.logs[0].arrival_order;
  std::sort(order.begin(), order.end());
  EXPECT_EQ(order, (std::vector<int>{1, 2, 3}));
}

TEST(Training, ServerUpdatesNeverTouchClients) {
  Fixture f;
  for (auto s : {Strategy::sequential, Strategy::averaging}) {
    auto on = small_config(s, {1, 2, 2});
    auto off = on;
    off.server_updates = false;
    const auto a = run(on, f.spec, f.td), b = run(off, f.spec, f.td);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(client_bytes(a.clients[i]), client_bytes(b.clients[i]));
    EXPECT_NE(server_bytes(a.server_of(0)), server_bytes(b.server_of(0)));
  }
}

TEST(Training, SingleClientStrategiesAgree) {
  Fixture f;
  const auto seq = run(small_config(Strategy::sequential, {2}), f.spec, f.td);
  const auto avg = run(small_config(Strategy::averaging, {2}), f.spec, f.td);
  const auto dist = run(small_config(Strategy::distributed, {2}), f.spec, f.td);
  const auto cent = run(small_config(Strategy::centralized, {2}), f.spec, f.td);
  for (const auto *r : {&avg, &dist, &cent}) {
    EXPECT_EQ(client_bytes(r->clients[0]), client_bytes(seq.clients[0])) << strategy_name(r->strategy);
    EXPECT_EQ(server_bytes(r->servers[0]), server_bytes(seq.servers[0])) << strategy_name(r->strategy);
  }
}

TEST(Training, DistributedIsAveragingWithoutAggregation) {
  Fixture f;
  auto avg = small_config(Strategy::averaging, {1, 3, 3});
  avg.aggregate = false;
  const auto a = run(avg, f.spec, f.td);
  const auto d = run(small_config(Strategy::distributed, {1, 3, 3}), f.spec, f.td);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(client_bytes(a.clients[i]), client_bytes(d.clients[i]));
    EXPECT_EQ(server_bytes(a.servers[i]), server_bytes(d.servers[i]));
  }
  EXPECT_EQ(d.counters.aggregation_messages, 0u);
  EXPECT_EQ(d.counters.aggregation_bytes, 0u);
}

TEST(Training, IdenticalReplicasStayIdentical) {
  Fixture f;
  auto cfg = small_config(Strategy::averaging, {2, 2, 2});
  const auto all = data::iid_partition(f.train.size(), 1, cfg.seed).clients.front();
  std::vector<model::ServerModel> snapshots;
  const auto r = train::detail::run_pairs(Strategy::averaging, cfg, f.spec, f.td, {1, 2, 3}, cfg.end_layers, {1, 1, 1},
                                   {all, all, all}, true, true, {});
  EXPECT_EQ(server_bytes(r.servers[0]), server_bytes(r.servers[1]));
  EXPECT_EQ(server_bytes(r.servers[0]), server_bytes(r.servers[2]));
  auto no_agg = train::detail::run_pairs(Strategy::averaging, cfg, f.spec, f.td, {1, 2, 3}, cfg.end_layers, {1, 1, 1},
                                  {all, all, all}, false, true, {});
  EXPECT_EQ(server_bytes(r.servers[0]), server_bytes(no_agg.servers[0]));
}

TEST(Training, CentralizedTrainsOnePipelinePerDepth) {
  Fixture f;
  const auto r = run(small_config(Strategy::centralized, {3, 1, 3}), f.spec, f.td);
  EXPECT_EQ(r.end_layers, (std::vector<int>{1, 3}));
  EXPECT_EQ(r.counters.feature_messages, 0u);
  EXPECT_EQ(r.logs[0].clients[0].batches, f.train.size() / 8);
}

TEST(Training, WorkerCountDoesNotChangeResults) {
  Fixture f;
  for (auto s : {Strategy::sequential, Strategy::averaging, Strategy::centralized}) {
    auto one = small_config(s, {1, 2, 3});
    auto four = one;
    four.workers = 4;
    EXPECT_EQ(everything(run(one, f.spec, f.td)), everything(run(four, f.spec, f.td))) << strategy_name(s);
  }
}

TEST(Training, NonFiniteLossNamesRoundAndClient) {
  Fixture f;
  f.train.images[0] = std::nan("");
  f.td.augment.enabled = false;
  try {
    run(small_config(Strategy::distributed, {1, 1}), f.spec, f.td);
    FAIL() << "expected numeric_error";
  } catch (const numeric_error &e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("round 1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("client"), std::string::npos) << msg;
  }
}

TEST(Training, ConfigValidation) {
  Fixture f;
  auto bad = small_config(Strategy::averaging, {5});
  EXPECT_THROW(run(bad, f.spec, f.td), config_error);
  auto zero = small_config(Strategy::averaging, {1});
  zero.rounds = 0;
  EXPECT_THROW(run(zero, f.spec, f.td), config_error);
  auto none = small_config(Strategy::averaging, {});
  EXPECT_THROW(run(none, f.spec, f.td), config_error);
  auto wrong = model::resnet18_spec(4, 5, 1, 8, 8, {1, 16});
  EXPECT_THROW(run(small_config(Strategy::averaging, {1}), wrong, f.td), config_error);
  EXPECT_THROW(parse_strategy("federated"), config_error);
}

TEST(Training, BatchPlanCoversPartition) {
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.local_epochs = 2;
  std::vector<std::size_t> part{3, 9, 4, 7, 1, 0, 8, 2, 6};
  const auto plan = plan_batches(part, cfg, 1, 0);
  // 9 samples per pass: batches of 4, 4 and a dropped single
  ASSERT_EQ(plan.size(), 4u);
  std::vector<std::size_t> seen;
  for (int b = 0; b < 2; ++b) seen.insert(seen.end(), plan[b].begin(), plan[b].end());
  std::sort(seen.begin(), seen.end());
  EXPECT_EQ(std::adjacent_find(seen.begin(), seen.end()), seen.end());
  EXPECT_NE(plan[0], plan[2]);
  cfg.max_batches_per_round = 3;
  EXPECT_EQ(plan_batches(part, cfg, 1, 0).size(), 3u);
}
