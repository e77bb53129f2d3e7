#pragma once

// Runs one experiment end to end and writes its artifacts:
//
//   manifest.json                 resolved config, network, data sizes, counters
//   rounds.jsonl                  one RoundLog per line, streamed
//   timing.jsonl                  wall-clock per round (kept apart so the rest is reproducible)
//   checkpoints/client_<id>.splitee
//   summary.json / .csv / .txt    final accuracy per client and location

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "splitee/data/cifar.hpp"
#include "splitee/data/export.hpp"
#include "splitee/experiment/config.hpp"
#include "splitee/model/checkpoint.hpp"
#include "splitee/train/strategies.hpp"

namespace splitee::experiment {

namespace fs = std::filesystem;

struct LoadedData {
  data::Dataset train;
  data::Dataset test;
  data::Normalization norm;
};

inline LoadedData load_data(const DatasetConfig &d) {
  LoadedData out;
  if (d.kind == "synthetic") {
    out.train = data::synth_make(d.num_classes, d.train_per_class, d.channels, d.height, d.width, d.difficulty, d.seed, 0);
    out.test = data::synth_make(d.num_classes, d.test_per_class, d.channels, d.height, d.width, d.difficulty, d.seed, 1);
  } else if (d.kind == "cifar10") {
    auto split = data::cifar10_load_dir(d.path);
    out.train = std::move(split.train);
    out.test = std::move(split.test);
  } else if (d.kind == "file") {
    out.train = data::load_dataset(d.train_file);
    out.test = data::load_dataset(d.test_file);
    for (const auto *ds : {&out.train, &out.test})
      if (ds->num_classes != d.num_classes || ds->channels() != static_cast<std::size_t>(d.channels) ||
          ds->height() != static_cast<std::size_t>(d.height) || ds->width() != static_cast<std::size_t>(d.width))
        throw config_error("dataset: file '" + ds->name + "' does not match the declared classes and shape");
  } else {
    throw config_error("dataset.kind: unknown kind '" + d.kind + "'");
  }
  out.norm = data::compute_normalization(out.train);
  return out;
}

/// Column label used by the report.
inline std::string dataset_label(const DatasetConfig &d) {
  if (d.kind == "cifar10") return "CIFAR-10";
  if (d.kind == "file") return fs::path(d.train_file).stem().string();
  return "synthetic-" + std::to_string(d.num_classes);
}

inline nlohmann::json to_json(const data::Normalization &n) { return {{"mean", n.mean}, {"std", n.std}}; }

inline data::Normalization normalization_from_json(const nlohmann::json &j) {
  return {j.at("mean").get<std::vector<double>>(), j.at("std").get<std::vector<double>>()};
}

/// Shrinks a config to a smoke run: one round, at most two batches of at most
/// eight samples per client, a small evaluation set. A missing CIFAR directory
/// is replaced by random data of the same shape.
inline ExperimentConfig dry_run_config(ExperimentConfig c) {
  c.train.rounds = 1;
  c.train.schedule.t_max = std::max(c.train.schedule.t_max, 1);
  c.train.schedule.warmup_epochs = 0;
  c.train.local_epochs = 1;
  c.train.max_batches_per_round = 2;
  c.train.batch_size = std::min<std::size_t>(c.train.batch_size, 8);
  c.train.eval_limit = 16;
  if (c.dataset.kind == "cifar10" && !fs::is_directory(c.dataset.path)) {
    DatasetConfig s;
    s.kind = "synthetic";
    s.num_classes = 10;
    s.channels = 3;
    s.height = s.width = 32;
    s.train_per_class = static_cast<int>((c.train.num_clients() * 2 * c.train.batch_size + 9) / 10);
    s.test_per_class = 2;
    s.difficulty = 0.5;
    s.seed = c.seed;
    c.dataset = s;
  }
  return c;
}

struct RunOptions {
  bool checkpoints = true;
  bool dry_run = false;
  bool quiet = true;
};

struct RunOutcome {
  train::TrainResult result;
  nlohmann::json summary;
  fs::path dir;
};

namespace detail {

inline void write_text(const fs::path &p, const std::string &text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw io_error("cannot write " + p.string());
  out << text;
  if (!out) throw io_error("write failed: " + p.string());
}

inline std::string fmt(double v) { return infer::format_number(v); }

inline nlohmann::json config_echo(const ExperimentConfig &c) {
  auto j = to_json(c);
  // execution settings that cannot change any result
  j.erase("workers");
  j.erase("output_dir");
  return j;
}

} // namespace detail

inline nlohmann::json make_summary(const ExperimentConfig &cfg, const train::TrainResult &r) {
  const auto &last = r.logs.back();
  nlohmann::json clients = nlohmann::json::array();
  for (const auto &c : last.clients)
    clients.push_back({{"client_id", c.client_id},
                       {"end_layer", c.end_layer},
                       {"server_accuracy", c.server_accuracy.value_or(0.0)},
                       {"client_accuracy", c.client_accuracy.value_or(0.0)}});
  return {{"name", cfg.name},
          {"strategy", train::strategy_name(cfg.train.strategy)},
          {"dataset", dataset_label(cfg.dataset)},
          {"seed", cfg.seed},
          {"rounds", static_cast<int>(r.logs.size())},
          {"clients", clients},
          {"counters", train::to_json(r.counters)}};
}

inline std::string summary_csv(const nlohmann::json &s) {
  std::string out = "strategy,dataset,client_id,end_layer,server_accuracy,client_accuracy\n";
  for (const auto &c : s.at("clients"))
    out += s.at("strategy").get<std::string>() + "," + s.at("dataset").get<std::string>() + "," +
           std::to_string(c.at("client_id").get<int>()) + "," + std::to_string(c.at("end_layer").get<int>()) + "," +
           detail::fmt(c.at("server_accuracy").get<double>()) + "," +
           detail::fmt(c.at("client_accuracy").get<double>()) + "\n";
  return out;
}

inline std::string summary_text(const nlohmann::json &s) {
  std::ostringstream o;
  o << s.at("name").get<std::string>() << ": " << s.at("strategy").get<std::string>() << " on "
    << s.at("dataset").get<std::string>() << ", " << s.at("rounds").get<int>() << " rounds\n";
  char line[160];
  std::snprintf(line, sizeof line, "%-8s %-10s %-10s %-10s\n", "client", "end_layer", "server", "client");
  o << line;
  for (const auto &c : s.at("clients")) {
    std::snprintf(line, sizeof line, "%-8d %-10d %-10.4f %-10.4f\n", c.at("client_id").get<int>(),
                  c.at("end_layer").get<int>(), c.at("server_accuracy").get<double>(),
                  c.at("client_accuracy").get<double>());
    o << line;
  }
  const auto &k = s.at("counters");
  o << "feature messages " << k.at("feature_messages").get<std::uint64_t>() << " ("
    << k.at("feature_bytes").get<std::uint64_t>() << " bytes), aggregation messages "
    << k.at("aggregation_messages").get<std::uint64_t>() << " (" << k.at("aggregation_bytes").get<std::uint64_t>()
    << " bytes)\n";
  return o.str();
}

inline RunOutcome run_experiment(const ExperimentConfig &cfg_in, const RunOptions &opt = {}) {
  const auto cfg = opt.dry_run ? dry_run_config(cfg_in) : cfg_in;
  const auto spec = network_spec(cfg);
  cfg.train.validate(spec);
  const auto loaded = load_data(cfg.dataset);

  RunOutcome out;
  out.dir = cfg.output_dir;
  fs::create_directories(out.dir);
  std::ofstream rounds(out.dir / "rounds.jsonl", std::ios::binary);
  std::ofstream timing(out.dir / "timing.jsonl", std::ios::binary);
  if (!rounds || !timing) throw io_error("cannot write logs under " + out.dir.string());

  train::TrainData td{&loaded.train, &loaded.test, {}};
  td.augment.enabled = cfg.augment;
  td.augment.norm = loaded.norm;
  out.result = train::run(cfg.train, spec, td, [&](const train::RoundLog &log) {
    rounds << train::to_json(log).dump() << '\n';
    rounds.flush();
    timing << nlohmann::json{{"round", log.round}, {"wall_seconds", log.wall_seconds}}.dump() << '\n';
    timing.flush();
    if (!opt.quiet) {
      double s = 0.0;
      int n = 0;
      for (const auto &c : log.clients)
        if (c.server_accuracy) s += *c.server_accuracy, ++n;
      std::fprintf(stderr, "round %d/%d  lr %.3g  %.1fs%s\n", log.round, cfg.train.rounds, log.lr, log.wall_seconds,
                   n ? ("  server acc " + detail::fmt(s / n)).c_str() : "");
    }
  });

  const auto &r = out.result;
  if (opt.checkpoints && !opt.dry_run) {
    fs::create_directories(out.dir / "checkpoints");
    for (std::size_t i = 0; i < r.clients.size(); ++i) {
      model::Checkpoint ck{spec, cfg.seed, r.clients[i], r.server_of(i), {}};
      ck.meta = {{"client_id", r.ids[i]},
                 {"end_layer", r.end_layers[i]},
                 {"strategy", train::strategy_name(cfg.train.strategy)},
                 {"dataset", to_json(cfg.dataset)},
                 {"normalization", to_json(loaded.norm)}};
      model::save_checkpoint(out.dir / "checkpoints" / ("client_" + std::to_string(r.ids[i]) + ".splitee"), ck);
    }
  }

  out.summary = make_summary(cfg, r);
  nlohmann::json manifest = {{"config", detail::config_echo(cfg)},
                             {"dry_run", opt.dry_run},
                             {"network", model::to_json(spec)},
                             {"data",
                              {{"train_samples", loaded.train.size()},
                               {"test_samples", loaded.test.size()},
                               {"normalization", to_json(loaded.norm)}}},
                             {"counters", train::to_json(r.counters)}};
  detail::write_text(out.dir / "manifest.json", manifest.dump(2) + "\n");
  detail::write_text(out.dir / "summary.json", out.summary.dump(2) + "\n");
  detail::write_text(out.dir / "summary.csv", summary_csv(out.summary));
  detail::write_text(out.dir / "summary.txt", summary_text(out.summary));
  return out;
}

} // namespace splitee::experiment
