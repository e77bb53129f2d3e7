#pragma once

// Experiment configuration: one JSON document (schema_version 1) naming the
// dataset, network, clients, schedule, evaluation and sweep grid. Every field
// has a default except `strategy` and `dataset`. Errors carry the field path.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "splitee/data/synthetic.hpp"
#include "splitee/error.hpp"
#include "splitee/infer/early_exit.hpp"
#include "splitee/model/spec.hpp"
#include "splitee/train/config.hpp"

namespace splitee::experiment {

using nlohmann::json;

inline constexpr int kSchemaVersion = 1;

struct DatasetConfig {
  std::string kind; // synthetic | cifar10 | file
  // synthetic
  int num_classes = 4;
  int train_per_class = 500;
  int test_per_class = 125;
  int channels = 1;
  int height = 16;
  int width = 16;
  double difficulty = 0.5;
  std::uint64_t seed = 0; // defaults to the experiment seed
  bool seed_set = false;
  // cifar10
  std::string path;
  // file (SPLITEE1 datasets written by export-data)
  std::string train_file;
  std::string test_file;
};

struct ExperimentConfig {
  std::string name = "run";
  std::uint64_t seed = 0;
  DatasetConfig dataset;
  int depth = model::kResNet18Depth;
  model::Ratio channel_scale{1, 1};
  train::TrainConfig train;
  bool augment = true;
  infer::Grid grid;
  std::string output_dir;
};

namespace detail {

/// Reads one JSON object, tracking the field path for diagnostics and
/// rejecting keys nobody asked for.
class Reader {
public:
  Reader(const json &j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail("", "expected an object");
  }

  std::string field(const std::string &key) const { return path_.empty() ? key : path_ + "." + key; }

  [[noreturn]] void fail(const std::string &key, const std::string &what) const {
    const auto where = key.empty() ? (path_.empty() ? std::string("<root>") : path_) : field(key);
    throw config_error(where + ": " + what);
  }

  bool has(const std::string &key) const { return j_.contains(key) && !j_.at(key).is_null(); }

  const json &raw(const std::string &key) {
    seen_.insert(key);
    return j_.at(key);
  }

  template <class T> T get(const std::string &key, T fallback) {
    seen_.insert(key);
    if (!has(key)) return fallback;
    return convert<T>(key);
  }

  template <class T> T require(const std::string &key) {
    seen_.insert(key);
    if (!has(key)) fail(key, "required field is missing");
    return convert<T>(key);
  }

  Reader child(const std::string &key) {
    seen_.insert(key);
    static const json empty = json::object();
    return Reader(has(key) ? j_.at(key) : empty, field(key));
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) fail(it.key(), "unknown field");
  }

private:
  template <class T> T convert(const std::string &key) const {
    const auto &v = j_.at(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) fail(key, "expected true or false");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) fail(key, "expected an integer");
      if constexpr (std::is_unsigned_v<T>)
        if (v.get<long long>() < 0 && !v.is_number_unsigned()) fail(key, "expected a non-negative integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) fail(key, "expected a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) fail(key, "expected a string");
    }
    try {
      return v.get<T>();
    } catch (const json::exception &) {
      fail(key, "has the wrong type");
    }
  }

  const json &j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void check(bool ok, Reader &r, const std::string &key, const std::string &what) {
  if (!ok) r.fail(key, what);
}

inline DatasetConfig parse_dataset(Reader r, bool require_paths) {
  DatasetConfig d;
  d.kind = r.require<std::string>("kind");
  if (d.kind == "synthetic") {
    d.num_classes = r.get("num_classes", d.num_classes);
    d.train_per_class = r.get("train_per_class", d.train_per_class);
    d.test_per_class = r.get("test_per_class", d.test_per_class);
    d.channels = r.get("channels", d.channels);
    d.height = r.get("height", d.height);
    d.width = r.get("width", d.width);
    if (r.has("difficulty")) {
      const auto &v = r.raw("difficulty");
      if (v.is_string()) {
        try {
          d.difficulty = data::difficulty_level(v.get<std::string>());
        } catch (const config_error &e) {
          r.fail("difficulty", e.what());
        }
      } else if (v.is_number()) {
        d.difficulty = v.get<double>();
      } else {
        r.fail("difficulty", "expected easy, mid, hard or a number");
      }
    } else {
      r.get<double>("difficulty", 0.0);
    }
    if (r.has("seed")) {
      d.seed = r.get<std::uint64_t>("seed", 0);
      d.seed_set = true;
    } else {
      r.get<std::uint64_t>("seed", 0);
    }
    check(d.num_classes >= 2, r, "num_classes", "must be at least 2");
    check(d.train_per_class >= 1, r, "train_per_class", "must be at least 1");
    check(d.test_per_class >= 1, r, "test_per_class", "must be at least 1");
    check(d.channels >= 1, r, "channels", "must be at least 1");
    check(d.height >= 1, r, "height", "must be at least 1");
    check(d.width >= 1, r, "width", "must be at least 1");
    check(d.difficulty >= 0.0, r, "difficulty", "must be non-negative");
  } else if (d.kind == "cifar10") {
    d.path = r.get<std::string>("path", "data/cifar-10-batches-bin");
    d.num_classes = 10;
    d.channels = 3;
    d.height = d.width = 32;
    if (require_paths && !std::filesystem::is_directory(d.path)) r.fail("path", "directory '" + d.path + "' does not exist");
  } else if (d.kind == "file") {
    d.train_file = r.require<std::string>("train");
    d.test_file = r.require<std::string>("test");
    if (require_paths) {
      if (!std::filesystem::exists(d.train_file)) r.fail("train", "file '" + d.train_file + "' does not exist");
      if (!std::filesystem::exists(d.test_file)) r.fail("test", "file '" + d.test_file + "' does not exist");
    }
    d.num_classes = r.require<int>("num_classes");
    d.channels = r.require<int>("channels");
    d.height = r.require<int>("height");
    d.width = r.require<int>("width");
  } else {
    r.fail("kind", "expected synthetic, cifar10 or file, got '" + d.kind + "'");
  }
  r.finish();
  return d;
}

} // namespace detail

/// `require_paths` checks that referenced files exist.
inline ExperimentConfig parse_config(const json &j, bool require_paths = true) {
  detail::Reader r(j, "");
  ExperimentConfig c;
  const int version = r.get("schema_version", kSchemaVersion);
  if (version != kSchemaVersion)
    r.fail("schema_version", "unsupported version " + std::to_string(version) + " (expected 1)");
  c.name = r.get<std::string>("name", c.name);
  c.seed = r.get<std::uint64_t>("seed", 0);
  const auto strategy = r.require<std::string>("strategy");
  try {
    c.train.strategy = train::parse_strategy(strategy);
  } catch (const config_error &e) {
    r.fail("strategy", e.what());
  }
  if (!r.has("dataset")) r.fail("dataset", "required field is missing");
  c.dataset = detail::parse_dataset(r.child("dataset"), require_paths);
  if (!c.dataset.seed_set) c.dataset.seed = c.seed;

  {
    auto m = r.child("model");
    c.depth = m.get("depth", c.depth);
    detail::check(c.depth >= 2 && c.depth <= model::kResNet18Depth, m, "depth", "must be in [2,6]");
    if (m.has("channel_scale")) {
      const auto &v = m.raw("channel_scale");
      try {
        c.channel_scale = v.is_string() ? model::Ratio::parse(v.get<std::string>())
                          : v.is_number() ? model::Ratio::from_double(v.get<double>())
                                          : throw config_error("expected a ratio such as \"1/8\"");
      } catch (const config_error &e) {
        m.fail("channel_scale", e.what());
      }
    } else {
      m.get<double>("channel_scale", 1.0);
    }
    m.finish();
  }

  {
    auto cl = r.child("clients");
    if (cl.has("end_layers")) {
      c.train.end_layers = cl.get<std::vector<int>>("end_layers", {});
      detail::check(!cl.has("count") && !cl.has("end_layer"), cl, "end_layers", "give either end_layers or count and end_layer");
    } else {
      const int count = cl.get("count", 3);
      const int layer = cl.get("end_layer", 2);
      detail::check(count >= 1, cl, "count", "must be at least 1");
      c.train.end_layers.assign(static_cast<std::size_t>(count), layer);
    }
    cl.get<int>("count", 0);
    cl.get<int>("end_layer", 0);
    detail::check(!c.train.end_layers.empty(), cl, "end_layers", "must name at least one client");
    for (int l : c.train.end_layers)
      detail::check(l >= 1 && l <= c.depth, cl, "end_layers",
                    "end layer " + std::to_string(l) + " outside [1," + std::to_string(c.depth) + "]");
    cl.finish();
  }

  {
    auto t = r.child("training");
    auto &tc = c.train;
    tc.rounds = t.get("rounds", 10);
    tc.local_epochs = t.get("local_epochs", 1);
    tc.batch_size = t.get<std::size_t>("batch_size", 32);
    tc.schedule.lr_max = t.get("lr_max", 0.001);
    tc.schedule.lr_min = t.get("lr_min", 1.0e-6);
    tc.schedule.t_max = t.get("t_max", tc.rounds);
    tc.schedule.warmup_epochs = t.get("warmup_epochs", 0);
    tc.server_lr_divisor = t.get("server_lr_divisor", 0.0);
    tc.max_batches_per_round = t.get<std::size_t>("max_batches_per_round", 0);
    c.augment = t.get("augment", true);
    tc.aggregate_buffers = t.get("aggregate_batchnorm_statistics", true);
    detail::check(tc.rounds >= 1, t, "rounds", "must be at least 1");
    detail::check(tc.local_epochs >= 1, t, "local_epochs", "must be at least 1");
    detail::check(tc.batch_size >= 2, t, "batch_size", "must be at least 2");
    detail::check(tc.schedule.lr_max > 0.0, t, "lr_max", "must be positive");
    detail::check(tc.schedule.lr_min >= 0.0 && tc.schedule.lr_min <= tc.schedule.lr_max, t, "lr_min",
                  "must be in [0, lr_max]");
    detail::check(tc.schedule.t_max >= 1, t, "t_max", "must be at least 1");
    detail::check(tc.schedule.warmup_epochs >= 0 && tc.schedule.warmup_epochs < tc.schedule.t_max, t,
                  "warmup_epochs", "must be in [0, t_max)");
    detail::check(tc.server_lr_divisor >= 0.0, t, "server_lr_divisor", "must be positive (0 selects the client count)");
    t.finish();
  }

  {
    auto e = r.child("eval");
    c.train.eval_every = e.get("every", 1);
    c.train.eval_batch = e.get<std::size_t>("batch", 256);
    c.train.eval_limit = e.get<std::size_t>("limit", 0);
    detail::check(c.train.eval_every >= 1, e, "every", "must be at least 1");
    detail::check(c.train.eval_batch >= 1, e, "batch", "must be at least 1");
    e.finish();
  }

  {
    auto s = r.child("sweep");
    c.grid.start = s.get("start", 0.0);
    c.grid.end = s.get("end", 4.0);
    c.grid.step = s.get("step", 0.05);
    try {
      c.grid.validate();
    } catch (const config_error &e) {
      s.fail("", e.what());
    }
    s.finish();
  }

  c.train.workers = r.get("workers", 1);
  detail::check(c.train.workers >= 1, r, "workers", "must be at least 1");
  c.output_dir = r.get<std::string>("output_dir", "runs/" + c.name);
  c.train.seed = c.seed;
  r.finish();
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path &path, bool require_paths = true) {
  std::ifstream in(path);
  if (!in) throw config_error(path.string() + ": cannot open config");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception &e) {
    throw config_error(path.string() + ": not valid JSON: " + e.what());
  }
  return parse_config(j, require_paths);
}

inline json to_json(const DatasetConfig &d) {
  if (d.kind == "synthetic")
    return {{"kind", d.kind},           {"num_classes", d.num_classes},   {"train_per_class", d.train_per_class},
            {"test_per_class", d.test_per_class}, {"channels", d.channels}, {"height", d.height},
            {"width", d.width},         {"difficulty", d.difficulty},     {"seed", d.seed}};
  if (d.kind == "cifar10") return {{"kind", d.kind}, {"path", d.path}};
  return {{"kind", d.kind},         {"train", d.train_file},   {"test", d.test_file}, {"num_classes", d.num_classes},
          {"channels", d.channels}, {"height", d.height},      {"width", d.width}};
}

/// The fully resolved configuration; parsing it again gives the same config.
inline json to_json(const ExperimentConfig &c) {
  const auto &t = c.train;
  return {{"schema_version", kSchemaVersion},
          {"name", c.name},
          {"seed", c.seed},
          {"strategy", train::strategy_name(t.strategy)},
          {"dataset", to_json(c.dataset)},
          {"model", {{"depth", c.depth}, {"channel_scale", c.channel_scale.str()}}},
          {"clients", {{"end_layers", t.end_layers}}},
          {"training",
           {{"rounds", t.rounds},
            {"local_epochs", t.local_epochs},
            {"batch_size", t.batch_size},
            {"lr_max", t.schedule.lr_max},
            {"lr_min", t.schedule.lr_min},
            {"t_max", t.schedule.t_max},
            {"warmup_epochs", t.schedule.warmup_epochs},
            {"server_lr_divisor", t.divisor()},
            {"max_batches_per_round", t.max_batches_per_round},
            {"augment", c.augment},
            {"aggregate_batchnorm_statistics", t.aggregate_buffers}}},
          {"eval", {{"every", t.eval_every}, {"batch", t.eval_batch}, {"limit", t.eval_limit}}},
          {"sweep", {{"start", c.grid.start}, {"end", c.grid.end}, {"step", c.grid.step}}},
          {"workers", t.workers},
          {"output_dir", c.output_dir}};
}

inline model::BaseNetworkSpec network_spec(const ExperimentConfig &c) {
  return model::resnet18_spec(c.depth, c.dataset.num_classes, c.dataset.channels, c.dataset.height, c.dataset.width,
                              c.channel_scale);
}

/// The full-size setting: 12 clients, four each ending at layers 3, 4 and 5 of
/// the residual-18 layout at full width, 600 rounds of one epoch, batch 1024,
/// cosine schedule from 1e-3 to 1e-6.
inline json paper_scale_config() {
  std::vector<int> layers;
  for (int l : {3, 4, 5})
    for (int i = 0; i < 4; ++i) layers.push_back(l);
  return {{"schema_version", kSchemaVersion},
          {"name", "paper-scale"},
          {"seed", 0},
          {"strategy", "averaging"},
          {"dataset", {{"kind", "cifar10"}, {"path", "data/cifar-10-batches-bin"}}},
          {"model", {{"depth", 6}, {"channel_scale", "1"}}},
          {"clients", {{"end_layers", layers}}},
          {"training",
           {{"rounds", 600},
            {"local_epochs", 1},
            {"batch_size", 1024},
            {"lr_max", 0.001},
            {"lr_min", 1.0e-6},
            {"t_max", 600},
            {"server_lr_divisor", 12.0},
            {"augment", true}}},
          {"eval", {{"every", 1}, {"batch", 256}}},
          {"sweep", {{"start", 0.0}, {"end", 4.0}, {"step", 0.05}}},
          {"output_dir", "runs/paper-scale"}};
}

} // namespace splitee::experiment
