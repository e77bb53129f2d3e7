#pragma once

#include <cmath>
#include <cstdio>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "splitee/data/augment.hpp"
#include "splitee/model/split_model.hpp"

namespace splitee::infer {

/// Shannon entropy in nats, with 0 log 0 = 0.
inline double entropy(std::span<const double> p) {
  double sum = 0.0, h = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) throw contract_error("entropy: negative or NaN probability");
    sum += v;
    if (v > 0.0) h -= v * std::log(v);
  }
  if (std::abs(sum - 1.0) > 1e-9) throw contract_error("entropy: probabilities sum to " + std::to_string(sum));
  return h;
}

/// Exit at the client iff the client head's entropy is below tau (nats).
struct ExitConfig {
  double tau = 0.0;

  void validate() const {
    if (!(tau >= 0.0)) throw config_error("exit threshold must be non-negative");
  }
};

enum class ExitPath { client, server };

inline const char *path_name(ExitPath p) { return p == ExitPath::client ? "client" : "server"; }

struct Decision {
  int prediction = 0;
  ExitPath path = ExitPath::server;
  double entropy = 0.0;
};

/// One normalized sample, shaped CxHxW or 1xCxHxW. The server only runs when
/// the client does not exit.
inline Decision infer_one(const model::ClientModel &c, const model::ServerModel &s, const Tensor &x,
                          const ExitConfig &cfg) {
  cfg.validate();
  const Tensor batch = x.rank() == 3 ? x.reshaped({1, x.dim(0), x.dim(1), x.dim(2)}) : x;
  if (batch.rank() != 4 || batch.dim(0) != 1) throw dimension_error("infer_one expects a single sample, got " + shape_str(x.shape));
  const auto out = model::client_forward(c, batch);
  const auto probs = nn::softmax_rows(out.logits);
  Decision d;
  d.entropy = entropy(probs.values);
  if (d.entropy < cfg.tau) {
    d.prediction = nn::argmax_rows(out.logits).front();
    d.path = ExitPath::client;
  } else {
    d.prediction = nn::argmax_rows(model::server_forward(s, out.features, c.end_layer)).front();
    d.path = ExitPath::server;
  }
  return d;
}

/// Everything a threshold decision needs, computed once per sample.
struct PathCache {
  std::vector<int> labels;
  std::vector<int> client; // client-head prediction
  std::vector<int> server; // server-path prediction
  std::vector<double> entropy;
  int num_classes = 0;

  std::size_t size() const { return labels.size(); }
};

inline PathCache cache_paths(const model::ClientModel &c, const model::ServerModel &s, const data::Dataset &d,
                             const data::Normalization &norm, std::size_t batch = 256, std::size_t limit = 0) {
  if (batch < 1) throw config_error("batch must be positive");
  const auto M = limit > 0 ? std::min(limit, d.size()) : d.size();
  const auto K = static_cast<std::size_t>(c.spec.num_classes);
  data::AugmentConfig cfg;
  cfg.enabled = false;
  cfg.norm = norm;
  PathCache pc;
  pc.num_classes = c.spec.num_classes;
  std::vector<std::size_t> idx;
  for (std::size_t at = 0; at < M; at += batch) {
    idx.clear();
    for (std::size_t i = at; i < std::min(M, at + batch); ++i) idx.push_back(i);
    const auto x = data::make_batch(d, idx, cfg, nullptr);
    const auto out = model::client_forward(c, x);
    const auto probs = nn::softmax_rows(out.logits);
    for (std::size_t b = 0; b < idx.size(); ++b)
      pc.entropy.push_back(entropy(std::span<const double>(probs.values).subspan(b * K, K)));
    const auto cp = nn::argmax_rows(out.logits);
    const auto sp = nn::argmax_rows(model::server_forward(s, out.features, c.end_layer));
    pc.client.insert(pc.client.end(), cp.begin(), cp.end());
    pc.server.insert(pc.server.end(), sp.begin(), sp.end());
    for (auto i : idx) pc.labels.push_back(d.labels[i]);
  }
  return pc;
}

struct Grid {
  double start = 0.0;
  double end = 4.0;
  double step = 0.05;

  std::size_t count() const { return static_cast<std::size_t>(std::llround((end - start) / step)) + 1; }

  void validate() const {
    if (!(step > 0.0)) throw config_error("grid step must be positive");
    if (!(start >= 0.0)) throw config_error("grid start must be non-negative");
    if (!(end >= start)) throw config_error("grid end must not be below its start");
  }

  std::vector<double> values() const {
    validate();
    std::vector<double> v;
    for (std::size_t i = 0; i < count(); ++i) v.push_back(start + static_cast<double>(i) * step);
    return v;
  }
};

/// "start:end:step".
inline Grid parse_grid(const std::string &text) {
  Grid g;
  const auto a = text.find(':'), b = text.find(':', a == std::string::npos ? a : a + 1);
  if (a == std::string::npos || b == std::string::npos) throw config_error("grid must be start:end:step, got '" + text + "'");
  try {
    std::size_t used = 0;
    auto num = [&](const std::string &s) {
      const double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    };
    g.start = num(text.substr(0, a));
    g.end = num(text.substr(a + 1, b - a - 1));
    g.step = num(text.substr(b + 1));
  } catch (const std::exception &) {
    throw config_error("grid must be start:end:step, got '" + text + "'");
  }
  g.validate();
  return g;
}

struct SweepPoint {
  double tau = 0.0;
  double accuracy = 0.0;
  double client_ratio = 0.0;
  double server_ratio = 0.0;
  double avg_entropy = 0.0;
};

inline std::vector<SweepPoint> sweep(const PathCache &pc, const std::vector<double> &taus) {
  if (taus.empty()) throw config_error("sweep grid is empty");
  for (std::size_t i = 1; i < taus.size(); ++i)
    if (!(taus[i] > taus[i - 1])) throw config_error("sweep grid must be strictly ascending");
  if (pc.size() == 0) throw config_error("sweep over an empty dataset");
  const double M = static_cast<double>(pc.size());
  double hsum = 0.0;
  for (double h : pc.entropy) hsum += h;
  std::vector<SweepPoint> out;
  for (double tau : taus) {
    ExitConfig{tau}.validate();
    std::size_t exits = 0, hits = 0;
    for (std::size_t i = 0; i < pc.size(); ++i) {
      const bool exit = pc.entropy[i] < tau;
      exits += exit;
      hits += (exit ? pc.client[i] : pc.server[i]) == pc.labels[i];
    }
    SweepPoint p;
    p.tau = tau;
    p.accuracy = static_cast<double>(hits) / M;
    p.client_ratio = static_cast<double>(exits) / M;
    p.server_ratio = static_cast<double>(pc.size() - exits) / M;
    p.avg_entropy = hsum / M;
    out.push_back(p);
  }
  return out;
}

inline std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

/// With `confidence_axis` the first column holds axis_max - tau instead.
inline std::string sweep_csv(const std::vector<SweepPoint> &pts, bool confidence_axis = false, double axis_max = 4.0) {
  std::string out = confidence_axis ? "confidence" : "tau";
  out += ",accuracy,client_ratio,server_ratio,avg_entropy\n";
  for (const auto &p : pts)
    out += format_number(confidence_axis ? axis_max - p.tau : p.tau) + "," + format_number(p.accuracy) + "," +
           format_number(p.client_ratio) + "," + format_number(p.server_ratio) + "," + format_number(p.avg_entropy) +
           "\n";
  return out;
}

inline nlohmann::json sweep_json(const std::vector<SweepPoint> &pts, const PathCache &pc) {
  nlohmann::json points = nlohmann::json::array();
  for (const auto &p : pts)
    points.push_back({{"tau", p.tau},
                      {"accuracy", p.accuracy},
                      {"client_ratio", p.client_ratio},
                      {"server_ratio", p.server_ratio},
                      {"avg_entropy", p.avg_entropy}});
  return {{"decision", "exit at client iff entropy < tau (nats)"},
          {"num_samples", pc.size()},
          {"num_classes", pc.num_classes},
          {"points", points}};
}

/// Per-sample audit of the decision at one threshold.
inline std::string trace_csv(const PathCache &pc, double tau) {
  std::string out = "index,label,entropy,exit,prediction,correct\n";
  for (std::size_t i = 0; i < pc.size(); ++i) {
    const bool exit = pc.entropy[i] < tau;
    const int pred = exit ? pc.client[i] : pc.server[i];
    out += std::to_string(i) + "," + std::to_string(pc.labels[i]) + "," + format_number(pc.entropy[i]) + "," +
           path_name(exit ? ExitPath::client : ExitPath::server) + "," + std::to_string(pred) + "," +
           (pred == pc.labels[i] ? "1" : "0") + "\n";
  }
  return out;
}

} // namespace splitee::infer
