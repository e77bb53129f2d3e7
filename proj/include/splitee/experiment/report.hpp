#pragma once

// Accuracy table over finished runs: one row pair (Server, Client) per method,
// one column per (dataset, end layer). Cells are mean accuracies in percent
// over every client with that end layer in every matching run.

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "splitee/error.hpp"

namespace splitee::experiment {

struct ReportTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline std::vector<std::filesystem::path> find_summaries(const std::filesystem::path &root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw config_error("report: '" + root.string() + "' is not a directory");
  std::vector<fs::path> out;
  for (const auto &e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().filename() == "summary.json") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

inline ReportTable build_report(const std::vector<nlohmann::json> &summaries) {
  static const std::array<std::pair<const char *, const char *>, 4> methods{
      {{"sequential", "Sequential"}, {"averaging", "Averaging"}, {"centralized", "Centralized"}, {"distributed", "Distributed"}}};
  using Column = std::pair<std::string, int>;
  struct Acc {
    double server = 0.0, client = 0.0;
    int n = 0;
  };
  std::map<std::string, std::map<Column, Acc>> cells;
  std::vector<std::string> datasets; // order of first appearance
  std::map<Column, bool> columns;
  for (const auto &s : summaries) {
    try {
      const auto strategy = s.at("strategy").get<std::string>();
      const auto ds = s.at("dataset").get<std::string>();
      if (std::find(datasets.begin(), datasets.end(), ds) == datasets.end()) datasets.push_back(ds);
      for (const auto &c : s.at("clients")) {
        const Column col{ds, c.at("end_layer").get<int>()};
        columns[col] = true;
        auto &a = cells[strategy][col];
        a.server += c.at("server_accuracy").get<double>();
        a.client += c.at("client_accuracy").get<double>();
        ++a.n;
      }
    } catch (const nlohmann::json::exception &e) {
      throw format_error(std::string("report: malformed summary: ") + e.what());
    }
  }
  std::vector<Column> cols;
  for (const auto &ds : datasets)
    for (const auto &[col, _] : columns)
      if (col.first == ds) cols.push_back(col);

  ReportTable t;
  t.header = {"method", "location"};
  for (const auto &[ds, l] : cols) t.header.push_back(ds + " L" + std::to_string(l));
  for (const auto &[key, label] : methods) {
    const auto it = cells.find(key);
    if (it == cells.end()) continue;
    for (const bool server : {true, false}) {
      std::vector<std::string> row{label, server ? "Server" : "Client"};
      for (const auto &col : cols) {
        const auto c = it->second.find(col);
        if (c == it->second.end()) {
          row.emplace_back("-");
          continue;
        }
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.2f", 100.0 * (server ? c->second.server : c->second.client) / c->second.n);
        row.emplace_back(buf);
      }
      t.rows.push_back(std::move(row));
    }
  }
  return t;
}

inline ReportTable build_report(const std::filesystem::path &root) {
  const auto files = find_summaries(root);
  if (files.empty()) throw config_error("report: no summary.json under '" + root.string() + "'");
  std::vector<nlohmann::json> summaries;
  for (const auto &f : files) {
    std::ifstream in(f);
    try {
      summaries.push_back(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception &e) {
      throw format_error(f.string() + ": " + e.what());
    }
  }
  return build_report(summaries);
}

inline std::string render_text(const ReportTable &t) {
  std::vector<std::size_t> width(t.header.size(), 0);
  auto grow = [&](const std::vector<std::string> &r) {
    for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
  };
  grow(t.header);
  for (const auto &r : t.rows) grow(r);
  auto line = [&](const std::vector<std::string> &r) {
    std::string s;
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (i) s += "  ";
      // text columns left aligned, numbers right aligned
      const auto pad = std::string(width[i] - r[i].size(), ' ');
      s += i < 2 ? r[i] + pad : pad + r[i];
    }
    while (!s.empty() && s.back() == ' ') s.pop_back();
    return s + "\n";
  };
  std::string out = line(t.header);
  for (const auto &r : t.rows) out += line(r);
  return out;
}

inline std::string render_csv(const ReportTable &t) {
  auto line = [](const std::vector<std::string> &r) {
    std::string s;
    for (std::size_t i = 0; i < r.size(); ++i) s += (i ? "," : "") + r[i];
    return s + "\n";
  };
  std::string out = line(t.header);
  for (const auto &r : t.rows) out += line(r);
  return out;
}

} // namespace splitee::experiment
