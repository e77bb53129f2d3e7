// splitee: train, sweep, report, partition, export-data.
//
// Exit codes: 0 ok, 1 internal error, 2 bad configuration or arguments,
// 3 numeric divergence, 4 unreadable or malformed file.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "splitee/data/export.hpp"
#include "splitee/data/partition.hpp"
#include "splitee/experiment/config.hpp"
#include "splitee/experiment/report.hpp"
#include "splitee/experiment/run.hpp"
#include "splitee/infer/early_exit.hpp"
#include "splitee/model/checkpoint.hpp"

using namespace splitee;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kInternal = 1, kConfig = 2, kNumeric = 3, kFormat = 4 };

void write_or_print(const std::string &path, const std::string &text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write " + path);
  out << text;
}

void apply_seed_override(experiment::ExperimentConfig &c) {
  const char *env = std::getenv("SPLITEE_SEED");
  if (!env || !*env) return;
  char *end = nullptr;
  errno = 0;
  const auto v = std::strtoull(env, &end, 10);
  if (*end != '\0' || errno != 0 || env[0] == '-') throw config_error(std::string("SPLITEE_SEED: not a seed: '") + env + "'");
  if (c.dataset.kind == "synthetic" && !c.dataset.seed_set) c.dataset.seed = v;
  c.seed = c.train.seed = v;
}

struct TrainArgs {
  std::string config;
  bool paper_scale = false;
  bool dry_run = false;
  bool check = false;
  bool verbose = false;
  std::string out;
  int workers = 0;
};

int cmd_train(const TrainArgs &a) {
  if (a.config.empty() == !a.paper_scale) throw config_error("train: give exactly one of --config or --paper-scale");
  // The preset may point at a CIFAR directory that is absent; a dry run then
  // substitutes data of the same shape.
  auto cfg = a.paper_scale ? experiment::parse_config(experiment::paper_scale_config(), false)
                           : experiment::load_config(a.config);
  apply_seed_override(cfg);
  if (!a.out.empty()) cfg.output_dir = a.out;
  if (a.workers > 0) cfg.train.workers = a.workers;
  const auto spec = experiment::network_spec(cfg);
  cfg.train.validate(spec);
  if (a.check || (a.paper_scale && !a.dry_run)) {
    std::cout << experiment::to_json(cfg).dump(2) << "\n";
    return kOk;
  }
  experiment::RunOptions opt;
  opt.dry_run = a.dry_run;
  opt.quiet = !a.verbose;
  const auto out = experiment::run_experiment(cfg, opt);
  std::cout << experiment::summary_text(out.summary);
  std::cout << "artifacts in " << out.dir.string() << "\n";
  return kOk;
}

struct SweepArgs {
  std::string checkpoint;
  std::string dataset_file;
  std::string grid;
  std::string out_csv;
  std::string out_json;
  std::string trace;
  double trace_tau = 1.0;
  bool confidence_axis = false;
  std::size_t limit = 0;
  std::size_t batch = 256;
};

int cmd_sweep(const SweepArgs &a) {
  const auto ck = model::load_checkpoint(a.checkpoint);
  data::Normalization norm;
  data::Dataset test;
  try {
    norm = experiment::normalization_from_json(ck.meta.at("normalization"));
  } catch (const json::exception &e) {
    throw format_error(a.checkpoint + ": no normalization in metadata");
  }
  if (!a.dataset_file.empty()) {
    test = data::load_dataset(a.dataset_file);
  } else {
    if (!ck.meta.contains("dataset")) throw config_error("sweep: checkpoint names no dataset; pass --dataset");
    const auto d = experiment::detail::parse_dataset(experiment::detail::Reader(ck.meta.at("dataset"), "dataset"), true);
    test = experiment::load_data(d).test;
  }
  if (test.num_classes != ck.spec.num_classes ||
      Shape{test.channels(), test.height(), test.width()} != ck.spec.input_shape())
    throw config_error("sweep: dataset '" + test.name + "' does not match the checkpoint network (" +
                       std::to_string(ck.spec.num_classes) + " classes, input " + shape_str(ck.spec.input_shape()) + ")");
  const auto grid = a.grid.empty() ? infer::Grid{} : infer::parse_grid(a.grid);
  const auto pc = infer::cache_paths(ck.client, ck.server, test, norm, a.batch, a.limit);
  const auto pts = infer::sweep(pc, grid.values());
  write_or_print(a.out_csv, infer::sweep_csv(pts, a.confidence_axis, grid.end));
  if (!a.out_json.empty()) write_or_print(a.out_json, infer::sweep_json(pts, pc).dump(2) + "\n");
  if (!a.trace.empty()) {
    infer::ExitConfig{a.trace_tau}.validate();
    write_or_print(a.trace, infer::trace_csv(pc, a.trace_tau));
  }
  return kOk;
}

int cmd_report(const std::string &dir, const std::string &csv) {
  const auto table = experiment::build_report(dir);
  std::cout << experiment::render_text(table);
  if (!csv.empty()) write_or_print(csv, experiment::render_csv(table));
  return kOk;
}

int cmd_partition(std::size_t samples, std::size_t clients, std::uint64_t seed, const std::string &out) {
  if (samples < 1 || clients < 1) throw config_error("partition: samples and clients must be positive");
  write_or_print(out, data::to_json(data::iid_partition(samples, clients, seed)).dump() + "\n");
  return kOk;
}

int cmd_export(const std::string &config, const std::string &dir) {
  auto cfg = experiment::load_config(config);
  apply_seed_override(cfg);
  const auto d = experiment::load_data(cfg.dataset);
  fs::create_directories(dir);
  data::save_dataset(fs::path(dir) / "train.splitee", d.train);
  data::save_dataset(fs::path(dir) / "test.splitee", d.test);
  std::cout << "wrote " << d.train.size() << " train and " << d.test.size() << " test samples to " << dir << "\n";
  return kOk;
}

int fail(int code, const std::string &what) {
  std::cerr << "splitee: " << what << "\n";
  return code;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Heterogeneous split learning with early exits"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto *train = app.add_subcommand("train", "Train clients and servers from a config");
  train->add_option("-c,--config", ta.config, "Experiment config (JSON)");
  train->add_flag("--paper-scale", ta.paper_scale, "Use the full-size preset; prints it unless --dry-run");
  train->add_flag("--dry-run", ta.dry_run, "One round, two small batches per client, no checkpoints");
  train->add_flag("--check", ta.check, "Validate and print the resolved config");
  train->add_option("-o,--out", ta.out, "Output directory (overrides output_dir)");
  train->add_option("-w,--workers", ta.workers, "Worker threads (1 = serial)")->check(CLI::PositiveNumber);
  train->add_flag("-v,--verbose", ta.verbose, "Per-round progress on stderr");

  SweepArgs sa;
  auto *sweep = app.add_subcommand("sweep", "Early-exit threshold sweep over a checkpoint");
  sweep->add_option("-k,--checkpoint", sa.checkpoint, "Client checkpoint")->required();
  sweep->add_option("-d,--dataset", sa.dataset_file, "Evaluation set written by export-data (default: the training config's test split)");
  sweep->add_option("-g,--grid", sa.grid, "start:end:step in nats (default 0:4:0.05)");
  sweep->add_option("--out-csv", sa.out_csv, "CSV output (default stdout)");
  sweep->add_option("--out-json", sa.out_json, "JSON output");
  sweep->add_option("--trace", sa.trace, "Per-sample decisions at --trace-tau");
  sweep->add_option("--trace-tau", sa.trace_tau, "Threshold for --trace");
  sweep->add_flag("--confidence-axis", sa.confidence_axis, "Write end - tau in a 'confidence' column instead of tau");
  sweep->add_option("--limit", sa.limit, "Use only the first N samples");
  sweep->add_option("--batch", sa.batch, "Evaluation batch size")->check(CLI::PositiveNumber);

  std::string report_dir, report_csv;
  auto *report = app.add_subcommand("report", "Accuracy table over run directories");
  report->add_option("dir", report_dir, "Directory searched for summary.json")->required();
  report->add_option("--csv", report_csv, "Also write the table as CSV");

  std::size_t p_samples = 0, p_clients = 0;
  std::uint64_t p_seed = 0;
  std::string p_out;
  auto *partition = app.add_subcommand("partition", "Dump an IID partition as JSON");
  partition->add_option("-m,--samples", p_samples, "Number of samples")->required();
  partition->add_option("-n,--clients", p_clients, "Number of clients")->required();
  partition->add_option("-s,--seed", p_seed, "Seed");
  partition->add_option("-o,--out", p_out, "Output file (default stdout)");

  std::string e_config, e_dir;
  auto *exportd = app.add_subcommand("export-data", "Write a config's train and test splits as SPLITEE1 files");
  exportd->add_option("-c,--config", e_config, "Experiment config")->required();
  exportd->add_option("-o,--out-dir", e_dir, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    app.exit(e);
    return kConfig;
  }

  try {
    if (*train) return cmd_train(ta);
    if (*sweep) return cmd_sweep(sa);
    if (*report) return cmd_report(report_dir, report_csv);
    if (*partition) return cmd_partition(p_samples, p_clients, p_seed, p_out);
    if (*exportd) return cmd_export(e_config, e_dir);
  } catch (const config_error &e) {
    return fail(kConfig, e.what());
  } catch (const dimension_error &e) {
    return fail(kConfig, e.what());
  } catch (const numeric_error &e) {
    return fail(kNumeric, e.what());
  } catch (const format_error &e) {
    return fail(kFormat, e.what());
  } catch (const io_error &e) {
    return fail(kFormat, e.what());
  } catch (const fs::filesystem_error &e) {
    return fail(kFormat, e.what());
  } catch (const std::exception &e) {
    return fail(kInternal, e.what());
  }
  return kInternal;
}
