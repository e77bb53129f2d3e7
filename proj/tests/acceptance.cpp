// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <unistd.h>

#include "splitee/experiment/run.hpp"
#include "splitee/infer/early_exit.hpp"
#include "splitee/nn/cosine.hpp"
#include "support/gradient_suite.hpp"
#include "support/oracles.hpp"

using namespace splitee;
namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(bool ok, const std::string &name, const std::string &detail) {
  std::printf("%s  %-28s %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  failures += !ok;
}

/// Runs a criterion, turning an escaped exception into a failure line.
void criterion(const std::string &name, const std::function<void()> &body) {
  try {
    body();
  } catch (const std::exception &e) {
    report(false, name, std::string("threw: ") + e.what());
  }
}

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string fmt(const char *f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string slurp(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

const fs::path &scratch() {
  static const fs::path dir = fs::temp_directory_path() / ("splitee_acceptance_" + std::to_string(getpid()));
  return dir;
}

json desk_config(const std::string &strategy) {
  return {{"name", "desk-" + strategy},
          {"seed", 1},
          {"strategy", strategy},
          {"dataset",
           {{"kind", "synthetic"},
            {"num_classes", 4},
            {"train_per_class", 500},
            {"test_per_class", 125},
            {"channels", 1},
            {"height", 16},
            {"width", 16},
            {"difficulty", "mid"}}},
          {"model", {{"depth", 4}, {"channel_scale", "1/8"}}},
          {"clients", {{"end_layers", {1, 2, 3}}}},
          {"training", {{"rounds", 50}, {"local_epochs", 1}, {"batch_size", 32}}},
          {"eval", {{"every", 50}}}};
}

struct DeskRun {
  experiment::RunOutcome out;
  double seconds = 0.0;
  double min_server = 1.0;
  double mean_server = 0.0;
};

DeskRun desk_run(const std::string &strategy, const std::string &tag, int workers) {
  auto j = desk_config(strategy);
  j["workers"] = workers;
  j["output_dir"] = (scratch() / tag).string();
  DeskRun d;
  const auto t0 = Clock::now();
  d.out = experiment::run_experiment(experiment::parse_config(j));
  d.seconds = seconds_since(t0);
  const auto &last = d.out.result.logs.back().clients;
  for (const auto &c : last) {
    d.min_server = std::min(d.min_server, *c.server_accuracy);
    d.mean_server += *c.server_accuracy / static_cast<double>(last.size());
  }
  return d;
}

std::string model_bytes(const model::ClientModel &c) {
  Container k;
  for (const auto *ls : [&] {
         std::vector<const model::LayerState *> v;
         for (const auto &l : c.layers) v.push_back(&l);
         v.push_back(&c.head);
         return v;
       }()) {
    for (const auto &[n, t] : ls->params) k.tensors.emplace("p/" + n, Tensor(t.shape, t.values));
    for (const auto &[n, t] : ls->buffers) k.tensors.emplace("b/" + n, Tensor(t.shape, t.values));
  }
  return encode_container(k);
}

void paper_scale() {
  const auto t0 = Clock::now();
  const auto out = scratch() / "paper";
  const std::string cmd = std::string(SPLITEE_CLI_PATH) + " train --paper-scale --dry-run -o " + out.string() +
                          " > " + (scratch() / "dry-run.log").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  const double secs = seconds_since(t0);
  const int code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  bool shape_ok = false, stand_in = false;
  std::size_t batches = 0, clients = 0;
  if (code == 0) {
    const auto m = json::parse(slurp(out / "manifest.json"));
    const auto &c = m["config"];
    shape_ok = c["clients"]["end_layers"].size() == 12 && c["model"]["depth"] == 6 && c["model"]["channel_scale"] == "1" &&
               c["strategy"] == "averaging";
    stand_in = c["dataset"]["kind"] == "synthetic";
    const auto round = json::parse(slurp(out / "rounds.jsonl"));
    for (const auto &cl : round["clients"]) {
      batches += cl["batches"].get<std::size_t>();
      ++clients;
    }
  }
  // the preset itself, exactly as shipped
  const auto preset = experiment::parse_config(experiment::paper_scale_config(), false);
  preset.train.validate(experiment::network_spec(preset));
  const bool ok = code == 0 && shape_ok && clients == 12 && batches == 24 && secs < 600.0;
  report(ok, "paper-scale dry run",
         "exit " + std::to_string(code) + ", 12 full-width clients x " + std::to_string(clients ? batches / clients : 0) +
             " batches" + (stand_in ? " on CIFAR-shaped stand-in data" : " on CIFAR-10") + ", " +
             fmt("%.1f s (limit 600 s)", secs));
}

void gradient_suite() {
  const auto t0 = Clock::now();
  const auto res = gradsuite::run(20, 7);
  const double secs = seconds_since(t0);
  double worst = 0.0;
  int min_cases = 1 << 30;
  for (const auto &[_, r] : res) {
    worst = std::max(worst, r.worst);
    min_cases = std::min(min_cases, r.cases);
  }
  report(worst <= 1e-4 && min_cases >= 20 && secs < 60.0, "gradient suite",
         std::to_string(res.size()) + " layers x " + std::to_string(min_cases) + " cases, worst rel err " +
             fmt("%.2e", worst) + ", " + fmt("%.2f s", secs));
}

void split_compose() {
  const auto spec = model::resnet18_spec(6, 10, 3, 32, 32, {1, 8});
  const auto base = model::build_base(spec, 3);
  Rng rng(9);
  const auto x = oracle::random_tensor({2, 3, 32, 32}, rng);
  const auto want = model::full_forward(base, x);
  double worst = 0.0;
  for (int l = 1; l <= 6; ++l) {
    const auto [c, s] = model::split(base, l);
    const auto got = model::server_forward(s, model::client_forward(c, x).features);
    for (std::size_t i = 0; i < got.numel(); ++i) worst = std::max(worst, std::abs(got[i] - want[i]));
  }
  report(worst <= 1e-12, "split-compose identity", "L=6, l=1..6, scale 1/8, max abs diff " + fmt("%.2e", worst));
}

void aggregation_oracle() {
  Rng rng(31);
  double worst = 0.0;
  bool idempotent = true;
  for (int trial = 0; trial < 100; ++trial) {
    const int L = 2 + static_cast<int>(rng.below(5));
    std::vector<int> layers(2 + rng.below(5));
    for (auto &l : layers) l = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(L)));
    const auto base = model::build_base(model::resnet18_spec(L, 3, 1, 8, 8, {1, 16}), 1);
    std::vector<model::ServerModel> servers;
    for (int l : layers) {
      auto s = model::split(base, l).second;
      for (auto *ls : [&] {
             std::vector<model::LayerState *> v;
             for (auto &x : s.layers) v.push_back(&x);
             v.push_back(&s.head);
             return v;
           }()) {
        for (auto &[_, t] : ls->params) t = oracle::random_tensor(t.shape, rng);
        for (auto &[_, t] : ls->buffers) t = oracle::random_tensor(t.shape, rng, 0.1, 2.0);
      }
      servers.push_back(std::move(s));
    }
    const auto before = servers;
    std::vector<model::ServerModel *> ptrs;
    for (auto &s : servers) ptrs.push_back(&s);
    train::cross_layer_aggregate(ptrs, layers);
    for (int l = 1; l <= L + 1; ++l) {
      std::vector<std::size_t> members;
      for (std::size_t i = 0; i < layers.size(); ++i)
        if (layers[i] < l) members.push_back(i);
      if (members.empty()) continue;
      auto group = [&](const model::ServerModel &s) -> const model::LayerState & {
        return l == L + 1 ? s.head : s.layer(l);
      };
      for (auto i : members) {
        for (auto which : {&model::LayerState::params, &model::LayerState::buffers}) {
          for (const auto &[name, t] : group(servers[i]).*which) {
            for (std::size_t k = 0; k < t.numel(); ++k) {
              double sum = 0.0;
              for (auto m : members) sum += (group(before[m]).*which).at(name)[k];
              worst = std::max(worst, std::abs(t[k] - sum / static_cast<double>(members.size())));
            }
          }
        }
      }
    }
    const auto once = servers;
    train::cross_layer_aggregate(ptrs, layers);
    for (std::size_t i = 0; i < servers.size(); ++i)
      for (std::size_t g = 0; g < servers[i].layers.size(); ++g)
        for (const auto &[name, t] : servers[i].layers[g].params)
          idempotent &= t.values == once[i].layers[g].params.at(name).values;
  }
  report(worst <= 1e-15 && idempotent, "aggregation oracle",
         "100 random configs, N<=6, L<=6, max abs diff " + fmt("%.2e", worst) +
             (idempotent ? ", idempotent on consensus" : ", NOT idempotent"));
}

void hierarchical_independence() {
  const auto tr = data::synth_make(4, 40, 1, 8, 8, 0.5, 3, 0);
  const auto te = data::synth_make(4, 10, 1, 8, 8, 0.5, 3, 1);
  train::TrainData td{&tr, &te, {}};
  td.augment.norm = data::compute_normalization(tr);
  train::TrainConfig cfg;
  cfg.strategy = train::Strategy::sequential;
  cfg.end_layers = {1, 2, 3};
  cfg.rounds = 5;
  cfg.schedule.t_max = 5;
  cfg.batch_size = 16;
  cfg.seed = 12;
  const auto spec = model::resnet18_spec(4, 4, 1, 8, 8, {1, 16});
  const auto on = train::run(cfg, spec, td);
  cfg.server_updates = false;
  const auto off = train::run(cfg, spec, td);
  bool same = true, server_moved = false;
  for (std::size_t i = 0; i < 3; ++i) same &= model_bytes(on.clients[i]) == model_bytes(off.clients[i]);
  server_moved = on.servers.front().head.params.begin()->second.values !=
                 off.servers.front().head.params.begin()->second.values;
  report(same && server_moved, "hierarchical independence",
         std::string("3-client sequential, T=5: client bytes ") + (same ? "identical" : "DIFFER") +
             " with server updates on/off" + (server_moved ? "" : " (server did not train)"));
}

void sweep_properties(const DeskRun &run) {
  const auto &r = run.out.result;
  const auto cfg = experiment::parse_config(desk_config("averaging"));
  const auto data = experiment::load_data(cfg.dataset);
  bool ok = true;
  std::string why;
  const double lnK = std::log(4.0);
  for (std::size_t i = 0; i < r.clients.size(); ++i) {
    const auto ck = model::load_checkpoint(run.out.dir / "checkpoints" / ("client_" + std::to_string(r.ids[i]) + ".splitee"));
    const auto pc = infer::cache_paths(ck.client, ck.server, data.test, data.norm);
    const auto pts = infer::sweep(pc, infer::Grid{}.values());
    const auto ends = infer::sweep(pc, {0.0, lnK + 0.1});
    const auto direct = train::predict_paths(ck.client, ck.server, data.test, data.norm, 256, 0);
    auto check = [&](bool c, const std::string &what) {
      if (!c && why.empty()) why = "client " + std::to_string(r.ids[i]) + ": " + what;
      ok &= c;
    };
    check(pts.size() == 81, "grid size");
    check(ends[0].client_ratio == 0.0, "client_ratio(0) != 0");
    check(ends[1].client_ratio == 1.0, "client_ratio(lnK+0.1) != 1");
    for (std::size_t k = 1; k < pts.size(); ++k) check(pts[k].client_ratio >= pts[k - 1].client_ratio, "not monotone");
    check(ends[0].accuracy == train::accuracy(direct.server, direct.labels), "server endpoint");
    check(ends[1].accuracy == train::accuracy(direct.client, direct.labels), "client endpoint");
  }
  report(ok, "sweep properties",
         ok ? std::to_string(r.clients.size()) + " trained desk clients, 81-point grid, endpoints exact" : why);
}

void cosine_endpoints() {
  nn::CosineSchedule s;
  s.lr_max = 0.001;
  s.lr_min = 1e-6;
  s.t_max = 600;
  const double a = nn::cosine_lr(s, 0), b = nn::cosine_lr(s, 600);
  report(std::abs(a - 0.001) <= 1e-12 && std::abs(b - 1e-6) <= 1e-12, "cosine schedule endpoints",
         "lr(0)=" + fmt("%.12g", a) + ", lr(600)=" + fmt("%.12g", b));
}

void determinism(const DeskRun &serial, const DeskRun &parallel) {
  std::size_t compared = 0;
  std::string differ;
  for (const auto &e : fs::recursive_directory_iterator(serial.out.dir)) {
    if (!e.is_regular_file() || e.path().filename() == "timing.jsonl") continue;
    const auto rel = fs::relative(e.path(), serial.out.dir);
    ++compared;
    if (slurp(e.path()) != slurp(parallel.out.dir / rel) && differ.empty()) differ = rel.string();
  }
  report(differ.empty() && compared >= 8, "determinism",
         "desk averaging, workers 1 vs 4: " + std::to_string(compared) + " files " +
             (differ.empty() ? "byte-identical" : "differ at " + differ));
}

void convergence(const DeskRun &avg, const DeskRun &seq) {
  for (const auto *d : {&seq, &avg}) {
    const auto name = train::strategy_name(d->out.result.strategy);
    report(d->min_server >= 0.9 && d->seconds < 300.0, "desk convergence (" + name + ")",
           "server-path accuracy min " + fmt("%.3f", d->min_server) + " mean " + fmt("%.3f", d->mean_server) +
               " (need >= 0.900), " + fmt("%.1f s (limit 300 s)", d->seconds));
  }
}

void collaboration_benefit() {
  std::map<train::Strategy, double> mean;
  const auto t0 = Clock::now();
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto tr = data::synth_make(4, 75, 1, 8, 8, 1.0, seed, 0);
    const auto te = data::synth_make(4, 100, 1, 8, 8, 1.0, seed, 1);
    train::TrainData td{&tr, &te, {}};
    td.augment.norm = data::compute_normalization(tr);
    const auto spec = model::resnet18_spec(4, 4, 1, 8, 8, {1, 8});
    for (auto s : {train::Strategy::centralized, train::Strategy::averaging, train::Strategy::distributed}) {
      train::TrainConfig cfg;
      cfg.strategy = s;
      cfg.end_layers.assign(6, 1);
      cfg.rounds = 20;
      cfg.schedule.t_max = 20;
      cfg.local_epochs = 5;
      cfg.batch_size = 16;
      cfg.seed = seed;
      cfg.eval_every = cfg.rounds;
      const auto r = train::run(cfg, spec, td);
      double m = 0.0;
      for (const auto &c : r.logs.back().clients) m += *c.server_accuracy;
      mean[s] += m / static_cast<double>(r.logs.back().clients.size()) / 3.0;
    }
  }
  const double c = mean[train::Strategy::centralized], a = mean[train::Strategy::averaging],
               d = mean[train::Strategy::distributed];
  report(c >= a && a >= d && a - d >= 0.02, "collaboration benefit",
         "hard 4-class, 6 clients, 3 seeds: centralized " + fmt("%.3f", c) + " >= averaging " + fmt("%.3f", a) +
             " >= distributed " + fmt("%.3f", d) + ", margin " + fmt("%.1f pts", 100.0 * (a - d)) + " (need 2), " +
             fmt("%.0f s", seconds_since(t0)));
}

} // namespace

int main() {
  fs::remove_all(scratch());
  fs::create_directories(scratch());
  criterion("cosine schedule endpoints", cosine_endpoints);
  criterion("gradient suite", gradient_suite);
  criterion("split-compose identity", split_compose);
  criterion("aggregation oracle", aggregation_oracle);
  criterion("hierarchical independence", hierarchical_independence);
  criterion("paper-scale dry run", paper_scale);
  try {
    const auto serial = desk_run("averaging", "desk-avg-w1", 1);
    const auto parallel = desk_run("averaging", "desk-avg-w4", 4);
    const auto seq = desk_run("sequential", "desk-seq", 1);
    criterion("determinism", [&] { determinism(serial, parallel); });
    criterion("desk convergence", [&] { convergence(serial, seq); });
    criterion("sweep properties", [&] { sweep_properties(serial); });
  } catch (const std::exception &e) {
    report(false, "desk runs", std::string("threw: ") + e.what());
  }
  criterion("collaboration benefit", collaboration_benefit);
  fs::remove_all(scratch());
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
