#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "splitee/experiment/config.hpp"
#include "splitee/experiment/report.hpp"

using namespace splitee;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

/// Runs the CLI through the shell; stderr is folded into the output.
Result cli(const std::string &args, const std::string &env = "") {
  const std::string cmd = env + " " + SPLITEE_CLI_PATH + " " + args + " 2>&1";
  Result r;
  FILE *p = popen(cmd.c_str(), "r");
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void spit(const fs::path &p, const std::string &text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << text;
}

std::size_t lines(const std::string &s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

json tiny(const std::string &strategy) {
  return {{"name", "tiny-" + strategy},
          {"seed", 5},
          {"strategy", strategy},
          {"dataset",
           {{"kind", "synthetic"},
            {"num_classes", 3},
            {"train_per_class", 12},
            {"test_per_class", 6},
            {"channels", 1},
            {"height", 8},
            {"width", 8},
            {"difficulty", "easy"}}},
          {"model", {{"depth", 3}, {"channel_scale", "1/16"}}},
          {"clients", {{"end_layers", {1, 2}}}},
          {"training", {{"rounds", 2}, {"batch_size", 6}}}};
}

class Cli : public ::testing::Test {
protected:
  fs::path dir;

  void SetUp() override {
    dir = fs::temp_directory_path() /
          ("splitee_cli_" + std::to_string(getpid()) + "_" +
           ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }

  fs::path write_config(const std::string &name, const json &j) {
    const auto p = dir / (name + ".json");
    spit(p, j.dump(2));
    return p;
  }

  /// Trains `j` into dir/name and returns the run directory.
  fs::path train(const std::string &name, json j, const std::string &extra = "") {
    const auto out = dir / name;
    const auto r = cli("train -c " + write_config(name, j).string() + " -o " + out.string() + " " + extra);
    EXPECT_EQ(r.code, 0) << r.out;
    return out;
  }
};

} // namespace

TEST(ConfigParse, RoundTripsThroughJson) {
  const auto c = experiment::parse_config(tiny("sequential"));
  const auto j = experiment::to_json(c);
  EXPECT_EQ(experiment::to_json(experiment::parse_config(j)), j);
  EXPECT_EQ(c.train.divisor(), 2.0);
  EXPECT_EQ(c.train.schedule.t_max, 2);
  EXPECT_EQ(c.dataset.seed, 5u);
}

TEST(ConfigParse, FieldPathDiagnostics) {
  auto expect_msg = [](json j, const std::string &needle) {
    try {
      experiment::parse_config(j);
      ADD_FAILURE() << "accepted config, expected error mentioning " << needle;
    } catch (const config_error &e) {
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  };
  auto j = tiny("averaging");
  j.erase("strategy");
  expect_msg(j, "strategy: required");
  j = tiny("averaging");
  j["strategy"] = "gossip";
  expect_msg(j, "strategy: unknown strategy 'gossip'");
  j = tiny("averaging");
  j["training"]["batch_size"] = 1;
  expect_msg(j, "training.batch_size");
  j = tiny("averaging");
  j["training"]["batchsize"] = 4;
  expect_msg(j, "training.batchsize: unknown field");
  j = tiny("averaging");
  j["clients"]["end_layers"] = {1, 4};
  expect_msg(j, "clients.end_layers: end layer 4 outside [1,3]");
  j = tiny("averaging");
  j["dataset"] = {{"kind", "cifar10"}, {"path", "/nonexistent/cifar"}};
  expect_msg(j, "dataset.path");
  j = tiny("averaging");
  j["schema_version"] = 2;
  expect_msg(j, "schema_version");
  j = tiny("averaging");
  j["sweep"] = {{"step", 0.0}};
  expect_msg(j, "sweep");
}

TEST(ConfigParse, PaperPresetShape) {
  const auto c = experiment::parse_config(experiment::paper_scale_config(), false);
  EXPECT_EQ(c.train.strategy, train::Strategy::averaging);
  EXPECT_EQ(c.train.end_layers, (std::vector<int>{3, 3, 3, 3, 4, 4, 4, 4, 5, 5, 5, 5}));
  EXPECT_EQ(c.train.rounds, 600);
  EXPECT_EQ(c.train.local_epochs, 1);
  EXPECT_EQ(c.train.batch_size, 1024u);
  EXPECT_EQ(c.train.schedule.lr_max, 0.001);
  EXPECT_EQ(c.train.schedule.lr_min, 1e-6);
  EXPECT_EQ(c.train.schedule.t_max, 600);
  EXPECT_EQ(c.train.divisor(), 12.0);
  EXPECT_EQ(c.depth, 6);
  EXPECT_EQ(c.channel_scale.str(), "1");
  EXPECT_EQ(c.dataset.kind, "cifar10");
}

TEST_F(Cli, MissingStrategyExitsTwo) {
  auto j = tiny("averaging");
  j.erase("strategy");
  const auto r = cli("train -c " + write_config("bad", j).string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("strategy"), std::string::npos) << r.out;
}

TEST_F(Cli, ArgumentErrorsExitTwo) {
  EXPECT_EQ(cli("").code, 2);
  EXPECT_EQ(cli("train --bogus").code, 2);
  EXPECT_EQ(cli("train").code, 2);
  EXPECT_EQ(cli("train -c " + (dir / "absent.json").string()).code, 2);
  spit(dir / "broken.json", "{ not json");
  EXPECT_EQ(cli("train -c " + (dir / "broken.json").string()).code, 2);
}

TEST_F(Cli, PaperScaleConfigIsAcceptedAndEchoed) {
  const auto r = cli("train --paper-scale");
  ASSERT_EQ(r.code, 0) << r.out;
  const auto j = json::parse(r.out);
  EXPECT_EQ(j["strategy"], "averaging");
  EXPECT_EQ(j["clients"]["end_layers"].size(), 12u);
  EXPECT_EQ(j["training"]["rounds"], 600);
  EXPECT_EQ(j["training"]["batch_size"], 1024);
  // the same document, given as a config, is echoed unchanged by --check
  auto doc = experiment::paper_scale_config();
  doc["dataset"] = tiny("averaging")["dataset"];
  doc["dataset"]["num_classes"] = 10;
  doc["dataset"]["channels"] = 3;
  doc["dataset"]["height"] = doc["dataset"]["width"] = 32;
  const auto checked = cli("train --check -c " + write_config("paper", doc).string());
  ASSERT_EQ(checked.code, 0) << checked.out;
  EXPECT_EQ(json::parse(checked.out)["clients"]["end_layers"], doc["clients"]["end_layers"]);
}

TEST_F(Cli, TrainWritesArtifactsAndIsReproducible) {
  const auto a = train("a", tiny("averaging"));
  const auto b = train("b", tiny("averaging"), "--workers 3");
  for (const char *f : {"rounds.jsonl", "manifest.json", "summary.json", "summary.csv", "summary.txt",
                        "checkpoints/client_1.splitee", "checkpoints/client_2.splitee"}) {
    ASSERT_TRUE(fs::exists(a / f)) << f;
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
  EXPECT_EQ(lines(slurp(a / "rounds.jsonl")), 2u);
  EXPECT_EQ(lines(slurp(a / "timing.jsonl")), 2u);
  const auto manifest = json::parse(slurp(a / "manifest.json"));
  EXPECT_EQ(manifest["config"]["clients"]["end_layers"], json({1, 2}));
  EXPECT_TRUE(manifest["counters"]["aggregation_messages"].get<int>() > 0);
}

TEST_F(Cli, SeedFromEnvironment) {
  const auto base = cli("train --check -c " + write_config("c", tiny("averaging")).string());
  const auto over = cli("train --check -c " + (dir / "c.json").string(), "SPLITEE_SEED=77");
  ASSERT_EQ(over.code, 0) << over.out;
  EXPECT_EQ(json::parse(base.out)["seed"], 5);
  EXPECT_EQ(json::parse(over.out)["seed"], 77);
  EXPECT_EQ(json::parse(over.out)["dataset"]["seed"], 77);
  EXPECT_EQ(cli("train --check -c " + (dir / "c.json").string(), "SPLITEE_SEED=x1").code, 2);
}

TEST_F(Cli, SweepGridRowsAndDeterminism) {
  const auto run = train("run", tiny("sequential"));
  const auto ck = (run / "checkpoints" / "client_2.splitee").string();
  const auto def = cli("sweep -k " + ck);
  ASSERT_EQ(def.code, 0) << def.out;
  EXPECT_EQ(lines(def.out), 82u); // header + 81
  EXPECT_EQ(def.out.substr(0, def.out.find('\n')), "tau,accuracy,client_ratio,server_ratio,avg_entropy");
  const auto coarse = cli("sweep -k " + ck + " --grid 0:1:0.5");
  EXPECT_EQ(lines(coarse.out), 4u);
  const auto csv = dir / "s.csv";
  ASSERT_EQ(cli("sweep -k " + ck + " --out-csv " + csv.string() + " --out-json " + (dir / "s.json").string() +
                " --trace " + (dir / "t.csv").string())
                .code,
            0);
  const auto first = slurp(csv);
  ASSERT_EQ(cli("sweep -k " + ck + " --out-csv " + csv.string()).code, 0);
  EXPECT_EQ(slurp(csv), first);
  EXPECT_EQ(first, def.out);
  EXPECT_EQ(json::parse(slurp(dir / "s.json"))["points"].size(), 81u);
  EXPECT_EQ(lines(slurp(dir / "t.csv")), 19u); // 18 test samples
  const auto conf = cli("sweep -k " + ck + " --confidence-axis --grid 0:4:2");
  EXPECT_EQ(conf.out.substr(0, conf.out.find('\n')), "confidence,accuracy,client_ratio,server_ratio,avg_entropy");
}

TEST_F(Cli, SweepErrors) {
  const auto run = train("run", tiny("distributed"));
  const auto ck = (run / "checkpoints" / "client_1.splitee").string();
  EXPECT_EQ(cli("sweep -k " + ck + " --grid 1:0:0.1").code, 2);
  // dataset with a different shape than the network
  auto other = tiny("distributed");
  other["dataset"]["height"] = other["dataset"]["width"] = 6;
  ASSERT_EQ(cli("export-data -c " + write_config("o", other).string() + " -o " + (dir / "other").string()).code, 0);
  EXPECT_EQ(cli("sweep -k " + ck + " -d " + (dir / "other" / "test.splitee").string()).code, 2);
  spit(dir / "junk.splitee", "definitely not a container");
  EXPECT_EQ(cli("sweep -k " + (dir / "junk.splitee").string()).code, 4);
  EXPECT_EQ(cli("sweep -k " + (dir / "missing.splitee").string()).code, 4);
}

TEST_F(Cli, SweepOnExportedData) {
  const auto run = train("run", tiny("distributed"));
  ASSERT_EQ(cli("export-data -c " + (dir / "run.json").string() + " -o " + (dir / "data").string()).code, 0);
  const auto ck = (run / "checkpoints" / "client_1.splitee").string();
  EXPECT_EQ(cli("sweep -k " + ck).out, cli("sweep -k " + ck + " -d " + (dir / "data" / "test.splitee").string()).out);
}

TEST_F(Cli, ReportOrderingAndConsistency) {
  train("runs/dist", tiny("distributed"));
  train("runs/seq", tiny("sequential"));
  const auto r = cli("report " + (dir / "runs").string() + " --csv " + (dir / "table.csv").string());
  ASSERT_EQ(r.code, 0) << r.out;
  const auto seq = r.out.find("Sequential"), dist = r.out.find("Distributed");
  ASSERT_NE(seq, std::string::npos);
  ASSERT_NE(dist, std::string::npos);
  EXPECT_LT(seq, dist);
  EXPECT_EQ(r.out.find("Averaging"), std::string::npos);
  // both renderings come from one table: same cells in the same order
  const auto csv = slurp(dir / "table.csv");
  auto tokens = [](std::string s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
      if (ch == sep || ch == '\n' || (sep == ' ' && ch == ' ')) {
        if (!cur.empty()) out.push_back(cur);
        cur.clear();
      } else {
        cur += ch;
      }
    }
    return out;
  };
  auto numbers = [](std::vector<std::string> v) {
    std::vector<std::string> out;
    for (auto &s : v)
      if (!s.empty() && (std::isdigit(static_cast<unsigned char>(s[0])) || s == "-")) out.push_back(s);
    return out;
  };
  EXPECT_EQ(numbers(tokens(csv, ',')), numbers(tokens(r.out, ' ')));
  EXPECT_EQ(lines(csv), 5u);
  const auto header = csv.substr(0, csv.find('\n'));
  EXPECT_EQ(header, "method,location,synthetic-3 L1,synthetic-3 L2");
}

TEST_F(Cli, ReportSingleRunHasBothLocations) {
  train("runs/dist", tiny("distributed"));
  const auto t = experiment::build_report(dir / "runs");
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[0][0], "Distributed");
  EXPECT_EQ(t.rows[0][1], "Server");
  EXPECT_EQ(t.rows[1][1], "Client");
}

TEST_F(Cli, ReportEmptyDirectoryExitsTwo) {
  fs::create_directories(dir / "empty");
  EXPECT_EQ(cli("report " + (dir / "empty").string()).code, 2);
  EXPECT_EQ(cli("report " + (dir / "nope").string()).code, 2);
}

TEST(Report, CellsAreMeansOverClientsAndRuns) {
  auto summary = [](const std::string &strategy, double s1, double s2) {
    return json{{"strategy", strategy},
                {"dataset", "d"},
                {"clients",
                 {{{"end_layer", 3}, {"server_accuracy", s1}, {"client_accuracy", 0.5}},
                  {{"end_layer", 3}, {"server_accuracy", s2}, {"client_accuracy", 0.25}}}}};
  };
  const auto t = experiment::build_report(
      std::vector<json>{summary("averaging", 0.5, 0.7), summary("averaging", 0.9, 0.9), summary("sequential", 1, 1)});
  ASSERT_EQ(t.rows.size(), 4u);
  EXPECT_EQ(t.rows[0][0], "Sequential");
  EXPECT_EQ(t.rows[2][0], "Averaging");
  EXPECT_EQ(t.rows[2][2], "75.00");
  EXPECT_EQ(t.rows[3][2], "37.50");
}

TEST_F(Cli, PartitionJson) {
  const auto r = cli("partition -m 10 -n 3 -s 4");
  ASSERT_EQ(r.code, 0) << r.out;
  const auto j = json::parse(r.out);
  std::vector<int> all;
  for (const auto &c : j["clients"])
    for (int i : c["indices"]) all.push_back(i);
  std::sort(all.begin(), all.end());
  EXPECT_EQ(all, (std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}));
  EXPECT_EQ(cli("partition -m 10 -n 0").code, 2);
}

TEST_F(Cli, DivergenceExitsThree) {
  auto j = tiny("averaging");
  j["training"]["lr_max"] = 1e300;
  j["training"]["lr_min"] = 1e299;
  const auto r = cli("train -c " + write_config("div", j).string() + " -o " + (dir / "div").string());
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.out.find("non-finite"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("round 1"), std::string::npos) << r.out;
}
