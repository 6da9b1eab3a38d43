#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fca/experiment.hpp"
#include "fca/partition.hpp"

using namespace fca;
using namespace fca::experiment;

namespace {

// A grid small enough that run() finishes in well under a second per cell.
const char* kTinyConfig = R"({
  "data": {"type": "synthetic", "num_classes": 3, "dim": 4,
           "class_counts": [40, 30, 20], "separation": 5.0, "within_std": 1.0},
  "partition": {"preset": "custom", "num_clients": 2,
                "per_class_alpha": [10.0, 10.0, 10.0],
                "missing_class_prob": 0.0, "train_fraction": 0.8},
  "model": {"hidden_dims": [6]},
  "rounds": {"total_rounds": 2, "local_epochs": 1, "batch_size": 16,
             "base_lr": 0.001, "lr_milestones": [1], "lr_factor": 0.1,
             "weight_decay": 0.0005, "eval_every": 0},
  "loss": {"lambda1": 1.0, "lambda2": 3.0},
  "methods": ["fca", "fedavg_bsm"],
  "seeds": [1, 2],
  "output_dir": "unused"
})";

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name)
      : path(std::filesystem::temp_directory_path() / ("fca_exp_" + name)) {
    std::filesystem::remove_all(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::set<std::string> dir_entries(const std::filesystem::path& dir) {
  std::set<std::string> names;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    names.insert(e.path().filename().string());
  return names;
}

bool same_stat(const MetricStat& a, const MetricStat& b) {
  auto eq = [](double x, double y) { return (std::isnan(x) && std::isnan(y)) || x == y; };
  return eq(a.mean, b.mean) && eq(a.std, b.std);
}

}  // namespace

TEST_CASE("minimal config fills documented defaults") {
  auto cfg = parse_config_text("{}");
  CHECK(cfg.data.synthetic);
  CHECK(cfg.data.synth.num_classes == 5);
  CHECK(cfg.data.synth.class_counts == std::vector<std::size_t>{60, 250, 600, 1200, 2000});
  CHECK(cfg.data.synth.seed == 0);
  CHECK(cfg.partition.preset == "split2");
  CHECK(cfg.partition.num_clients == 10);
  CHECK(cfg.partition.seed == 0);
  CHECK(cfg.hidden_dims == std::vector<std::size_t>{32, 16});
  CHECK(cfg.plan.total_rounds == 60);
  CHECK(cfg.plan.lr_milestones == std::vector<std::size_t>{45, 52});
  CHECK(cfg.plan.weights.lambda1 == 1.0);
  CHECK(cfg.plan.weights.lambda2 == 3.0);
  CHECK(cfg.plan.weights.consistency_enabled);
  CHECK(cfg.method_list == std::vector<std::string>{"fca"});
  CHECK(cfg.method_preset.empty());
  CHECK(cfg.seeds == std::vector<std::uint64_t>{1, 2, 3, 4, 5});
  CHECK(cfg.output_dir == "runs/out");
}

TEST_CASE("derived lr milestones scale with the horizon") {
  auto cfg = parse_config_text(R"({"rounds": {"total_rounds": 80}})");
  CHECK(cfg.plan.lr_milestones == std::vector<std::size_t>{60, 70});
  cfg = parse_config_text(R"({"rounds": {"total_rounds": 8}})");
  CHECK(cfg.plan.lr_milestones == std::vector<std::size_t>{6, 7});
  // explicit milestones are taken verbatim
  cfg = parse_config_text(R"({"rounds": {"total_rounds": 8, "lr_milestones": [2, 5]}})");
  CHECK(cfg.plan.lr_milestones == std::vector<std::size_t>{2, 5});
}

TEST_CASE("unknown keys are errors naming the key") {
  CHECK_THROWS_WITH_AS(parse_config_text(R"({"loss": {"lamda1": 2}})"),
                       doctest::Contains("lamda1"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config_text(R"({"runds": {}})"), doctest::Contains("runds"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(parse_config_text(R"({"data": {"type": "synthetic", "dims": 4}})"),
                       doctest::Contains("dims"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config_text(R"({"rounds": {"batchsize": 8}})"),
                       doctest::Contains("batchsize"), ConfigError);
}

TEST_CASE("loss preset table5_best sets the best lambda pair") {
  auto cfg = parse_config_text(R"({"loss": {"preset": "table5_best"}})");
  CHECK(cfg.plan.weights.lambda1 == 1.0);
  CHECK(cfg.plan.weights.lambda2 == 3.0);
  // the preset refuses to silently fight explicit values
  CHECK_THROWS_AS(parse_config_text(R"({"loss": {"preset": "table5_best", "lambda2": 1}})"),
                  ConfigError);
  CHECK_THROWS_WITH_AS(parse_config_text(R"({"loss": {"preset": "table9"}})"),
                       doctest::Contains("table9"), ConfigError);
}

TEST_CASE("config validation rejects bad values with field context") {
  CHECK_THROWS_AS(parse_config_text(R"({"seeds": []})"), ConfigError);
  CHECK_THROWS_AS(parse_config_text(R"({"methods": []})"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config_text(R"({"methods": ["fedsgd"]})"),
                       doctest::Contains("fedsgd"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config_text(R"({"methods": ["fca", "fca"]})"),
                       doctest::Contains("duplicate"), ConfigError);
  CHECK_THROWS_AS(parse_config_text(R"({"model": {"hidden_dims": []}})"), ConfigError);
  CHECK_THROWS_AS(parse_config_text(R"({"model": {"hidden_dims": [8, 0]}})"), ConfigError);
  CHECK_THROWS_AS(parse_config_text(R"({"loss": {"direction": "sideways"}})"), ConfigError);
  CHECK_THROWS_AS(parse_config_text(R"({"partition": {"preset": "split3"}})"), ConfigError);
  // alphas only make sense for a custom partition
  CHECK_THROWS_AS(
      parse_config_text(R"({"partition": {"preset": "split2", "per_class_alpha": [1.0]}})"),
      ConfigError);
  // milestone ordering is checked through the round-plan validator
  CHECK_THROWS_AS(
      parse_config_text(R"({"rounds": {"total_rounds": 10, "lr_milestones": [7, 7]}})"),
      ConfigError);
  CHECK_THROWS_AS(parse_config_text(R"({"data": {"type": "sql"}})"), ConfigError);
  CHECK_THROWS_AS(parse_config_text(R"({"data": {"type": "csv"}})"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("not json"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("[1, 2]"), ConfigError);
}

TEST_CASE("parse -> emit -> parse is identity") {
  const char* variants[] = {
      "{}",
      kTinyConfig,
      R"({"methods": "table5", "loss": {"direction": "bidirectional"}})",
      R"({"data": {"type": "csv", "path": "x.csv", "feature_columns": ["a", "b"],
          "label_column": "y", "num_classes": 4}})",
  };
  for (const char* text : variants) {
    CAPTURE(text);
    auto first = parse_config_text(text);
    auto emitted = emit_config(first);
    auto second = parse_config_text(emitted);
    CHECK(emit_config(second) == emitted);
  }
}

TEST_CASE("method preset grids have the published shapes") {
  auto cfg = parse_config_text(R"({"methods": "table4"})");
  auto v4 = make_variants(cfg);
  REQUIRE(v4.size() == 6);
  CHECK(v4[0].label == "local");
  CHECK(v4[5].label == "fca");
  CHECK(v4[1].method == fed::Method::fedavg_ce);

  cfg = parse_config_text(R"({"methods": "table5"})");
  auto v5 = make_variants(cfg);
  REQUIRE(v5.size() == 10);  // five lambda pairs x consistency on/off
  CHECK(v5[0].label == "fca_l1_1_l2_1_cr_on");
  CHECK(v5[1].label == "fca_l1_1_l2_1_cr_off");
  CHECK(v5[5].label == "fca_l1_1_l2_3_cr_off");
  CHECK(v5[4].weights.lambda2 == 3.0);
  CHECK(v5[4].weights.consistency_enabled);
  CHECK_FALSE(v5[5].weights.consistency_enabled);
  for (const auto& v : v5) CHECK(v.method == fed::Method::fca);

  cfg = parse_config_text(R"({"methods": "table6"})");
  auto v6 = make_variants(cfg);
  REQUIRE(v6.size() == 3);
  CHECK(v6[0].weights.direction == losses::ConsistencyDirection::personalized_guides_federated);
  CHECK(v6[1].weights.direction == losses::ConsistencyDirection::federated_guides_personalized);
  CHECK(v6[2].weights.direction == losses::ConsistencyDirection::bidirectional);

  // explicit lists pass the configured loss weights through unchanged
  cfg = parse_config_text(R"({"methods": ["fedprox"], "loss": {"lambda2": 2}})");
  auto vx = make_variants(cfg);
  REQUIRE(vx.size() == 1);
  CHECK(vx[0].method == fed::Method::fedprox);
  CHECK(vx[0].weights.lambda2 == 2.0);
}

TEST_CASE("run writes exactly the documented artifacts") {
  TempDir dir("artifacts");
  auto cfg = parse_config_text(kTinyConfig);
  cfg.output_dir = dir.path.string();
  auto summary = run(cfg);

  CHECK(dir_entries(dir.path) ==
        std::set<std::string>{"config.json", "summary.json", "fca_seed1.csv", "fca_seed2.csv",
                              "fedavg_bsm_seed1.csv", "fedavg_bsm_seed2.csv"});
  REQUIRE(summary.cells.size() == 4);
  REQUIRE(summary.variants.size() == 2);
  CHECK(summary.variants[0].label == "fca");
  CHECK(summary.variants[1].label == "fedavg_bsm");
  CHECK(summary.variants[0].n_seeds == 2);

  // the config copy is the canonical emission and parses back
  CHECK(slurp(dir.path / "config.json") == emit_config(cfg));
  CHECK_NOTHROW(parse_config_text(slurp(dir.path / "config.json")));

  // summary.json round-trips through load_summary
  auto loaded = load_summary(dir.path.string());
  REQUIRE(loaded.variants.size() == 2);
  CHECK(same_stat(loaded.variants[0].avg_bacc, summary.variants[0].avg_bacc));
  CHECK(same_stat(loaded.variants[1].gen_bauc, summary.variants[1].gen_bauc));
  REQUIRE(loaded.cells.size() == 4);
  CHECK(loaded.cells[0].label == summary.cells[0].label);
  CHECK(loaded.cells[0].seed == summary.cells[0].seed);
  CHECK(loaded.cells[0].final_record.spec_bacc == summary.cells[0].final_record.spec_bacc);
}

TEST_CASE("cell csv structure: fixed header, client rows, ALL rows") {
  TempDir dir("csv");
  auto cfg = parse_config_text(kTinyConfig);
  cfg.output_dir = dir.path.string();
  cfg.seeds = {1};
  cfg.method_list = {"fca"};
  cfg.plan.eval_every = 1;  // a record per round
  run(cfg);

  std::istringstream csv(slurp(dir.path / "fca_seed1.csv"));
  std::string line;
  REQUIRE(std::getline(csv, line));
  CHECK(line == "round,client_id,split,bACC,bAUC");
  std::vector<std::string> rows;
  while (std::getline(csv, line)) rows.push_back(line);
  // 2 rounds x (2 client spec rows + ALL spec + ALL gen)
  REQUIRE(rows.size() == 8);
  CHECK(rows[0].substr(0, 9) == "0,0,spec,");
  CHECK(rows[1].substr(0, 9) == "0,1,spec,");
  CHECK(rows[2].substr(0, 11) == "0,ALL,spec,");
  CHECK(rows[3].substr(0, 10) == "0,ALL,gen,");
  CHECK(rows[4].substr(0, 9) == "1,0,spec,");
  for (const auto& r : rows) {
    // header names exactly five comma-separated fields per row
    CHECK(std::count(r.begin(), r.end(), ',') == 4);
  }
}

TEST_CASE("rerun reproduces every artifact bitwise") {
  TempDir a("rerun_a");
  TempDir b("rerun_b");
  auto cfg = parse_config_text(kTinyConfig);
  cfg.output_dir = a.path.string();
  run(cfg);
  cfg.output_dir = b.path.string();
  run(cfg);
  for (const auto& name : dir_entries(a.path)) {
    CAPTURE(name);
    if (name == "config.json") continue;  // differs by output_dir on purpose
    CHECK(slurp(a.path / name) == slurp(b.path / name));
  }
}

TEST_CASE("parallel execution matches serial bitwise") {
  TempDir serial("par_serial");
  TempDir parallel("par_parallel");
  auto cfg = parse_config_text(kTinyConfig);
  cfg.output_dir = serial.path.string();
  run(cfg);
  cfg.output_dir = parallel.path.string();
  RunOptions opts;
  opts.parallel = 4;
  run(cfg, opts);
  CHECK(slurp(serial.path / "summary.json") == slurp(parallel.path / "summary.json"));
  for (const auto& name : dir_entries(serial.path)) {
    if (name == "config.json") continue;
    CAPTURE(name);
    CHECK(slurp(serial.path / name) == slurp(parallel.path / name));
  }
}

TEST_CASE("out override and checkpoint cadence") {
  TempDir ignored("ckpt_ignored");
  TempDir actual("ckpt_actual");
  auto cfg = parse_config_text(kTinyConfig);
  cfg.output_dir = ignored.path.string();
  cfg.seeds = {1};
  cfg.method_list = {"fca"};
  RunOptions opts;
  opts.out_override = actual.path.string();
  opts.checkpoint_every = 1;
  run(cfg, opts);
  CHECK_FALSE(std::filesystem::exists(ignored.path));
  auto names = dir_entries(actual.path);
  CHECK(names.count("fca_seed1_round1.ckpt") == 1);
  CHECK(names.count("fca_seed1_round2.ckpt") == 1);
  // checkpoints restore cleanly
  std::ifstream ck(actual.path / "fca_seed1_round1.ckpt", std::ios::binary);
  auto state = fed::load_checkpoint(ck);
  CHECK(state.server.round == 1);
  CHECK(state.clients.size() == 2);
}

TEST_CASE("errors carry method and seed context") {
  // a partition that cannot produce usable shards: more clients than samples
  TempDir dir("err");
  auto cfg = parse_config_text(R"({
    "data": {"type": "synthetic", "num_classes": 3, "dim": 4,
             "class_counts": [3, 3, 3], "separation": 5.0, "within_std": 1.0},
    "partition": {"preset": "custom", "num_clients": 8,
                  "per_class_alpha": [0.1, 0.1, 0.1],
                  "missing_class_prob": 0.9, "train_fraction": 0.8},
    "model": {"hidden_dims": [4]},
    "rounds": {"total_rounds": 1, "batch_size": 4, "lr_milestones": [], "eval_every": 0},
    "methods": ["fca"],
    "seeds": [7]
  })");
  cfg.output_dir = dir.path.string();
  CHECK_THROWS_WITH_AS(run(cfg), doctest::Contains("seed 7"), partition::PartitionError);
}

TEST_CASE("summary json preserves full precision and NaN slots") {
  RunSummary s;
  VariantSummary v;
  v.label = "probe";
  v.n_seeds = 2;
  v.spec_bacc = {0.1234567890123456789, 0.000123456789012345};
  v.spec_bauc = {std::numeric_limits<double>::quiet_NaN(), 0.0};
  v.gen_bacc = {1.0 / 3.0, 2.0 / 7.0};
  v.gen_bauc = {0.5, 0.25};
  v.avg_bacc = {0.75, 0.125};
  v.avg_bauc = {std::nextafter(0.9, 1.0), 0.0};
  s.variants.push_back(v);
  CellResult c;
  c.label = "probe";
  c.seed = 11;
  c.csv_path = "probe_seed11.csv";
  c.final_record.round = 1;
  c.final_record.method = "fca";
  c.final_record.spec_bacc = 1.0 / 7.0;
  c.final_record.spec_bauc = std::numeric_limits<double>::quiet_NaN();
  c.final_record.gen_bacc = 0.9999999999999999;
  c.final_record.gen_bauc = 1.0;
  c.final_record.avg_bacc = 0.57142857142857151;
  c.final_record.avg_bauc = 0.625;
  s.cells.push_back(c);

  auto restored = summary_from_json(summary_to_json(s));
  REQUIRE(restored.variants.size() == 1);
  CHECK(same_stat(restored.variants[0].spec_bacc, v.spec_bacc));
  CHECK(same_stat(restored.variants[0].spec_bauc, v.spec_bauc));
  CHECK(same_stat(restored.variants[0].gen_bacc, v.gen_bacc));
  CHECK(same_stat(restored.variants[0].avg_bauc, v.avg_bauc));
  REQUIRE(restored.cells.size() == 1);
  CHECK(restored.cells[0].final_record.spec_bacc == c.final_record.spec_bacc);
  CHECK(std::isnan(restored.cells[0].final_record.spec_bauc));
  CHECK(restored.cells[0].final_record.gen_bacc == c.final_record.gen_bacc);

  CHECK_THROWS_AS(summary_from_json("not json"), std::runtime_error);
  CHECK_THROWS_AS(summary_from_json(R"({"variants": [{"label": "x"}], "cells": []})"),
                  std::runtime_error);
}

TEST_CASE("summary table formats percent entries with one decimal") {
  RunSummary s;
  VariantSummary v;
  v.label = "fca";
  v.n_seeds = 5;
  v.spec_bacc = {0.751, 0.004};
  v.spec_bauc = {0.916, 0.004};
  v.gen_bacc = {0.733, 0.011};
  v.gen_bauc = {0.925, 0.002};
  v.avg_bacc = {0.742, 0.005};
  v.avg_bauc = {0.9214, 0.003};
  s.variants.push_back(v);
  VariantSummary w = v;
  w.label = "local_only_long_label";
  w.spec_bauc = {std::numeric_limits<double>::quiet_NaN(), 0.0};
  s.variants.push_back(w);

  auto table = format_summary_table(s);
  CHECK(table.find("method") == 0);
  CHECK(table.find("S-bACC") != std::string::npos);
  CHECK(table.find("Avg-bAUC") != std::string::npos);
  CHECK(table.find("75.1±0.4") != std::string::npos);
  CHECK(table.find("92.1±0.3") != std::string::npos);  // avg bauc of the first row, rounded
  CHECK(table.find("n/a") != std::string::npos);       // NaN slot prints as n/a
  // two data rows plus the header
  CHECK(std::count(table.begin(), table.end(), '\n') == 3);
}
