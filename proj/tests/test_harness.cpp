// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sparseforge/harness.hpp"

using namespace sparseforge;
namespace fs = std::filesystem;

namespace {

/// A run small enough for unit tests: 20 steps per epoch, three pruning epochs.
ExperimentConfig small_config() {
  ExperimentConfig cfg = recipe_preset("gmp-star-10ep");
  cfg.name = "small";
  cfg.task.train_size = 640;
  cfg.task.eval_size = 200;
  cfg.dense.epochs = 1;
  cfg.dense.lr.total_epochs = 1;
  cfg.pruning.epochs = 5;
  cfg.pruning.lr.cycle_epochs = 1;
  cfg.pruning.lr.total_epochs = 5;
  cfg.pruning.prune_frequency = 2;
  cfg.pruning.stabilization_epochs = 1;
  return cfg;
}

fs::path scratch(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("sparseforge_test_harness_" + name);
  fs::remove_all(dir);
  return dir;
}

std::vector<std::vector<std::string>> read_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::istringstream cell_in(line);
    std::string cell;
    while (std::getline(cell_in, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

int cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(SPARSEFORGE_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("analyze csv rows") {
  const auto rows = read_csv(analyze_csv(presets::roberta_large()));
  REQUIRE(rows.size() == 4);
  CHECK(rows[0] == std::vector<std::string>{"group", "params", "flops_per_token", "param_fraction", "flop_fraction"});
  CHECK(rows[2][0] == "encoder");
  CHECK(rows[2][1] == "301989888");
  CHECK(rows[2][2] == "603979776");
  CHECK(analyze_table(presets::roberta_large()).find("301.990") != std::string::npos);
}

TEST_CASE("median") {
  CHECK(median({3.0}) == 3.0);
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
  CHECK_THROWS_AS(median({}), ContractError);
}

TEST_CASE("sweep axes") {
  const ExperimentConfig base = small_config();
  CHECK(apply_axis(base, SweepAxis::Hardness, 0.5).pruning.kd->hardness == 0.5);
  CHECK(apply_axis(base, SweepAxis::Temperature, 2.0).pruning.kd->temperature == 2.0);
  CHECK(apply_axis(base, SweepAxis::InitStep, 0.3).pruning.sparsity.s_init == 0.3);
  const ExperimentConfig lr = apply_axis(base, SweepAxis::LR, 1e-3);
  CHECK(lr.pruning.lr.lr_init == 1e-3);
  CHECK(lr.pruning.lr.lr_final == doctest::Approx(1e-5));
  const ExperimentConfig target = apply_axis(base, SweepAxis::Target, 0.5);
  CHECK(target.pruning.sparsity.s_final == 0.5);
  CHECK(target.pruning.sparsity.s_init == 0.5);

  ExperimentConfig no_kd = base;
  no_kd.pruning.kd.reset();
  CHECK_THROWS_AS(apply_axis(no_kd, SweepAxis::Hardness, 0.5), ConfigError);
  CHECK_THROWS_AS(apply_axis(no_kd, SweepAxis::Temperature, 2.0), ConfigError);
  CHECK_THROWS_AS(apply_axis(base, SweepAxis::InitStep, 0.95), ConfigError);
  CHECK_THROWS_AS(apply_axis(base, SweepAxis::Hardness, 1.5), ConfigError);
  CHECK(sweep_axis_from_string("init_step") == SweepAxis::InitStep);
  CHECK_THROWS_AS(sweep_axis_from_string("dropout"), ConfigError);
}

TEST_CASE("sweeps write one row per value and seed") {
  const fs::path dir = scratch("sweep");
  const ExperimentConfig base = small_config();
  CHECK_THROWS_AS(run_sweep(base, SweepAxis::InitStep, {}, {0}, dir), ConfigError);
  CHECK_THROWS_AS(run_sweep(base, SweepAxis::InitStep, {0.5}, {}, dir), ConfigError);

  const SweepResult r = run_sweep(base, SweepAxis::InitStep, {0.0, 0.5}, {0, 1}, dir, 2);
  const auto rows = read_csv(slurp(dir / "sweep.csv"));
  CHECK(rows.size() == 2 * 2 + 1);
  CHECK(rows[0] == std::vector<std::string>{"axis", "value", "seed", "dense_accuracy", "final_accuracy",
                                            "encoder_sparsity"});
  const auto medians = read_csv(slurp(dir / "sweep_medians.csv"));
  CHECK(medians.size() == 3);
  CHECK(slurp(dir / "sweep.csv") == r.to_csv());
  // The dense model is shared per seed.
  for (const auto& row : r.rows) {
    for (const auto& other : r.rows) {
      if (row.run.seed == other.run.seed) CHECK(row.run.dense_accuracy == other.run.dense_accuracy);
    }
    CHECK(std::abs(row.run.encoder_sparsity - 0.9) <= 1.0 / 16384);
  }

  // A single value and seed matches a plain run of the same recipe.
  const SweepResult one = run_sweep(base, SweepAxis::InitStep, {0.7}, {0}, dir / "one");
  const RunSummary plain = run_prune(base, 0, dir / "plain");
  REQUIRE(one.rows.size() == 1);
  CHECK(one.rows[0].run.final_accuracy == plain.final_accuracy);
  CHECK(one.rows[0].run.dense_accuracy == plain.dense_accuracy);
  fs::remove_all(dir);
}

TEST_CASE("schedule dump of the 10-epoch preset") {
  const auto rows = read_csv(schedule_csv(recipe_preset("gmp-star-10ep")));
  REQUIRE(rows.size() == 2500 + 1);
  CHECK(rows[0] == std::vector<std::string>{"step", "epoch", "lr", "sparsity", "prune"});
  std::size_t rewinds = 0, prunes = 0;
  double prev_lr = 0, prev_sparsity = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const double lr = std::stod(rows[i][2]);
    const double sparsity = std::stod(rows[i][3]);
    if (i > 1 && lr > prev_lr) ++rewinds;
    CHECK(sparsity >= prev_sparsity);
    prunes += rows[i][4] == "1";
    prev_lr = lr;
    prev_sparsity = sparsity;
  }
  CHECK(std::stod(rows[1][2]) == 1e-4);
  CHECK(std::stod(rows[1][3]) == 0.0);
  // Four rewinds after the first cycle: five cycles in all.
  CHECK(rewinds == 4);
  CHECK(prunes == 60);
  CHECK(rows[501][3] == "0.7");
  CHECK(rows[500][3] == "0");
  CHECK(rows.back()[3] == "0.9");
}

TEST_CASE("run_prune writes its artifacts") {
  const fs::path dir = scratch("prune");
  const RunSummary s = run_prune(small_config(), 3, dir);
  for (const char* f : {"dense/runlog.csv", "runlog.csv", "recipe.yaml", "summary.json", "checkpoint/manifest.json",
                        "checkpoint/masks/manifest.json"}) {
    CHECK_MESSAGE(fs::exists(dir / f), f);
  }
  const auto j = nlohmann::json::parse(slurp(dir / "summary.json"));
  CHECK(j["final_accuracy"].get<double>() == s.final_accuracy);
  CHECK(j["seed"].get<int>() == 3);
  ExperimentConfig expected = small_config();
  expected.pruning.seed = 3;
  CHECK(load_recipe(dir / "recipe.yaml") == expected);
  fs::remove_all(dir);
}

TEST_CASE("sensitivity at target zero is the dense accuracy") {
  const fs::path dir = scratch("sensitivity");
  SensitivityOptions opts;
  opts.targets = {0.0, 0.5};
  opts.one_shot = true;
  const SensitivityResult r = run_sensitivity(small_config(), opts, {0}, dir);
  CHECK(r.rows.size() == 4);
  for (const auto& row : r.rows) {
    if (row.target == 0.0) {
      CHECK(row.accuracy == row.dense_accuracy);
      CHECK(row.in_scope_sparsity == 0.0);
    } else {
      CHECK(std::abs(row.in_scope_sparsity - 0.5) < 1e-3);
    }
  }
  CHECK(read_csv(r.to_csv()).size() == 5);
  CHECK(scope_from_string("encoder_linear+classification_head").included.size() == 2);
  CHECK_THROWS_AS(scope_from_string("kidneys"), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("command-line exit codes") {
  const fs::path dir = scratch("cli");
  fs::create_directories(dir);
  const fs::path log = dir / "log.txt";
  CHECK(cli("analyze roberta-large", log) == 0);
  CHECK(slurp(log).find("encoder") != std::string::npos);
  CHECK(cli("analyze gpt-9", log) != 0);
  CHECK(slurp(log).find("error:") != std::string::npos);
  CHECK(cli("frobnicate", log) != 0);
  CHECK(cli("schedule-dump --recipe no-such-recipe", log) != 0);
  CHECK(cli("sweep --axis dropout --values 0.1", log) != 0);
  CHECK(cli("sweep --axis hardness --values 0.5 --recipe smc-style", log) != 0);
  CHECK(cli("preset-dump gmp-star-10ep", log) == 0);

  const fs::path recipe = dir / "small.yaml";
  std::ofstream(recipe) << serialize_recipe(small_config());
  const fs::path bad = dir / "bad.yaml";
  std::ofstream(bad) << serialize_recipe(small_config()) << "surprise: 1\n";
  CHECK(cli("schedule-dump --recipe " + bad.string(), log) != 0);
  CHECK(slurp(log).find("unknown key 'surprise'") != std::string::npos);

  // A seed override changes the trajectory but not the final sparsity.
  REQUIRE(cli("prune --recipe " + recipe.string() + " --seed 1 --out " + (dir / "a").string(), log) == 0);
  REQUIRE(cli("prune --recipe " + recipe.string() + " --seed 2 --out " + (dir / "b").string(), log) == 0);
  CHECK(slurp(dir / "a/seed-1/runlog.csv") != slurp(dir / "b/seed-2/runlog.csv"));
  const auto ja = nlohmann::json::parse(slurp(dir / "a/seed-1/summary.json"));
  const auto jb = nlohmann::json::parse(slurp(dir / "b/seed-2/summary.json"));
  CHECK(ja["encoder_sparsity"] == jb["encoder_sparsity"]);
  fs::remove_all(dir);
}
