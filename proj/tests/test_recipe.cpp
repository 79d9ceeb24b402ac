// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>

#include "sparseforge/recipe.hpp"

using namespace sparseforge;
namespace fs = std::filesystem;

namespace {

std::string error_of(const std::string& text) {
  try {
    parse_recipe(text, "r.yaml");
  } catch (const RecipeError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("presets round-trip through yaml") {
  for (const auto& name : recipe_preset_names()) {
    INFO(name);
    const ExperimentConfig cfg = recipe_preset(name);
    CHECK_NOTHROW(cfg.validate());
    const std::string text = serialize_recipe(cfg);
    const ExperimentConfig back = parse_recipe(text);
    CHECK(back == cfg);
    CHECK(serialize_recipe(back) == text);
  }
  CHECK_THROWS_AS(recipe_preset("gmp-star-20ep"), ConfigError);
}

TEST_CASE("preset contents") {
  const ExperimentConfig gmp = recipe_preset("gmp-star-10ep");
  CHECK(gmp.pruning.sparsity.s_init == 0.7);
  CHECK(gmp.pruning.sparsity.s_final == 0.9);
  CHECK(gmp.pruning.lr.kind == LRKind::RecurringLinear);
  CHECK(gmp.pruning.lr.lr_init == 1e-4);
  CHECK(gmp.pruning.lr.lr_final == 1e-6);
  CHECK(gmp.pruning.lr.cycle_epochs == 2);
  CHECK(gmp.pruning.prune_frequency == 10);
  CHECK(gmp.pruning.stabilization_epochs == 2);
  REQUIRE(gmp.pruning.kd.has_value());
  CHECK(*gmp.pruning.kd == KDConfig{1.0, 5.5, true});
  CHECK(gmp.pruning.scope == ScopePolicy::encoder_only());
  CHECK(recipe_preset("gmp-star-30ep").pruning.epochs == 30);

  const ExperimentConfig smc = recipe_preset("smc-style");
  CHECK(smc.pruning.scope == ScopePolicy::all_components());
  CHECK(smc.pruning.sparsity.s_init == 0.0);
  CHECK_FALSE(smc.pruning.kd.has_value());
  CHECK(recipe_preset("one-shot").mode == PruneMode::OneShot);
}

TEST_CASE("missing keys keep defaults") {
  const ExperimentConfig cfg = parse_recipe("name: x\nseed: 4\n");
  CHECK(cfg.name == "x");
  CHECK(cfg.pruning.seed == 4);
  ExperimentConfig expected;
  expected.name = "x";
  expected.pruning.seed = 4;
  CHECK(cfg == expected);
}

TEST_CASE("unknown keys name the key and line") {
  const std::string text = "name: x\npruning:\n  epochs: 10\n  bogus: 1\n";
  const std::string msg = error_of(text);
  CHECK(msg.find("r.yaml:4:") == 0);
  CHECK(msg.find("pruning.bogus") != std::string::npos);
  CHECK(error_of("colour: red\n").find("r.yaml:1:") == 0);
  CHECK(error_of("pruning:\n  kd:\n    hardnes: 0.5\n").find("pruning.kd.hardnes") != std::string::npos);
}

TEST_CASE("invalid values are rejected") {
  CHECK_THROWS_AS(parse_recipe("forward:\n  dropout: 1.5\n"), ConfigError);
  CHECK_THROWS_AS(parse_recipe("pruning:\n  sparsity:\n    s_init: 0.95\n    s_final: 0.9\n"), ConfigError);
  CHECK_THROWS_AS(parse_recipe("pruning:\n  pruner: random\n"), ConfigError);
  CHECK_THROWS_AS(parse_recipe("pruning:\n  kd:\n    hardness: 2\n"), ConfigError);
  CHECK_THROWS_AS(parse_recipe("precision: half\n"), ConfigError);
  CHECK_THROWS_AS(parse_recipe("seed: minus one\n"), ConfigError);
  CHECK_THROWS_AS(parse_recipe("task:\n  num_labels: 3\n"), ConfigError);
  CHECK_THROWS_AS(parse_recipe("[1, 2]\n"), ConfigError);
  CHECK_THROWS_AS(parse_recipe("name: [unclosed\n"), ConfigError);
}

TEST_CASE("null kd disables distillation") {
  const ExperimentConfig cfg = parse_recipe("pruning:\n  kd: null\n");
  CHECK_FALSE(cfg.pruning.kd.has_value());
  const ExperimentConfig tuned = parse_recipe("pruning:\n  kd:\n    temperature: 2\n");
  REQUIRE(tuned.pruning.kd.has_value());
  CHECK(tuned.pruning.kd->temperature == 2.0);
  CHECK(tuned.pruning.kd->hardness == 1.0);
}

TEST_CASE("load_recipe reads files") {
  const fs::path path = fs::temp_directory_path() / "sparseforge_test_recipe.yaml";
  {
    std::ofstream out(path);
    out << serialize_recipe(recipe_preset("smc-style"));
  }
  CHECK(load_recipe(path) == recipe_preset("smc-style"));
  {
    std::ofstream out(path);
    out << "name: y\nextra: 1\n";
  }
  try {
    load_recipe(path);
    FAIL("expected a RecipeError");
  } catch (const RecipeError& e) {
    CHECK(std::string(e.what()).find(path.string() + ":2:") == 0);
  }
  fs::remove(path);
  CHECK_THROWS_AS(load_recipe(path), ConfigError);
}

TEST_CASE("enum names") {
  CHECK(precision_from_string("double") == Precision::Double);
  CHECK(to_string(Precision::Single) == "single");
  CHECK(prune_mode_from_string("one_shot") == PruneMode::OneShot);
  CHECK_THROWS_AS(prune_mode_from_string("sometimes"), ConfigError);
}
