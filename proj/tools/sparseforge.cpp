// SPDX-License-Identifier: Apache-2.0
// Command-line front end: accounting tables, training and pruning runs, sweeps.
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "sparseforge/harness.hpp"

namespace fs = std::filesystem;
using namespace sparseforge;

namespace {

struct Common {
  std::string recipe = "gmp-star-10ep";
  std::optional<std::uint64_t> seed;
  std::vector<std::uint64_t> seeds;
  std::string out;
  std::string precision;
  std::size_t jobs = 1;
};

void add_common(CLI::App* cmd, Common& c, bool multi_seed) {
  cmd->add_option("--recipe", c.recipe, "Recipe file or preset name")->capture_default_str();
  cmd->add_option("--seed", c.seed, "Run seed (overrides the recipe)");
  if (multi_seed) {
    cmd->add_option("--seeds", c.seeds, "Comma-separated seeds")->delimiter(',');
    cmd->add_option("-j,--jobs", c.jobs, "Concurrent runs")->capture_default_str();
  }
  cmd->add_option("--out", c.out, "Output directory (default: $SPARSEFORGE_OUT or ./runs)");
  cmd->add_option("--precision", c.precision, "single or double")->check(CLI::IsMember({"single", "double"}));
}

ExperimentConfig load(const Common& c) {
  ExperimentConfig cfg = resolve_recipe(c.recipe);
  if (!c.precision.empty()) cfg.precision = precision_from_string(c.precision);
  if (c.seed) cfg.pruning.seed = *c.seed;
  return cfg;
}

std::vector<std::uint64_t> seed_list(const Common& c, const ExperimentConfig& cfg) {
  if (!c.seeds.empty()) return c.seeds;
  return {cfg.pruning.seed};
}

fs::path out_dir(const Common& c, const std::string& leaf) {
  return c.out.empty() ? default_output_root() / leaf : fs::path(c.out);
}

void print_run(const RunSummary& s) {
  fmt::print("{} seed {}: dense {:.4f}, final {:.4f}, encoder sparsity {:.4f}, in-scope sparsity {:.4f} -> {}\n",
             s.name, s.seed, s.dense_accuracy, s.final_accuracy, s.encoder_sparsity, s.in_scope_sparsity,
             s.run_dir.string());
}

std::vector<double> parse_values(const std::string& text) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start < text.size()) {
    const std::size_t end = std::min(text.find(',', start), text.size());
    const std::string item = text.substr(start, end - start);
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size() || item.empty()) throw ConfigError(fmt::format("'{}' is not a number", item));
    out.push_back(v);
    start = end + 1;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gradual pruning experiments on a small transformer encoder"};
  app.require_subcommand(1);

  std::string arch;
  bool csv = false;
  auto* analyze = app.add_subcommand("analyze", "Parameter and FLOP counts per component");
  analyze->add_option("architecture", arch, "tiny, bert-base or roberta-large")->required();
  analyze->add_flag("--csv", csv, "Emit CSV instead of a table");

  Common train_opts;
  auto* train = app.add_subcommand("train", "Dense training only");
  add_common(train, train_opts, false);

  Common prune_opts;
  auto* prune = app.add_subcommand("prune", "Dense training followed by the recipe's pruning run");
  add_common(prune, prune_opts, true);

  Common oneshot_opts;
  double oneshot_target = -1.0;
  std::string oneshot_pruner;
  auto* oneshot = app.add_subcommand("one-shot", "Prune a trained model once, without retraining");
  add_common(oneshot, oneshot_opts, true);
  oneshot->add_option("--target", oneshot_target, "Target sparsity (default: the recipe's s_final)");
  oneshot->add_option("--pruner", oneshot_pruner, "magnitude or diagonal_fisher");

  Common sweep_opts;
  std::string axis;
  std::string values;
  auto* sweep = app.add_subcommand("sweep", "One pruning run per (value, seed) along one axis");
  add_common(sweep, sweep_opts, true);
  sweep->add_option("--axis", axis, "hardness, temperature, init_step, lr or target")->required();
  sweep->add_option("--values", values, "Comma-separated values")->required();

  Common sens_opts;
  std::string scopes = "encoder_only,all_components";
  std::string targets;
  bool sens_one_shot = false;
  std::string sens_pruner = "magnitude";
  auto* sensitivity = app.add_subcommand("sensitivity", "Accuracy per (scope, target sparsity)");
  add_common(sensitivity, sens_opts, true);
  sensitivity->add_option("--scopes", scopes, "Comma-separated scopes")->capture_default_str();
  sensitivity->add_option("--targets", targets, "Comma-separated target sparsities")->required();
  sensitivity->add_flag("--one-shot", sens_one_shot, "Prune once without retraining");
  sensitivity->add_option("--pruner", sens_pruner, "magnitude or diagonal_fisher")->capture_default_str();

  Common dump_opts;
  auto* schedule_dump = app.add_subcommand("schedule-dump", "Per-step learning rate and sparsity as CSV");
  add_common(schedule_dump, dump_opts, false);

  std::string preset_name;
  std::string preset_out;
  auto* preset_dump = app.add_subcommand("preset-dump", "Print a preset recipe, or write all presets to --out");
  preset_dump->add_option("name", preset_name, "Preset name");
  preset_dump->add_option("--out", preset_out, "Directory for <preset>.yaml files");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*analyze) {
      const ArchitectureSpec spec = architecture_preset(arch);
      std::cout << (csv ? analyze_csv(spec) : analyze_table(spec));
    } else if (*train) {
      const ExperimentConfig cfg = load(train_opts);
      print_run(run_train(cfg, cfg.pruning.seed,
                          out_dir(train_opts, fmt::format("{}/dense/seed-{}", cfg.name, cfg.pruning.seed))));
    } else if (*prune || *oneshot) {
      Common& c = *prune ? prune_opts : oneshot_opts;
      ExperimentConfig cfg = load(c);
      if (*oneshot) {
        cfg.mode = PruneMode::OneShot;
        if (oneshot_target >= 0.0) cfg.pruning.sparsity.s_final = oneshot_target;
        if (!oneshot_pruner.empty()) cfg.pruning.pruner = pruner_from_string(oneshot_pruner);
        cfg.validate();
      }
      const auto seeds = seed_list(c, cfg);
      const fs::path root = out_dir(c, cfg.name);
      for (std::uint64_t seed : seeds) print_run(run_prune(cfg, seed, root / fmt::format("seed-{}", seed)));
    } else if (*sweep) {
      const ExperimentConfig cfg = load(sweep_opts);
      const SweepAxis a = sweep_axis_from_string(axis);
      const fs::path root = out_dir(sweep_opts, fmt::format("{}-sweep-{}", cfg.name, to_string(a)));
      const SweepResult r = run_sweep(cfg, a, parse_values(values), seed_list(sweep_opts, cfg), root, sweep_opts.jobs);
      std::cout << r.medians_csv();
      fmt::print(stderr, "wrote {}\n", (root / "sweep.csv").string());
    } else if (*sensitivity) {
      const ExperimentConfig cfg = load(sens_opts);
      SensitivityOptions opts;
      opts.scopes.clear();
      std::size_t start = 0;
      while (start < scopes.size()) {
        const std::size_t end = std::min(scopes.find(',', start), scopes.size());
        opts.scopes.push_back(scopes.substr(start, end - start));
        start = end + 1;
      }
      opts.targets = parse_values(targets);
      opts.one_shot = sens_one_shot;
      opts.pruner = pruner_from_string(sens_pruner);
      const fs::path root = out_dir(sens_opts, fmt::format("{}-sensitivity", cfg.name));
      const SensitivityResult r = run_sensitivity(cfg, opts, seed_list(sens_opts, cfg), root, sens_opts.jobs);
      std::cout << r.to_csv();
    } else if (*schedule_dump) {
      std::cout << schedule_csv(load(dump_opts));
    } else if (*preset_dump) {
      if (!preset_out.empty()) {
        fs::create_directories(preset_out);
        for (const auto& name : recipe_preset_names()) {
          std::ofstream(fs::path(preset_out) / (name + ".yaml")) << serialize_recipe(recipe_preset(name));
        }
      } else if (!preset_name.empty()) {
        std::cout << serialize_recipe(recipe_preset(preset_name));
      } else {
        for (const auto& name : recipe_preset_names()) std::cout << name << "\n";
      }
    }
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return 0;
}
