// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "sparseforge/recipe.hpp"

namespace sparseforge {

/// SPARSEFORGE_OUT when set, otherwise "runs".
std::filesystem::path default_output_root();

/// Resolves `ref` as a recipe file when it exists, otherwise as a preset name.
ExperimentConfig resolve_recipe(const std::string& ref);

// ---------------------------------------------------------------------------
// analyze

/// group,params,flops_per_token,param_fraction,flop_fraction
std::string analyze_csv(const ArchitectureSpec& spec);
/// Same rows as analyze_csv in millions, aligned for a terminal.
std::string analyze_table(const ArchitectureSpec& spec);

// ---------------------------------------------------------------------------
// single runs

struct RunSummary {
  std::string name;
  std::uint64_t seed = 0;
  double dense_accuracy = 0.0;
  double final_accuracy = 0.0;
  double encoder_sparsity = 0.0;
  /// Pruned fraction over every masked (in-scope) weight.
  double in_scope_sparsity = 0.0;
  std::filesystem::path run_dir;
};

/// Dense training only. Writes runlog.csv, recipe.yaml, summary.json and checkpoint/.
RunSummary run_train(const ExperimentConfig& config, std::uint64_t seed, const std::filesystem::path& run_dir);

/// Dense training followed by pruning per config.mode. The run directory holds
/// dense/runlog.csv, runlog.csv, recipe.yaml, summary.json and checkpoint/
/// (weights plus masks of the pruned model).
RunSummary run_prune(const ExperimentConfig& config, std::uint64_t seed, const std::filesystem::path& run_dir);

// ---------------------------------------------------------------------------
// sweeps

enum class SweepAxis { Hardness, Temperature, InitStep, LR, Target };

std::string_view to_string(SweepAxis axis);
SweepAxis sweep_axis_from_string(std::string_view name);

/// Copy of `base` with one hyper-parameter replaced. Throws ConfigError when the
/// axis does not apply (a KD axis on a recipe without KD).
ExperimentConfig apply_axis(const ExperimentConfig& base, SweepAxis axis, double value);

struct SweepRow {
  double value = 0.0;
  RunSummary run;
};

struct SweepResult {
  SweepAxis axis = SweepAxis::InitStep;
  std::vector<SweepRow> rows;

  /// axis,value,seed,dense_accuracy,final_accuracy,encoder_sparsity: one row per (value, seed).
  std::string to_csv() const;
  /// value,runs,median_final_accuracy.
  std::string medians_csv() const;
};

/// One pruning run per (value, seed); the dense model is trained once per seed
/// and shared by every value. Up to `jobs` runs execute concurrently.
SweepResult run_sweep(const ExperimentConfig& base, SweepAxis axis, const std::vector<double>& values,
                      const std::vector<std::uint64_t>& seeds, const std::filesystem::path& out_dir,
                      std::size_t jobs = 1);

// ---------------------------------------------------------------------------
// sensitivity

struct SensitivityOptions {
  std::vector<std::string> scopes{"encoder_only", "all_components"};
  std::vector<double> targets;
  bool one_shot = false;
  PrunerKind pruner = PrunerKind::Magnitude;
};

/// "encoder_only", "all_components", or a '+'-joined list of component tags.
ScopePolicy scope_from_string(std::string_view name);

struct SensitivityRow {
  std::string scope;
  double target = 0.0;
  std::uint64_t seed = 0;
  double dense_accuracy = 0.0;
  double accuracy = 0.0;
  double in_scope_sparsity = 0.0;
  double encoder_sparsity = 0.0;
};

struct SensitivityResult {
  std::string mode;
  std::string pruner;
  std::vector<SensitivityRow> rows;

  /// scope,target,seed,mode,pruner,dense_accuracy,accuracy,in_scope_sparsity,encoder_sparsity
  std::string to_csv() const;
};

SensitivityResult run_sensitivity(const ExperimentConfig& base, const SensitivityOptions& options,
                                  const std::vector<std::uint64_t>& seeds, const std::filesystem::path& out_dir,
                                  std::size_t jobs = 1);

// ---------------------------------------------------------------------------
// schedule dump

/// step,epoch,lr,sparsity,prune: the scheduled trajectory of a gradual recipe,
/// where sparsity is the target in force after any pruning at that step.
std::string schedule_csv(const ExperimentConfig& config);

/// Median of a non-empty list.
double median(std::vector<double> values);

}  // namespace sparseforge
