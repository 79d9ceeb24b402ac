// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "sparseforge/errors.hpp"
#include "sparseforge/model.hpp"
#include "sparseforge/task.hpp"
#include "sparseforge/trainer.hpp"

namespace sparseforge {

enum class Precision { Single, Double };

std::string_view to_string(Precision precision);
Precision precision_from_string(std::string_view name);

enum class PruneMode { Gradual, OneShot };

std::string_view to_string(PruneMode mode);
PruneMode prune_mode_from_string(std::string_view name);

/// The tiny preset with a head sized for the toy task's four labels.
ArchitectureSpec toy_architecture();

/// One experiment: model shape, toy task, dense teacher schedule and pruning recipe.
/// Defaults are the toy setup every preset starts from.
struct ExperimentConfig {
  std::string name = "custom";
  Precision precision = Precision::Single;
  ArchitectureSpec architecture = toy_architecture();
  ForwardConfig forward{Activation::Gelu, 0.0};
  TaskSpec task;
  DenseRecipe dense;
  PruneMode mode = PruneMode::Gradual;
  /// Holds the run seed and batch size, which the dense phase shares.
  PruningRecipe pruning;

  /// Checks cross-section consistency (vocabulary, labels, sequence length).
  void validate() const;
  bool operator==(const ExperimentConfig&) const = default;
};

/// Parse failure, prefixed with "<source>:<line>:".
class RecipeError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// Parses YAML text. Missing keys keep their defaults; unknown keys are errors.
ExperimentConfig parse_recipe(std::string_view text, std::string_view source = "<recipe>");
ExperimentConfig load_recipe(const std::filesystem::path& path);
std::string serialize_recipe(const ExperimentConfig& config);

/// "gmp-star-10ep", "gmp-star-30ep", "smc-style" or "one-shot".
ExperimentConfig recipe_preset(std::string_view name);
std::vector<std::string> recipe_preset_names();

}  // namespace sparseforge
