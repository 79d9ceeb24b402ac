// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sparseforge/accounting.hpp"
#include "sparseforge/distillation.hpp"
#include "sparseforge/model.hpp"
#include "sparseforge/optim.hpp"
#include "sparseforge/pruning.hpp"
#include "sparseforge/schedules.hpp"
#include "sparseforge/task.hpp"

namespace sparseforge {

/// Dense fine-tuning settings; also the toy task's "default" schedule.
struct DenseRecipe {
  std::size_t epochs = 3;
  LRScheduleSpec lr{LRKind::SingleLinear, 5e-3, 0.0, 1, 3, 1, 0};

  bool operator==(const DenseRecipe&) const = default;
};

/// Everything a gradual (or one-shot) pruning run needs besides the model and data.
struct PruningRecipe {
  ScopePolicy scope;
  PrunerKind pruner = PrunerKind::Magnitude;
  /// num_pruning_steps is overwritten from the timetable at run time.
  SparsityScheduleSpec sparsity;
  /// total_epochs and steps_per_epoch are overwritten at run time.
  LRScheduleSpec lr;
  std::size_t epochs = 10;
  std::size_t prune_frequency = 10;
  std::size_t stabilization_epochs = 2;
  std::optional<KDConfig> kd = KDConfig{};
  AdamConfig optimizer;
  std::uint64_t seed = 0;
  std::size_t batch_size = 32;
  std::size_t fisher_samples = 64;

  void validate() const;
  bool operator==(const PruningRecipe&) const = default;
};

struct StepRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  double encoder_sparsity = 0.0;
  double train_loss = 0.0;
  std::optional<double> eval_accuracy;
};

struct EvalRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double accuracy = 0.0;
};

struct RunLog {
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;
  double final_accuracy = 0.0;
  double final_encoder_sparsity = 0.0;

  /// Header plus one row per step; eval_accuracy is empty on steps without an evaluation.
  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;
};

/// Argmax accuracy. With `masks`, first checks that every masked weight is exactly 0.
template <typename T>
double evaluate(const Model<T>& model, const MaskSet* masks, const Dataset& eval_set);

/// Adam fine-tuning without masks; evaluates after every epoch.
template <typename T>
RunLog train_dense(Model<T>& model, const TaskData& data, const DenseRecipe& recipe, std::uint64_t seed,
                   std::size_t batch_size, const AdamConfig& optimizer = {});

struct PruneEvent {
  std::size_t step = 0;
  std::size_t index = 0;
  double target = 0.0;
  const MaskSet* previous = nullptr;
  const MaskSet* masks = nullptr;
  SparsityReport report;
};

template <typename T>
struct EvalEvent {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double accuracy = 0.0;
  const Model<T>* model = nullptr;
  const MaskSet* masks = nullptr;
};

template <typename T>
struct TrainingObserver {
  std::function<void(const PruneEvent&)> on_prune;
  std::function<void(const EvalEvent<T>&)> on_eval;
};

struct GradualOptions {
  /// Stop after this many optimizer steps (pruning scheduled at the stopping
  /// step still happens). Unset runs the full recipe.
  std::optional<std::size_t> max_train_steps;
};

template <typename T>
struct GradualResult {
  Model<T> model;
  MaskSet masks;
  RunLog log;
  Timetable timetable;
};

/// Interleaves pruning steps with masked fine-tuning. `teacher` must be set iff recipe.kd is.
template <typename T>
GradualResult<T> gradual_prune(const Model<T>& dense_model, const Teacher<T>* teacher, const PruningRecipe& recipe,
                               const TaskData& data, const TrainingObserver<T>& observer = {},
                               const GradualOptions& options = {});

/// Copy of `dense_model` pruned once to `target`, evaluated without retraining.
template <typename T>
GradualResult<T> one_shot(const Model<T>& dense_model, const PruningRecipe& recipe, double target,
                          const TaskData& data);

std::size_t steps_per_epoch(std::size_t train_size, std::size_t batch_size);

}  // namespace sparseforge
