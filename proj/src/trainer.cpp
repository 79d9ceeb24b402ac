// SPDX-License-Identifier: Apache-2.0
#include "sparseforge/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "sparseforge/errors.hpp"

namespace sparseforge {

namespace {

constexpr std::size_t kEvalBatch = 256;
constexpr std::uint64_t kDropoutStream = 0x64726f70;  // "drop"
constexpr std::uint64_t kShuffleStream = 0x73687566;  // "shuf"

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(mix_seed(mix_seed(seed, kShuffleStream), epoch));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

LabeledBatch batch_at(const Dataset& train, const std::vector<std::size_t>& order, std::size_t step_in_epoch,
                      std::size_t batch_size) {
  const std::size_t start = step_in_epoch * batch_size;
  const std::size_t end = std::min(start + batch_size, order.size());
  return make_batch(train, std::span<const std::size_t>(order.data() + start, end - start));
}

// Forward, loss, backward, gradient masking and one Adam update.
template <typename T>
double train_step(Model<T>& model, Adam<T>& optimizer, const LabeledBatch& batch, double lr, std::uint64_t seed,
                  std::size_t global_step, const MaskSet* masks, const Teacher<T>* teacher, const KDConfig* kd) {
  GradientSet<T> grads = model.zero_gradients();
  Graph<T> graph;
  ForwardOptions options{true, mix_seed(mix_seed(seed, kDropoutStream), global_step)};
  const Var<T> logits = forward(graph, model, batch.inputs, options, &grads);
  const std::span<const std::int32_t> labels(batch.labels);
  const Var<T> loss = (kd != nullptr && teacher != nullptr)
                          ? kd_loss(logits, teacher->logits(batch.inputs), labels, *kd)
                          : cross_entropy(logits, labels);
  const double value = static_cast<double>(loss.value().item());
  if (!std::isfinite(value)) {
    throw RunError(fmt::format("training diverged: loss {} at step {} (lr {})", value, global_step, lr));
  }
  graph.backward(loss);
  if (masks != nullptr) mask_gradients(grads, *masks);
  optimizer.step(model, grads, lr);
  return value;
}

std::string format_number(double v) { return fmt::format("{}", v); }

}  // namespace

std::size_t steps_per_epoch(std::size_t train_size, std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  return (train_size + batch_size - 1) / batch_size;
}

void PruningRecipe::validate() const {
  sparsity.validate();
  if (scope.included.empty()) throw ConfigError("pruning scope includes no components");
  if (epochs < 1) throw ConfigError("pruning run needs at least one epoch");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (kd) kd->validate();
  if (pruner == PrunerKind::DiagonalFisher && fisher_samples < 1) {
    throw ConfigError("diagonal_fisher pruner needs fisher_samples >= 1");
  }
  if (epochs <= 2 * stabilization_epochs) {
    throw ConfigError(fmt::format("{} epochs leave no pruning window between {} stabilization epochs on each side",
                                  epochs, stabilization_epochs));
  }
}

std::string RunLog::to_csv() const {
  std::string out = "step,epoch,lr,encoder_sparsity,train_loss,eval_accuracy\n";
  for (const auto& r : steps) {
    out += fmt::format("{},{},{},{},{},{}\n", r.step, r.epoch, format_number(r.lr), format_number(r.encoder_sparsity),
                       format_number(r.train_loss), r.eval_accuracy ? format_number(*r.eval_accuracy) : "");
  }
  return out;
}

void RunLog::write_csv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RunError(fmt::format("cannot write {}", path.string()));
  out << to_csv();
}

template <typename T>
double evaluate(const Model<T>& model, const MaskSet* masks, const Dataset& eval_set) {
  if (masks != nullptr) {
    check_masks(model.layout(), *masks);
    for (const auto& [id, mask] : masks->masks()) {
      const auto w = model.parameters()[id].value.data();
      for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i] == 0 && w[i] != T{0}) {
          throw ContractError(
              fmt::format("evaluate: masked weight {}[{}] is {}", model.parameters()[id].info.name, i, w[i]));
        }
      }
    }
  }
  if (eval_set.size() == 0) return 0.0;
  std::size_t correct = 0;
  for (const auto& batch : sequential_batches(eval_set, kEvalBatch)) {
    const Tensor<T> logits = predict_logits(model, batch.inputs);
    const std::size_t classes = logits.dim(1);
    for (std::size_t b = 0; b < batch.labels.size(); ++b) {
      const T* row = logits.data().data() + b * classes;
      const auto best = static_cast<std::int32_t>(std::max_element(row, row + classes) - row);
      correct += best == batch.labels[b] ? 1 : 0;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(eval_set.size());
}

template <typename T>
RunLog train_dense(Model<T>& model, const TaskData& data, const DenseRecipe& recipe, std::uint64_t seed,
                   std::size_t batch_size, const AdamConfig& optimizer_config) {
  RunLog log;
  if (recipe.epochs == 0) {
    log.final_accuracy = evaluate(model, nullptr, data.eval);
    return log;
  }
  const std::size_t per_epoch = steps_per_epoch(data.train.size(), batch_size);
  LRScheduleSpec lr = recipe.lr;
  lr.total_epochs = recipe.epochs;
  lr.steps_per_epoch = per_epoch;
  lr.validate();
  Adam<T> optimizer(model, optimizer_config);
  std::size_t global = 0;
  for (std::size_t epoch = 0; epoch < recipe.epochs; ++epoch) {
    const auto order = epoch_order(data.train.size(), seed, epoch);
    for (std::size_t s = 0; s < per_epoch; ++s, ++global) {
      const double rate = lr_at(lr, global);
      const double loss = train_step(model, optimizer, batch_at(data.train, order, s, batch_size), rate, seed, global,
                                     nullptr, static_cast<const Teacher<T>*>(nullptr), nullptr);
      log.steps.push_back(StepRecord{global, epoch, rate, 0.0, loss, std::nullopt});
    }
    const double acc = evaluate(model, nullptr, data.eval);
    log.steps.back().eval_accuracy = acc;
    log.evals.push_back(EvalRecord{global - 1, epoch, acc});
  }
  log.final_accuracy = log.evals.back().accuracy;
  return log;
}

template <typename T>
GradualResult<T> gradual_prune(const Model<T>& dense_model, const Teacher<T>* teacher, const PruningRecipe& recipe,
                               const TaskData& data, const TrainingObserver<T>& observer,
                               const GradualOptions& options) {
  recipe.validate();
  if (recipe.kd.has_value() != (teacher != nullptr)) {
    throw ConfigError("gradual_prune: a teacher is required exactly when knowledge distillation is enabled");
  }
  const std::size_t per_epoch = steps_per_epoch(data.train.size(), recipe.batch_size);
  Timetable timetable =
      pruning_timetable(recipe.epochs, per_epoch, recipe.prune_frequency, recipe.stabilization_epochs);
  SparsityScheduleSpec sparsity = recipe.sparsity;
  sparsity.num_pruning_steps = timetable.num_pruning_steps();
  sparsity.validate();
  LRScheduleSpec lr = recipe.lr;
  lr.total_epochs = recipe.epochs;
  lr.steps_per_epoch = per_epoch;
  lr.validate();

  GradualResult<T> result{dense_model, MaskSet::dense(dense_model.layout(), recipe.scope), RunLog{}, timetable};
  Model<T>& model = result.model;
  MaskSet& masks = result.masks;
  const ArchitectureSpec& spec = model.spec();
  Adam<T> optimizer(model, recipe.optimizer);

  std::vector<LabeledBatch> fisher_data;
  if (recipe.pruner == PrunerKind::DiagonalFisher) {
    Dataset subset{data.train.sequence_length, {}};
    const std::size_t n = std::min(recipe.fisher_samples, data.train.size());
    subset.examples.assign(data.train.examples.begin(), data.train.examples.begin() + static_cast<std::ptrdiff_t>(n));
    fisher_data = sequential_batches(subset, recipe.batch_size);
  }

  double encoder_sparsity = sparsity_report(spec, masks).encoder_sparsity;
  std::size_t next_prune = 0;
  std::size_t global = 0;
  const std::size_t step_limit = options.max_train_steps.value_or(recipe.epochs * per_epoch);

  auto prune_if_scheduled = [&](std::size_t step) {
    if (next_prune >= timetable.pruning_steps.size() || timetable.pruning_steps[next_prune] != step) return;
    const double target = sparsity_at(sparsity, next_prune);
    const SaliencySet scores = recipe.pruner == PrunerKind::Magnitude
                                   ? magnitude_scores(model, masks)
                                   : fisher_scores(model, masks, fisher_data, recipe.fisher_samples);
    MaskSet updated = select_prune(scores, masks, target, recipe.scope);
    optimizer.reset_pruned(updated);
    apply_masks(model, updated);
    const MaskSet previous = std::move(masks);
    masks = std::move(updated);
    const SparsityReport report = sparsity_report(spec, masks);
    encoder_sparsity = report.encoder_sparsity;
    if (observer.on_prune) observer.on_prune(PruneEvent{step, next_prune, target, &previous, &masks, report});
    ++next_prune;
  };

  auto record_eval = [&](std::size_t step, std::size_t epoch) {
    const double acc = evaluate(model, &masks, data.eval);
    result.log.evals.push_back(EvalRecord{step, epoch, acc});
    if (!result.log.steps.empty()) result.log.steps.back().eval_accuracy = acc;
    if (observer.on_eval) observer.on_eval(EvalEvent<T>{step, epoch, acc, &model, &masks});
  };

  const KDConfig* kd = recipe.kd ? &*recipe.kd : nullptr;
  bool stopped = false;
  for (std::size_t epoch = 0; epoch < recipe.epochs && !stopped; ++epoch) {
    const auto order = epoch_order(data.train.size(), recipe.seed, epoch);
    for (std::size_t s = 0; s < per_epoch; ++s, ++global) {
      prune_if_scheduled(global);
      if (global >= step_limit) {
        stopped = true;
        break;
      }
      const double rate = lr_at(lr, global);
      const double loss = train_step(model, optimizer, batch_at(data.train, order, s, recipe.batch_size), rate,
                                     recipe.seed, global, &masks, teacher, kd);
      result.log.steps.push_back(StepRecord{global, epoch, rate, encoder_sparsity, loss, std::nullopt});
    }
    if (!stopped) record_eval(global - 1, epoch);
  }
  if (stopped) record_eval(global, global / per_epoch);
  result.log.final_accuracy = result.log.evals.back().accuracy;
  result.log.final_encoder_sparsity = encoder_sparsity;
  return result;
}

template <typename T>
GradualResult<T> one_shot(const Model<T>& dense_model, const PruningRecipe& recipe, double target,
                          const TaskData& data) {
  GradualResult<T> result{dense_model, MaskSet{}, RunLog{}, Timetable{}};
  std::vector<LabeledBatch> fisher_data;
  if (recipe.pruner == PrunerKind::DiagonalFisher) {
    Dataset subset{data.train.sequence_length, {}};
    const std::size_t n = std::min(recipe.fisher_samples, data.train.size());
    subset.examples.assign(data.train.examples.begin(), data.train.examples.begin() + static_cast<std::ptrdiff_t>(n));
    fisher_data = sequential_batches(subset, recipe.batch_size);
  }
  result.masks = one_shot_prune(result.model, recipe.pruner, target, recipe.scope, fisher_data, recipe.fisher_samples);
  const double acc = evaluate(result.model, &result.masks, data.eval);
  result.log.evals.push_back(EvalRecord{0, 0, acc});
  result.log.final_accuracy = acc;
  result.log.final_encoder_sparsity = sparsity_report(dense_model.spec(), result.masks).encoder_sparsity;
  return result;
}

#define SPARSEFORGE_INSTANTIATE_TRAINER(T)                                                                          \
  template double evaluate(const Model<T>&, const MaskSet*, const Dataset&);                                        \
  template RunLog train_dense(Model<T>&, const TaskData&, const DenseRecipe&, std::uint64_t, std::size_t,           \
                              const AdamConfig&);                                                                   \
  template GradualResult<T> gradual_prune(const Model<T>&, const Teacher<T>*, const PruningRecipe&, const TaskData&, \
                                          const TrainingObserver<T>&, const GradualOptions&);                       \
  template GradualResult<T> one_shot(const Model<T>&, const PruningRecipe&, double, const TaskData&);

SPARSEFORGE_INSTANTIATE_TRAINER(float)
SPARSEFORGE_INSTANTIATE_TRAINER(double)

#undef SPARSEFORGE_INSTANTIATE_TRAINER

}  // namespace sparseforge
