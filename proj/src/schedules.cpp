// SPDX-License-Identifier: Apache-2.0
#include "sparseforge/schedules.hpp"

#include <fmt/format.h>

#include "sparseforge/errors.hpp"

namespace sparseforge {

std::string_view to_string(SparsityKind kind) { return kind == SparsityKind::Cubic ? "cubic" : "linear"; }

SparsityKind sparsity_kind_from_string(std::string_view name) {
  if (name == "cubic") return SparsityKind::Cubic;
  if (name == "linear") return SparsityKind::Linear;
  throw ConfigError(fmt::format("unknown sparsity schedule '{}'", name));
}

void SparsityScheduleSpec::validate() const {
  if (!(s_init >= 0.0 && s_init < 1.0)) throw ConfigError(fmt::format("s_init {} outside [0, 1)", s_init));
  if (!(s_final > 0.0 && s_final <= 1.0)) throw ConfigError(fmt::format("s_final {} outside (0, 1]", s_final));
  if (s_init > s_final) throw ConfigError(fmt::format("s_init {} exceeds s_final {}", s_init, s_final));
  if (num_pruning_steps < 1) throw ConfigError("sparsity schedule needs at least one pruning step");
}

double sparsity_at(const SparsityScheduleSpec& spec, std::size_t k) {
  spec.validate();
  if (k >= spec.num_pruning_steps) {
    throw ContractError(fmt::format("pruning step {} outside [0, {})", k, spec.num_pruning_steps));
  }
  if (spec.num_pruning_steps == 1) return spec.s_final;
  if (k == spec.num_pruning_steps - 1) return spec.s_final;
  if (k == 0) return spec.s_init;
  const double progress = static_cast<double>(k) / static_cast<double>(spec.num_pruning_steps - 1);
  if (spec.kind == SparsityKind::Linear) return spec.s_init + (spec.s_final - spec.s_init) * progress;
  const double remaining = 1.0 - progress;
  return spec.s_final + (spec.s_init - spec.s_final) * remaining * remaining * remaining;
}

std::string_view to_string(LRKind kind) {
  switch (kind) {
    case LRKind::RecurringLinear:
      return "recurring_linear";
    case LRKind::SingleLinear:
      return "single_linear";
    case LRKind::LinearWithWarmup:
      return "linear_with_warmup";
  }
  return "unknown";
}

LRKind lr_kind_from_string(std::string_view name) {
  if (name == "recurring_linear") return LRKind::RecurringLinear;
  if (name == "single_linear") return LRKind::SingleLinear;
  if (name == "linear_with_warmup") return LRKind::LinearWithWarmup;
  throw ConfigError(fmt::format("unknown learning-rate schedule '{}'", name));
}

void LRScheduleSpec::validate() const {
  if (!(lr_init > 0.0)) throw ConfigError(fmt::format("lr_init {} must be positive", lr_init));
  if (!(lr_final >= 0.0 && lr_final <= lr_init)) {
    throw ConfigError(fmt::format("lr_final {} must lie in [0, lr_init {}]", lr_final, lr_init));
  }
  if (steps_per_epoch < 1) throw ConfigError("steps_per_epoch must be >= 1");
  if (kind == LRKind::RecurringLinear) {
    if (cycle_epochs < 1) throw ConfigError("cycle_epochs must be >= 1");
    if (total_epochs % cycle_epochs != 0) {
      throw ConfigError(
          fmt::format("total_epochs {} is not a multiple of cycle_epochs {}", total_epochs, cycle_epochs));
    }
  }
  if (kind == LRKind::LinearWithWarmup && warmup_steps >= total_steps()) {
    throw ConfigError(fmt::format("warmup_steps {} must be below the total of {} steps", warmup_steps, total_steps()));
  }
}

namespace {

// Affine from `from` at position 0 to `to` at position span - 1.
double ramp(double from, double to, std::size_t position, std::size_t span) {
  if (span <= 1 || position == span - 1) return to;
  if (position == 0) return from;
  return from + (to - from) * static_cast<double>(position) / static_cast<double>(span - 1);
}

}  // namespace

double lr_at(const LRScheduleSpec& spec, std::size_t global_step) {
  spec.validate();
  const std::size_t total = spec.total_steps();
  if (global_step >= total) throw ContractError(fmt::format("step {} outside [0, {})", global_step, total));
  switch (spec.kind) {
    case LRKind::RecurringLinear: {
      const std::size_t cycle = spec.cycle_epochs * spec.steps_per_epoch;
      return ramp(spec.lr_init, spec.lr_final, global_step % cycle, cycle);
    }
    case LRKind::SingleLinear:
      return ramp(spec.lr_init, spec.lr_final, global_step, total);
    case LRKind::LinearWithWarmup:
      if (global_step < spec.warmup_steps) {
        return spec.lr_final + (spec.lr_init - spec.lr_final) * static_cast<double>(global_step) /
                                   static_cast<double>(spec.warmup_steps);
      }
      return ramp(spec.lr_init, spec.lr_final, global_step - spec.warmup_steps, total - spec.warmup_steps);
  }
  return spec.lr_init;
}

Timetable pruning_timetable(std::size_t total_epochs, std::size_t steps_per_epoch, std::size_t prune_frequency,
                            std::size_t stabilization_epochs) {
  if (total_epochs <= 2 * stabilization_epochs) {
    throw ConfigError(fmt::format("{} epochs leave no pruning window between {} stabilization epochs on each side",
                                  total_epochs, stabilization_epochs));
  }
  if (prune_frequency < 1 || steps_per_epoch < 1) throw ConfigError("prune_frequency and steps_per_epoch must be >= 1");
  if (prune_frequency > steps_per_epoch) {
    throw ConfigError(
        fmt::format("prune_frequency {} exceeds the {} steps in an epoch", prune_frequency, steps_per_epoch));
  }
  Timetable t;
  t.total_epochs = total_epochs;
  t.steps_per_epoch = steps_per_epoch;
  t.prune_frequency = prune_frequency;
  t.stabilization_epochs = stabilization_epochs;
  const std::size_t window_epochs = total_epochs - 2 * stabilization_epochs;
  const std::size_t count = prune_frequency * window_epochs;
  const std::size_t first = stabilization_epochs * steps_per_epoch;
  const std::size_t window_steps = window_epochs * steps_per_epoch;
  t.pruning_steps.reserve(count);
  for (std::size_t j = 0; j < count; ++j) t.pruning_steps.push_back(first + j * window_steps / count);
  return t;
}

}  // namespace sparseforge
