// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

namespace sparseforge {

enum class SparsityKind { Linear, Cubic };

std::string_view to_string(SparsityKind kind);
SparsityKind sparsity_kind_from_string(std::string_view name);

/// Sparsity trajectory over K pruning steps. s_init > 0 gives the accelerated
/// schedule whose first step already removes s_init of the weights.
struct SparsityScheduleSpec {
  SparsityKind kind = SparsityKind::Cubic;
  double s_init = 0.7;
  double s_final = 0.9;
  std::size_t num_pruning_steps = 1;

  void validate() const;
  bool operator==(const SparsityScheduleSpec&) const = default;
};

/// Sparsity at pruning step k in [0, K-1]:
///   cubic:  s_f + (s_i - s_f) * (1 - k / (K-1))^3
///   linear: s_i + (s_f - s_i) * k / (K-1)
/// K = 1 yields s_final.
double sparsity_at(const SparsityScheduleSpec& spec, std::size_t k);

enum class LRKind { RecurringLinear, SingleLinear, LinearWithWarmup };

std::string_view to_string(LRKind kind);
LRKind lr_kind_from_string(std::string_view name);

struct LRScheduleSpec {
  LRKind kind = LRKind::RecurringLinear;
  double lr_init = 1e-4;
  double lr_final = 1e-6;
  std::size_t cycle_epochs = 2;
  std::size_t total_epochs = 10;
  std::size_t steps_per_epoch = 1;
  /// Only read by LinearWithWarmup.
  std::size_t warmup_steps = 0;

  std::size_t total_steps() const { return total_epochs * steps_per_epoch; }
  void validate() const;
  bool operator==(const LRScheduleSpec&) const = default;
};

/// Learning rate for optimizer step `global_step` in [0, total_steps).
double lr_at(const LRScheduleSpec& spec, std::size_t global_step);

/// Global step indices at which pruning happens.
struct Timetable {
  std::vector<std::size_t> pruning_steps;
  std::size_t total_epochs = 0;
  std::size_t steps_per_epoch = 0;
  std::size_t prune_frequency = 10;
  std::size_t stabilization_epochs = 2;

  std::size_t num_pruning_steps() const { return pruning_steps.size(); }
};

/// Evenly spaced pruning steps, `prune_frequency` per epoch, over epochs
/// [stabilization, total - stabilization). The first lands on the first step of
/// epoch `stabilization_epochs`; the last stabilization window is prune-free.
Timetable pruning_timetable(std::size_t total_epochs, std::size_t steps_per_epoch, std::size_t prune_frequency,
                            std::size_t stabilization_epochs);

}  // namespace sparseforge
