// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "sparseforge/pruning.hpp"

namespace sparseforge {

/// Synthetic sequence classification. Each position holds the marker token with
/// probability `marker_rate`, otherwise a uniform non-marker token. The label is
///   (markers in the first half + index of the first marker) mod num_labels,
/// with the index taken as sequence_length when no marker occurs.
struct TaskSpec {
  std::size_t vocab_size = 64;
  std::size_t sequence_length = 10;
  std::size_t num_labels = 4;
  std::size_t train_size = 8000;
  std::size_t eval_size = 2000;
  std::uint64_t seed = 17;
  std::int32_t marker_token = 1;
  double marker_rate = 0.3;

  void validate() const;
  bool operator==(const TaskSpec&) const = default;
};

struct Example {
  std::vector<std::int32_t> tokens;
  std::int32_t label = 0;

  bool operator==(const Example&) const = default;
};

struct Dataset {
  std::size_t sequence_length = 0;
  std::vector<Example> examples;

  std::size_t size() const { return examples.size(); }
};

struct TaskData {
  Dataset train;
  Dataset eval;
};

std::int32_t task_label(std::span<const std::int32_t> tokens, std::int32_t marker, std::size_t num_labels);

/// Deterministic per seed; train and eval never share a sequence.
TaskData gen_task(const TaskSpec& spec);

/// Gathers `indices` of `data` into one batch (segment ids all zero).
LabeledBatch make_batch(const Dataset& data, std::span<const std::size_t> indices);

/// Consecutive batches covering the dataset in order; the last may be short.
std::vector<LabeledBatch> sequential_batches(const Dataset& data, std::size_t batch_size);

}  // namespace sparseforge
