// SPDX-License-Identifier: Apache-2.0
#include "sparseforge/task.hpp"

#include <numeric>
#include <random>
#include <set>

#include <fmt/format.h>

#include "sparseforge/errors.hpp"

namespace sparseforge {

void TaskSpec::validate() const {
  if (vocab_size < 2) throw ConfigError("task: vocab_size must be >= 2");
  if (sequence_length < 2) throw ConfigError("task: sequence_length must be >= 2");
  if (num_labels < 2) throw ConfigError("task: num_labels must be >= 2");
  if (train_size < 1 || eval_size < 1) throw ConfigError("task: train_size and eval_size must be >= 1");
  if (marker_token < 0 || static_cast<std::size_t>(marker_token) >= vocab_size) {
    throw ConfigError(fmt::format("task: marker_token {} outside the vocabulary", marker_token));
  }
  if (!(marker_rate > 0.0 && marker_rate < 1.0)) throw ConfigError("task: marker_rate must lie in (0, 1)");
}

std::int32_t task_label(std::span<const std::int32_t> tokens, std::int32_t marker, std::size_t num_labels) {
  const std::size_t half = tokens.size() / 2;
  std::size_t count = 0;
  for (std::size_t i = 0; i < half; ++i) count += tokens[i] == marker ? 1 : 0;
  std::size_t first = tokens.size();
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] == marker) {
      first = i;
      break;
    }
  }
  return static_cast<std::int32_t>((count + first) % num_labels);
}

TaskData gen_task(const TaskSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::bernoulli_distribution is_marker(spec.marker_rate);
  std::uniform_int_distribution<std::int32_t> other(0, static_cast<std::int32_t>(spec.vocab_size) - 2);

  auto draw = [&]() {
    std::vector<std::int32_t> tokens(spec.sequence_length);
    for (auto& t : tokens) {
      if (is_marker(rng)) {
        t = spec.marker_token;
      } else {
        const std::int32_t v = other(rng);
        t = v >= spec.marker_token ? v + 1 : v;
      }
    }
    return tokens;
  };

  std::set<std::vector<std::int32_t>> eval_seen;
  TaskData data;
  data.eval.sequence_length = data.train.sequence_length = spec.sequence_length;
  while (data.eval.size() < spec.eval_size) {
    auto tokens = draw();
    if (!eval_seen.insert(tokens).second) continue;
    const std::int32_t label = task_label(tokens, spec.marker_token, spec.num_labels);
    data.eval.examples.push_back(Example{std::move(tokens), label});
  }
  while (data.train.size() < spec.train_size) {
    auto tokens = draw();
    if (eval_seen.contains(tokens)) continue;
    const std::int32_t label = task_label(tokens, spec.marker_token, spec.num_labels);
    data.train.examples.push_back(Example{std::move(tokens), label});
  }
  return data;
}

LabeledBatch make_batch(const Dataset& data, std::span<const std::size_t> indices) {
  LabeledBatch batch;
  batch.inputs.batch_size = indices.size();
  batch.inputs.seq_len = data.sequence_length;
  batch.inputs.tokens.reserve(indices.size() * data.sequence_length);
  batch.labels.reserve(indices.size());
  for (std::size_t i : indices) {
    const Example& ex = data.examples.at(i);
    if (ex.tokens.size() != data.sequence_length) throw DimensionError("make_batch: ragged example");
    batch.inputs.tokens.insert(batch.inputs.tokens.end(), ex.tokens.begin(), ex.tokens.end());
    batch.labels.push_back(ex.label);
  }
  return batch;
}

std::vector<LabeledBatch> sequential_batches(const Dataset& data, std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  std::vector<LabeledBatch> out;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    idx.resize(std::min(batch_size, data.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    out.push_back(make_batch(data, idx));
  }
  return out;
}

}  // namespace sparseforge
