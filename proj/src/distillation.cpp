// SPDX-License-Identifier: Apache-2.0
#include "sparseforge/distillation.hpp"

#include <cmath>

#include <fmt/format.h>

#include "sparseforge/errors.hpp"

namespace sparseforge {

void KDConfig::validate() const {
  if (!(hardness >= 0.0 && hardness <= 1.0)) throw ConfigError(fmt::format("hardness {} outside [0, 1]", hardness));
  if (!(temperature > 0.0)) throw ConfigError(fmt::format("temperature {} must be positive", temperature));
}

template <typename T>
Tensor<T> soften(const Tensor<T>& logits, double temperature) {
  if (!(temperature > 0.0)) throw ContractError(fmt::format("soften: temperature {} must be positive", temperature));
  if (logits.rank() == 0) throw DimensionError("soften: logits need at least one axis");
  Graph<T> graph;
  const Var<T> scaled = scale(graph.constant(logits), static_cast<T>(1.0 / temperature));
  return softmax(scaled, logits.rank() - 1).value();
}

template <typename T>
std::vector<double> row_entropy(const Tensor<T>& probabilities) {
  const std::size_t cols = probabilities.shape().back();
  const std::size_t rows = probabilities.numel() / cols;
  std::vector<double> out(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const double p = static_cast<double>(probabilities[r * cols + c]);
      if (p > 0.0) out[r] -= p * std::log(p);
    }
  }
  return out;
}

template <typename T>
Var<T> kd_loss(Var<T> student_logits, const Tensor<T>& teacher_logits, std::span<const std::int32_t> labels,
               const KDConfig& config) {
  config.validate();
  if (student_logits.shape() != teacher_logits.shape()) {
    throw ContractError(fmt::format("kd_loss: student logits {} vs teacher logits {}",
                                    shape_string(student_logits.shape()), shape_string(teacher_logits.shape())));
  }
  Graph<T>& graph = *student_logits.graph;
  const T h = static_cast<T>(config.hardness);
  const T inv_t = static_cast<T>(1.0 / config.temperature);
  const std::size_t class_axis = teacher_logits.rank() - 1;

  std::optional<Var<T>> loss;
  if (config.hardness < 1.0) loss = scale(cross_entropy(student_logits, labels), T{1} - h);
  if (config.hardness > 0.0) {
    const Var<T> teacher_probs = graph.constant(soften(teacher_logits, config.temperature));
    const Var<T> student_probs = softmax(scale(student_logits, inv_t), class_axis);
    const T t2 = config.scale_by_t2 ? static_cast<T>(config.temperature * config.temperature) : T{1};
    const Var<T> kl = scale(kl_divergence(teacher_probs, student_probs), h * t2);
    loss = loss ? add(*loss, kl) : kl;
  }
  return *loss;
}

template Tensor<float> soften(const Tensor<float>&, double);
template Tensor<double> soften(const Tensor<double>&, double);
template std::vector<double> row_entropy(const Tensor<float>&);
template std::vector<double> row_entropy(const Tensor<double>&);
template Var<float> kd_loss(Var<float>, const Tensor<float>&, std::span<const std::int32_t>, const KDConfig&);
template Var<double> kd_loss(Var<double>, const Tensor<double>&, std::span<const std::int32_t>, const KDConfig&);

}  // namespace sparseforge
