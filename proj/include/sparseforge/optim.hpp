// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "sparseforge/model.hpp"
#include "sparseforge/pruning.hpp"

namespace sparseforge {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Decoupled (AdamW-style) decay.
  double weight_decay = 0.0;

  bool operator==(const AdamConfig&) const = default;
};

/// Adam with bias correction. Moments are stored per parameter in model order.
template <typename T>
class Adam {
 public:
  Adam(const Model<T>& model, AdamConfig config);

  /// One update with learning rate `lr`. Gradients of masked weights must
  /// already be zero; their moments then stay zero and the weights do not move.
  void step(Model<T>& model, const GradientSet<T>& grads, double lr);

  /// Clears both moments for every masked weight.
  void reset_pruned(const MaskSet& masks);

  std::size_t steps_taken() const { return step_; }
  const AdamConfig& config() const { return config_; }
  const std::vector<Tensor<T>>& first_moment() const { return m_; }
  const std::vector<Tensor<T>>& second_moment() const { return v_; }

 private:
  AdamConfig config_;
  std::size_t step_ = 0;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace sparseforge
