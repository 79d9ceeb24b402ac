// SPDX-License-Identifier: Apache-2.0
#include "sparseforge/optim.hpp"

#include <cmath>

#include "sparseforge/errors.hpp"

namespace sparseforge {

template <typename T>
Adam<T>::Adam(const Model<T>& model, AdamConfig config) : config_(config) {
  m_ = model.zero_gradients();
  v_ = model.zero_gradients();
}

template <typename T>
void Adam<T>::step(Model<T>& model, const GradientSet<T>& grads, double lr) {
  auto& params = model.parameters();
  if (grads.size() != params.size() || m_.size() != params.size()) {
    throw ContractError("Adam::step: gradients do not match the model");
  }
  ++step_;
  const T b1 = static_cast<T>(config_.beta1);
  const T b2 = static_cast<T>(config_.beta2);
  const T eps = static_cast<T>(config_.epsilon);
  const double t = static_cast<double>(step_);
  const T correction1 = static_cast<T>(1.0 - std::pow(config_.beta1, t));
  const T correction2 = static_cast<T>(1.0 - std::pow(config_.beta2, t));
  const T step_size = static_cast<T>(lr);
  const T decay = static_cast<T>(lr * config_.weight_decay);
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto w = params[p].value.data();
    auto g = grads[p].data();
    auto m = m_[p].data();
    auto v = v_[p].data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (T{1} - b1) * g[i];
      v[i] = b2 * v[i] + (T{1} - b2) * g[i] * g[i];
      const T m_hat = m[i] / correction1;
      const T v_hat = v[i] / correction2;
      w[i] -= step_size * m_hat / (std::sqrt(v_hat) + eps) + decay * w[i];
    }
  }
}

template <typename T>
void Adam<T>::reset_pruned(const MaskSet& masks) {
  for (const auto& [id, mask] : masks.masks()) {
    if (id >= m_.size() || m_[id].numel() != mask.size()) throw ContractError("Adam::reset_pruned: mask mismatch");
    auto m = m_[id].data();
    auto v = v_[id].data();
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (mask[i] == 0) {
        m[i] = T{0};
        v[i] = T{0};
      }
    }
  }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace sparseforge
