// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>

#include "sparseforge/autograd.hpp"
#include "sparseforge/model.hpp"

namespace sparseforge {

struct KDConfig {
  /// Weight of the distillation term; 0 is plain cross-entropy.
  double hardness = 1.0;
  double temperature = 5.5;
  /// Multiply the KL term by T^2 so its gradient scale does not shrink with T.
  bool scale_by_t2 = true;

  void validate() const;
  bool operator==(const KDConfig&) const = default;
};

/// softmax(logits / T) along the last axis.
template <typename T>
Tensor<T> soften(const Tensor<T>& logits, double temperature);

/// Shannon entropy (nats) of each row of a (batch, classes) probability tensor.
template <typename T>
std::vector<double> row_entropy(const Tensor<T>& probabilities);

/// (1 - h) CE(student, labels) + h [T^2] KL(softmax(teacher/T) || softmax(student/T)).
/// Teacher logits enter as a constant, so nothing flows back to the teacher.
template <typename T>
Var<T> kd_loss(Var<T> student_logits, const Tensor<T>& teacher_logits, std::span<const std::int32_t> labels,
               const KDConfig& config);

/// Frozen copy of a trained model, always evaluated with dropout off.
template <typename T>
class Teacher {
 public:
  explicit Teacher(const Model<T>& trained) : model_(trained) {}

  Tensor<T> logits(const TokenBatch& batch) const { return predict_logits(model_, batch); }
  const Model<T>& model() const { return model_; }

 private:
  Model<T> model_;
};

template <typename T>
Teacher<T> make_teacher(const Model<T>& trained) {
  return Teacher<T>(trained);
}

}  // namespace sparseforge
