// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sparseforge/autograd.hpp"

namespace sparseforge {

/// Builds a scalar loss on `graph` from the given leaf variables.
using LossBuilder = std::function<Var<double>(Graph<double>& graph, std::span<const Var<double>> inputs)>;

struct GradCheckReport {
  /// Max |analytic - numeric| per input, divided by that input's largest gradient magnitude.
  std::vector<double> max_relative_error;
  double tolerance = 0.0;

  bool passed() const;
  double worst() const;
  std::string summary() const;
};

/// Compares reverse-mode gradients against central differences with step `step`.
GradCheckReport grad_check(const LossBuilder& loss, const std::vector<Tensor<double>>& inputs, double tolerance,
                           double step = 1e-5);

}  // namespace sparseforge
