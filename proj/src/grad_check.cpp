// SPDX-License-Identifier: Apache-2.0
#include "sparseforge/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace sparseforge {

namespace {

// Keeps all-zero gradients from turning rounding noise into a large ratio.
constexpr double kScaleFloor = 1e-6;

double evaluate(const LossBuilder& loss, const std::vector<Tensor<double>>& inputs) {
  Graph<double> graph;
  std::vector<Var<double>> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) vars.push_back(graph.constant(t));
  return loss(graph, vars).value().item();
}

}  // namespace

bool GradCheckReport::passed() const { return worst() < tolerance; }

double GradCheckReport::worst() const {
  return max_relative_error.empty() ? 0.0 : *std::max_element(max_relative_error.begin(), max_relative_error.end());
}

std::string GradCheckReport::summary() const {
  std::string out = fmt::format("grad_check tolerance {:g}:", tolerance);
  for (std::size_t i = 0; i < max_relative_error.size(); ++i) out += fmt::format(" [{}]={:.3g}", i, max_relative_error[i]);
  return out;
}

GradCheckReport grad_check(const LossBuilder& loss, const std::vector<Tensor<double>>& inputs, double tolerance,
                           double step) {
  Graph<double> graph;
  std::vector<Var<double>> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) vars.push_back(graph.variable(t));
  graph.backward(loss(graph, vars));

  GradCheckReport report;
  report.tolerance = tolerance;
  std::vector<Tensor<double>> probe = inputs;
  for (std::size_t p = 0; p < inputs.size(); ++p) {
    const Tensor<double> analytic = graph.grad(vars[p]);
    double max_diff = 0.0;
    double max_magnitude = kScaleFloor;
    for (std::size_t i = 0; i < inputs[p].numel(); ++i) {
      const double original = inputs[p][i];
      probe[p][i] = original + step;
      const double plus = evaluate(loss, probe);
      probe[p][i] = original - step;
      const double minus = evaluate(loss, probe);
      probe[p][i] = original;
      const double numeric = (plus - minus) / (2.0 * step);
      max_diff = std::max(max_diff, std::abs(analytic[i] - numeric));
      max_magnitude = std::max({max_magnitude, std::abs(analytic[i]), std::abs(numeric)});
    }
    report.max_relative_error.push_back(max_diff / max_magnitude);
  }
  return report;
}

}  // namespace sparseforge
