// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <span>
#include <string_view>
#include <vector>

#include "sparseforge/model.hpp"

namespace sparseforge {

/// 1 keeps a weight, 0 prunes it.
using Mask = std::vector<std::uint8_t>;

enum class Granularity { Global, PerLayerUniform };

std::string_view to_string(Granularity granularity);
Granularity granularity_from_string(std::string_view name);

/// Which components are eligible for pruning and how the threshold is shared.
struct ScopePolicy {
  std::set<ComponentTag> included{ComponentTag::EncoderLinear};
  Granularity granularity = Granularity::Global;

  static ScopePolicy encoder_only();
  /// Every weight matrix and embedding table, leaving layer norms and biases dense.
  static ScopePolicy all_components();

  bool operator==(const ScopePolicy&) const = default;
};

/// Binary masks keyed by parameter index. Only in-scope parameters have a mask.
class MaskSet {
 public:
  MaskSet() = default;

  /// All-ones masks for every parameter of `layout` selected by `policy`.
  static MaskSet dense(const std::vector<ParameterInfo>& layout, const ScopePolicy& policy);

  bool contains(std::size_t param) const { return masks_.contains(param); }
  const Mask& mask(std::size_t param) const;
  Mask& mask(std::size_t param);
  void set(std::size_t param, Mask mask);
  const std::map<std::size_t, Mask>& masks() const { return masks_; }
  bool empty() const { return masks_.empty(); }

  std::size_t total_count() const;
  std::size_t pruned_count() const;
  std::size_t pruned_count(std::size_t param) const;
  /// Pruned fraction over all masked parameters; 0 for an empty set.
  double sparsity() const;

  /// True when every weight pruned in `earlier` is also pruned here.
  bool contains_pruning_of(const MaskSet& earlier) const;

  bool operator==(const MaskSet&) const = default;

 private:
  std::map<std::size_t, Mask> masks_;
};

/// Per-weight scores keyed by parameter index. Lower scores are pruned first.
using SaliencySet = std::map<std::size_t, std::vector<double>>;

/// Score given to already-pruned weights so they always rank lowest.
inline constexpr double kPrunedScore = -std::numeric_limits<double>::infinity();

enum class PrunerKind { Magnitude, DiagonalFisher };

std::string_view to_string(PrunerKind kind);
PrunerKind pruner_from_string(std::string_view name);

/// |w| per entry; entries with mask 0 get kPrunedScore.
template <typename T>
std::vector<double> magnitude_scores(std::span<const T> weights, const Mask* mask = nullptr);

template <typename T>
SaliencySet magnitude_scores(const Model<T>& model, const MaskSet& masks);

/// Optimal-brain-damage saliency from the diagonal empirical Fisher:
/// score = w^2 * (mean_n g_n^2 + dampening) / 2.
///
/// `sample_gradients(n)` returns the loss gradient of sample n, one tensor per
/// entry of `weights`.
template <typename T>
std::vector<std::vector<double>> fisher_scores(
    std::span<const Tensor<T>* const> weights, std::size_t num_samples,
    const std::function<std::vector<Tensor<T>>(std::size_t sample)>& sample_gradients, double dampening);

/// Labelled sequences used for scoring and training.
struct LabeledBatch {
  TokenBatch inputs;
  std::vector<std::int32_t> labels;
};

inline constexpr double kFisherDampening = 1e-8;

/// Diagonal-Fisher scores for every masked parameter, using per-example
/// cross-entropy gradients of the first `num_samples` examples in `data`.
template <typename T>
SaliencySet fisher_scores(const Model<T>& model, const MaskSet& masks, std::span<const LabeledBatch> data,
                          std::size_t num_samples, double dampening = kFisherDampening);

/// Masks the lowest-scoring weights until the in-scope sparsity reaches
/// floor(target * N) / N. Already-pruned weights stay pruned. Ties are broken by
/// (parameter index, flat index) ascending.
MaskSet select_prune(const SaliencySet& scores, const MaskSet& masks, double target, const ScopePolicy& policy);

/// Zeroes every masked weight.
template <typename T>
void apply_masks(Model<T>& model, const MaskSet& masks);

/// Zeroes gradient entries of masked weights so the optimizer never moves them.
template <typename T>
void mask_gradients(GradientSet<T>& grads, const MaskSet& masks);

/// Checks masks against a model's parameter shapes; throws ContractError on mismatch.
void check_masks(const std::vector<ParameterInfo>& layout, const MaskSet& masks);

/// Prunes a trained model to `target` in one step from all-ones masks, with no retraining.
template <typename T>
MaskSet one_shot_prune(Model<T>& model, PrunerKind pruner, double target, const ScopePolicy& policy,
                       std::span<const LabeledBatch> fisher_data = {}, std::size_t fisher_samples = 0);

}  // namespace sparseforge
