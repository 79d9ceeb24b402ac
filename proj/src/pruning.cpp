// SPDX-License-Identifier: Apache-2.0
#include "sparseforge/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>

#include <fmt/format.h>

#include "sparseforge/errors.hpp"

namespace sparseforge {

std::string_view to_string(Granularity granularity) {
  return granularity == Granularity::Global ? "global" : "per_layer_uniform";
}

Granularity granularity_from_string(std::string_view name) {
  if (name == "global") return Granularity::Global;
  if (name == "per_layer_uniform") return Granularity::PerLayerUniform;
  throw ConfigError(fmt::format("unknown granularity '{}'", name));
}

std::string_view to_string(PrunerKind kind) { return kind == PrunerKind::Magnitude ? "magnitude" : "diagonal_fisher"; }

PrunerKind pruner_from_string(std::string_view name) {
  if (name == "magnitude") return PrunerKind::Magnitude;
  if (name == "diagonal_fisher") return PrunerKind::DiagonalFisher;
  throw ConfigError(fmt::format("unknown pruner '{}'", name));
}

ScopePolicy ScopePolicy::encoder_only() { return ScopePolicy{}; }

ScopePolicy ScopePolicy::all_components() {
  return ScopePolicy{{ComponentTag::TokenEmbedding, ComponentTag::PositionEmbedding, ComponentTag::SegmentEmbedding,
                      ComponentTag::EncoderLinear, ComponentTag::ClassificationHead},
                     Granularity::Global};
}

// ---------------------------------------------------------------------------
// MaskSet

MaskSet MaskSet::dense(const std::vector<ParameterInfo>& layout, const ScopePolicy& policy) {
  MaskSet out;
  for (std::size_t i : parameters_by_component(layout, policy.included)) out.masks_[i] = Mask(layout[i].numel(), 1);
  return out;
}

const Mask& MaskSet::mask(std::size_t param) const {
  const auto it = masks_.find(param);
  if (it == masks_.end()) throw ContractError(fmt::format("no mask for parameter {}", param));
  return it->second;
}

Mask& MaskSet::mask(std::size_t param) {
  const auto it = masks_.find(param);
  if (it == masks_.end()) throw ContractError(fmt::format("no mask for parameter {}", param));
  return it->second;
}

void MaskSet::set(std::size_t param, Mask mask) { masks_[param] = std::move(mask); }

std::size_t MaskSet::total_count() const {
  std::size_t n = 0;
  for (const auto& [_, m] : masks_) n += m.size();
  return n;
}

std::size_t MaskSet::pruned_count(std::size_t param) const {
  const Mask& m = mask(param);
  return static_cast<std::size_t>(std::count(m.begin(), m.end(), std::uint8_t{0}));
}

std::size_t MaskSet::pruned_count() const {
  std::size_t n = 0;
  for (const auto& [id, _] : masks_) n += pruned_count(id);
  return n;
}

double MaskSet::sparsity() const {
  const std::size_t total = total_count();
  return total == 0 ? 0.0 : static_cast<double>(pruned_count()) / static_cast<double>(total);
}

bool MaskSet::contains_pruning_of(const MaskSet& earlier) const {
  for (const auto& [id, old] : earlier.masks_) {
    const auto it = masks_.find(id);
    if (it == masks_.end() || it->second.size() != old.size()) return false;
    for (std::size_t i = 0; i < old.size(); ++i) {
      if (old[i] == 0 && it->second[i] != 0) return false;
    }
  }
  return true;
}

void check_masks(const std::vector<ParameterInfo>& layout, const MaskSet& masks) {
  for (const auto& [id, m] : masks.masks()) {
    if (id >= layout.size()) throw ContractError(fmt::format("mask for unknown parameter {}", id));
    if (m.size() != layout[id].numel()) {
      throw ContractError(fmt::format("mask for '{}' has {} entries, parameter has {}", layout[id].name, m.size(),
                                      layout[id].numel()));
    }
  }
}

// ---------------------------------------------------------------------------
// Scores

template <typename T>
std::vector<double> magnitude_scores(std::span<const T> weights, const Mask* mask) {
  if (mask != nullptr && mask->size() != weights.size()) {
    throw ContractError(fmt::format("magnitude_scores: mask has {} entries for {} weights", mask->size(), weights.size()));
  }
  std::vector<double> scores(weights.size());
  for (std::size_t i = 0; i < weights.size(); ++i) {
    scores[i] = (mask != nullptr && (*mask)[i] == 0) ? kPrunedScore : std::abs(static_cast<double>(weights[i]));
  }
  return scores;
}

template <typename T>
SaliencySet magnitude_scores(const Model<T>& model, const MaskSet& masks) {
  check_masks(model.layout(), masks);
  SaliencySet out;
  for (const auto& [id, m] : masks.masks()) out[id] = magnitude_scores(model.parameters()[id].value.data(), &m);
  return out;
}

template <typename T>
std::vector<std::vector<double>> fisher_scores(
    std::span<const Tensor<T>* const> weights, std::size_t num_samples,
    const std::function<std::vector<Tensor<T>>(std::size_t sample)>& sample_gradients, double dampening) {
  if (num_samples == 0) throw ContractError("fisher_scores: need at least one sample");
  std::vector<std::vector<double>> fisher(weights.size());
  for (std::size_t p = 0; p < weights.size(); ++p) fisher[p].assign(weights[p]->numel(), 0.0);
  for (std::size_t n = 0; n < num_samples; ++n) {
    const std::vector<Tensor<T>> grads = sample_gradients(n);
    if (grads.size() != weights.size()) throw ContractError("fisher_scores: gradient count does not match weights");
    for (std::size_t p = 0; p < weights.size(); ++p) {
      if (grads[p].numel() != fisher[p].size()) throw ContractError("fisher_scores: gradient shape mismatch");
      for (std::size_t i = 0; i < fisher[p].size(); ++i) {
        const double g = static_cast<double>(grads[p][i]);
        fisher[p][i] += g * g;
      }
    }
  }
  const double inv_n = 1.0 / static_cast<double>(num_samples);
  for (std::size_t p = 0; p < weights.size(); ++p) {
    for (std::size_t i = 0; i < fisher[p].size(); ++i) {
      const double w = static_cast<double>((*weights[p])[i]);
      fisher[p][i] = w * w * (fisher[p][i] * inv_n + dampening) / 2.0;
    }
  }
  return fisher;
}

template <typename T>
SaliencySet fisher_scores(const Model<T>& model, const MaskSet& masks, std::span<const LabeledBatch> data,
                          std::size_t num_samples, double dampening) {
  check_masks(model.layout(), masks);
  std::vector<std::pair<std::size_t, std::size_t>> examples;  // (batch, row)
  for (std::size_t b = 0; b < data.size(); ++b) {
    for (std::size_t r = 0; r < data[b].inputs.batch_size; ++r) examples.emplace_back(b, r);
  }
  if (examples.empty()) throw ContractError("fisher_scores: no data");
  const std::size_t samples = std::min(num_samples, examples.size());

  std::vector<std::size_t> ids;
  std::vector<const Tensor<T>*> weights;
  for (const auto& [id, _] : masks.masks()) {
    ids.push_back(id);
    weights.push_back(&model.parameters()[id].value);
  }

  auto sample_gradients = [&](std::size_t n) {
    const auto [b, r] = examples[n];
    const LabeledBatch& source = data[b];
    const std::size_t seq = source.inputs.seq_len;
    TokenBatch single{1, seq, {}, {}};
    single.tokens.assign(source.inputs.tokens.begin() + static_cast<std::ptrdiff_t>(r * seq),
                         source.inputs.tokens.begin() + static_cast<std::ptrdiff_t>((r + 1) * seq));
    if (!source.inputs.segments.empty()) {
      single.segments.assign(source.inputs.segments.begin() + static_cast<std::ptrdiff_t>(r * seq),
                             source.inputs.segments.begin() + static_cast<std::ptrdiff_t>((r + 1) * seq));
    }
    const std::int32_t label = source.labels.at(r);
    GradientSet<T> grads = model.zero_gradients();
    Graph<T> graph;
    const Var<T> logits = forward(graph, model, single, ForwardOptions{}, &grads);
    graph.backward(cross_entropy(logits, std::span<const std::int32_t>(&label, 1)));
    std::vector<Tensor<T>> out;
    out.reserve(ids.size());
    for (std::size_t id : ids) out.push_back(std::move(grads[id]));
    return out;
  };

  const auto scores = fisher_scores<T>(weights, samples, sample_gradients, dampening);
  SaliencySet out;
  for (std::size_t p = 0; p < ids.size(); ++p) {
    std::vector<double> s = scores[p];
    const Mask& m = masks.mask(ids[p]);
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (m[i] == 0) s[i] = kPrunedScore;
    }
    out[ids[p]] = std::move(s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Selection

namespace {

struct Candidate {
  double score;
  std::size_t param;
  std::size_t index;
};

bool ranks_before(const Candidate& a, const Candidate& b) {
  return std::tie(a.score, a.param, a.index) < std::tie(b.score, b.param, b.index);
}

std::size_t target_count(double target, std::size_t total) {
  // Guard against products like 0.7 * 100 landing just below an integer.
  const long double exact = static_cast<long double>(target) * static_cast<long double>(total);
  return static_cast<std::size_t>(std::floor(exact + 1e-9L));
}

// Masks the `count` lowest-ranked candidates.
void prune_lowest(std::vector<Candidate>& candidates, std::size_t count, MaskSet& out) {
  if (count == 0) return;
  if (count < candidates.size()) {
    std::nth_element(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(count), candidates.end(),
                     ranks_before);
  }
  for (std::size_t i = 0; i < count; ++i) out.mask(candidates[i].param)[candidates[i].index] = 0;
}

std::vector<Candidate> candidates_for(const SaliencySet& scores, const MaskSet& masks, std::size_t param) {
  const auto it = scores.find(param);
  if (it == scores.end()) throw ContractError(fmt::format("select_prune: no scores for parameter {}", param));
  const Mask& m = masks.mask(param);
  if (it->second.size() != m.size()) {
    throw ContractError(fmt::format("select_prune: {} scores for a mask of {}", it->second.size(), m.size()));
  }
  std::vector<Candidate> out;
  out.reserve(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double s = it->second[i];
    if (std::isnan(s)) throw ContractError(fmt::format("select_prune: NaN score in parameter {}", param));
    out.push_back(Candidate{m[i] == 0 ? kPrunedScore : s, param, i});
  }
  return out;
}

}  // namespace

MaskSet select_prune(const SaliencySet& scores, const MaskSet& masks, double target, const ScopePolicy& policy) {
  if (!(target >= 0.0 && target <= 1.0)) throw ScheduleError(fmt::format("sparsity target {} outside [0, 1]", target));
  const std::size_t total = masks.total_count();
  const std::size_t already = masks.pruned_count();
  const std::size_t wanted = target_count(target, total);
  if (wanted < already) {
    throw ScheduleError(fmt::format("sparsity target {} is below the current sparsity {} ({} of {} pruned)", target,
                                    masks.sparsity(), already, total));
  }

  MaskSet out = masks;
  if (policy.granularity == Granularity::Global) {
    std::vector<Candidate> all;
    all.reserve(total);
    for (const auto& [id, _] : masks.masks()) {
      auto c = candidates_for(scores, masks, id);
      all.insert(all.end(), c.begin(), c.end());
    }
    prune_lowest(all, wanted, out);
    return out;
  }

  // Per-tensor quotas at the same target, never below what a tensor already has
  // pruned, rounded so they sum to `wanted` (largest remainder first, ties to the
  // lower parameter index).
  std::vector<std::size_t> ids, quota, floor_count, size;
  std::vector<std::pair<long double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (const auto& [id, m] : masks.masks()) {
    const long double exact = static_cast<long double>(target) * static_cast<long double>(m.size());
    const std::size_t base = target_count(target, m.size());
    remainders.emplace_back(-(exact - static_cast<long double>(base)), ids.size());
    ids.push_back(id);
    floor_count.push_back(masks.pruned_count(id));
    size.push_back(m.size());
    quota.push_back(std::max(base, floor_count.back()));
    assigned += quota.back();
  }
  std::sort(remainders.begin(), remainders.end());
  while (assigned < wanted) {
    for (std::size_t i = 0; assigned < wanted && i < remainders.size(); ++i) {
      const std::size_t t = remainders[i].second;
      if (quota[t] < size[t]) ++quota[t], ++assigned;
    }
  }
  // Tensors kept above their rounded share by earlier steps push the sum over;
  // give the excess back from the smallest remainders.
  while (assigned > wanted) {
    for (std::size_t i = remainders.size(); assigned > wanted && i-- > 0;) {
      const std::size_t t = remainders[i].second;
      if (quota[t] > floor_count[t]) --quota[t], --assigned;
    }
  }
  for (std::size_t t = 0; t < ids.size(); ++t) {
    auto c = candidates_for(scores, masks, ids[t]);
    prune_lowest(c, quota[t], out);
  }
  return out;
}

template <typename T>
void apply_masks(Model<T>& model, const MaskSet& masks) {
  check_masks(model.layout(), masks);
  for (const auto& [id, m] : masks.masks()) {
    auto w = model.parameters()[id].value.data();
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (m[i] == 0) w[i] = T{0};
    }
  }
}

template <typename T>
void mask_gradients(GradientSet<T>& grads, const MaskSet& masks) {
  for (const auto& [id, m] : masks.masks()) {
    if (id >= grads.size() || grads[id].numel() != m.size()) {
      throw ContractError(fmt::format("mask_gradients: mask {} does not match gradient shapes", id));
    }
    auto g = grads[id].data();
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (m[i] == 0) g[i] = T{0};
    }
  }
}

template <typename T>
MaskSet one_shot_prune(Model<T>& model, PrunerKind pruner, double target, const ScopePolicy& policy,
                       std::span<const LabeledBatch> fisher_data, std::size_t fisher_samples) {
  const MaskSet dense = MaskSet::dense(model.layout(), policy);
  const SaliencySet scores = pruner == PrunerKind::Magnitude
                                 ? magnitude_scores(model, dense)
                                 : fisher_scores(model, dense, fisher_data, fisher_samples);
  MaskSet masks = select_prune(scores, dense, target, policy);
  apply_masks(model, masks);
  return masks;
}

#define SPARSEFORGE_INSTANTIATE_PRUNING(T)                                                                      \
  template std::vector<double> magnitude_scores(std::span<const T>, const Mask*);                               \
  template SaliencySet magnitude_scores(const Model<T>&, const MaskSet&);                                       \
  template std::vector<std::vector<double>> fisher_scores(                                                      \
      std::span<const Tensor<T>* const>, std::size_t,                                                           \
      const std::function<std::vector<Tensor<T>>(std::size_t)>&, double);                                       \
  template SaliencySet fisher_scores(const Model<T>&, const MaskSet&, std::span<const LabeledBatch>, std::size_t, \
                                     double);                                                                   \
  template void apply_masks(Model<T>&, const MaskSet&);                                                         \
  template void mask_gradients(GradientSet<T>&, const MaskSet&);                                                \
  template MaskSet one_shot_prune(Model<T>&, PrunerKind, double, const ScopePolicy&,                            \
                                  std::span<const LabeledBatch>, std::size_t);

SPARSEFORGE_INSTANTIATE_PRUNING(float)
SPARSEFORGE_INSTANTIATE_PRUNING(double)

#undef SPARSEFORGE_INSTANTIATE_PRUNING

}  // namespace sparseforge
