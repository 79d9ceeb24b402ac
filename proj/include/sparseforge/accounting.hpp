// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "sparseforge/model.hpp"
#include "sparseforge/pruning.hpp"

namespace sparseforge {

enum class ComponentGroup { Embeddings, Encoder, Head };

inline constexpr std::array<ComponentGroup, 3> kComponentGroups{ComponentGroup::Embeddings, ComponentGroup::Encoder,
                                                                ComponentGroup::Head};

std::string_view to_string(ComponentGroup group);

/// Group of a weight tag; layer norms and biases belong to none.
std::optional<ComponentGroup> group_of(ComponentTag tag);

/// Linear-layer weights (or embedding tables) in `group`. Biases and layer
/// norms are not counted.
std::uint64_t param_count(const ArchitectureSpec& spec, ComponentGroup group);

/// Forward FLOPs per token: two per weight for linear layers, zero for lookups.
/// Activation-activation products inside attention are not counted.
std::uint64_t flop_count(const ArchitectureSpec& spec, ComponentGroup group);

struct ComponentReport {
  ComponentGroup group;
  std::uint64_t param_count = 0;
  std::uint64_t flops_per_token = 0;
  double fraction_of_total_params = 0.0;
  double fraction_of_total_flops = 0.0;
};

std::vector<ComponentReport> component_report(const ArchitectureSpec& spec);

struct GroupDensity {
  ComponentGroup group;
  std::uint64_t total = 0;
  std::uint64_t kept = 0;
  double density = 1.0;
  double effective_flops_per_token = 0.0;
};

struct SparsityReport {
  std::vector<GroupDensity> groups;
  /// Pruned encoder-linear weights over all encoder-linear weights.
  double encoder_sparsity = 0.0;

  const GroupDensity& group(ComponentGroup g) const;
};

/// Densities implied by `masks`; parameters without a mask count as dense.
SparsityReport sparsity_report(const ArchitectureSpec& spec, const MaskSet& masks);

/// Fraction of exactly-zero values among a group's weights in a live model.
template <typename T>
double zero_fraction(const Model<T>& model, ComponentGroup group);

}  // namespace sparseforge
