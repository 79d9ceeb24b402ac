// SPDX-License-Identifier: Apache-2.0
#include "sparseforge/accounting.hpp"

#include <algorithm>

#include "sparseforge/errors.hpp"

namespace sparseforge {

std::string_view to_string(ComponentGroup group) {
  switch (group) {
    case ComponentGroup::Embeddings:
      return "embeddings";
    case ComponentGroup::Encoder:
      return "encoder";
    case ComponentGroup::Head:
      return "classification_head";
  }
  return "unknown";
}

std::optional<ComponentGroup> group_of(ComponentTag tag) {
  switch (tag) {
    case ComponentTag::TokenEmbedding:
    case ComponentTag::PositionEmbedding:
    case ComponentTag::SegmentEmbedding:
      return ComponentGroup::Embeddings;
    case ComponentTag::EncoderLinear:
      return ComponentGroup::Encoder;
    case ComponentTag::ClassificationHead:
      return ComponentGroup::Head;
    case ComponentTag::LayerNormParam:
    case ComponentTag::Bias:
      return std::nullopt;
  }
  return std::nullopt;
}

std::uint64_t param_count(const ArchitectureSpec& spec, ComponentGroup group) {
  std::uint64_t n = 0;
  for (const auto& info : parameter_layout(spec)) {
    if (group_of(info.tag) == group) n += info.numel();
  }
  return n;
}

std::uint64_t flop_count(const ArchitectureSpec& spec, ComponentGroup group) {
  if (group == ComponentGroup::Embeddings) return 0;
  return 2 * param_count(spec, group);
}

std::vector<ComponentReport> component_report(const ArchitectureSpec& spec) {
  std::vector<ComponentReport> rows;
  std::uint64_t total_params = 0, total_flops = 0;
  for (ComponentGroup g : kComponentGroups) {
    rows.push_back(ComponentReport{g, param_count(spec, g), flop_count(spec, g), 0.0, 0.0});
    total_params += rows.back().param_count;
    total_flops += rows.back().flops_per_token;
  }
  for (auto& r : rows) {
    r.fraction_of_total_params = static_cast<double>(r.param_count) / static_cast<double>(total_params);
    r.fraction_of_total_flops =
        total_flops == 0 ? 0.0 : static_cast<double>(r.flops_per_token) / static_cast<double>(total_flops);
  }
  return rows;
}

const GroupDensity& SparsityReport::group(ComponentGroup g) const {
  const auto it = std::find_if(groups.begin(), groups.end(), [&](const GroupDensity& d) { return d.group == g; });
  if (it == groups.end()) throw ContractError("sparsity report has no such group");
  return *it;
}

SparsityReport sparsity_report(const ArchitectureSpec& spec, const MaskSet& masks) {
  const auto layout = parameter_layout(spec);
  check_masks(layout, masks);
  SparsityReport report;
  for (ComponentGroup g : kComponentGroups) report.groups.push_back(GroupDensity{g, 0, 0, 1.0, 0.0});
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto g = group_of(layout[i].tag);
    if (!g) continue;
    GroupDensity& d = report.groups[static_cast<std::size_t>(*g)];
    d.total += layout[i].numel();
    d.kept += masks.contains(i) ? layout[i].numel() - masks.pruned_count(i) : layout[i].numel();
  }
  for (auto& d : report.groups) {
    d.density = d.total == 0 ? 1.0 : static_cast<double>(d.kept) / static_cast<double>(d.total);
    d.effective_flops_per_token = static_cast<double>(flop_count(spec, d.group)) * d.density;
  }
  const GroupDensity& encoder = report.group(ComponentGroup::Encoder);
  report.encoder_sparsity =
      encoder.total == 0 ? 0.0 : static_cast<double>(encoder.total - encoder.kept) / static_cast<double>(encoder.total);
  return report;
}

template <typename T>
double zero_fraction(const Model<T>& model, ComponentGroup group) {
  std::uint64_t total = 0, zeros = 0;
  for (const auto& p : model.parameters()) {
    if (group_of(p.info.tag) != group) continue;
    total += p.value.numel();
    zeros += static_cast<std::uint64_t>(std::count(p.value.data().begin(), p.value.data().end(), T{0}));
  }
  return total == 0 ? 0.0 : static_cast<double>(zeros) / static_cast<double>(total);
}

template double zero_fraction(const Model<float>&, ComponentGroup);
template double zero_fraction(const Model<double>&, ComponentGroup);

}  // namespace sparseforge
