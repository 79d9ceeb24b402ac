// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "sparseforge/autograd.hpp"
#include "sparseforge/tensor.hpp"

namespace sparseforge {

enum class ComponentTag {
  TokenEmbedding,
  PositionEmbedding,
  SegmentEmbedding,
  EncoderLinear,
  LayerNormParam,
  ClassificationHead,
  Bias,
};

inline constexpr ComponentTag kAllComponentTags[] = {
    ComponentTag::TokenEmbedding, ComponentTag::PositionEmbedding, ComponentTag::SegmentEmbedding,
    ComponentTag::EncoderLinear,  ComponentTag::LayerNormParam,    ComponentTag::ClassificationHead,
    ComponentTag::Bias,
};

std::string_view to_string(ComponentTag tag);
ComponentTag component_tag_from_string(std::string_view name);

/// Shape of a transformer-encoder classifier.
struct ArchitectureSpec {
  std::size_t vocab_size = 64;
  std::size_t hidden_dim = 32;
  std::size_t num_layers = 2;
  std::size_t num_heads = 2;
  std::size_t ffn_dim = 64;
  std::size_t max_positions = 16;
  std::size_t num_segments = 2;
  std::size_t num_labels = 2;

  /// Throws ConfigError when a count is zero or hidden_dim is not divisible by num_heads.
  void validate() const;

  bool operator==(const ArchitectureSpec&) const = default;
};

namespace presets {
ArchitectureSpec tiny();
ArchitectureSpec bert_base();
ArchitectureSpec roberta_large();
}  // namespace presets

/// Looks up "tiny", "bert-base" or "roberta-large".
ArchitectureSpec architecture_preset(std::string_view name);
std::vector<std::string> architecture_preset_names();

struct ParameterInfo {
  std::string name;
  ComponentTag tag;
  /// Encoder layer index, or -1 outside the encoder stack.
  int layer = -1;
  Shape shape;

  std::size_t numel() const { return shape_numel(shape); }
};

/// Parameter descriptors in model order. Computed without allocating weights,
/// so accounting works for full-size presets.
std::vector<ParameterInfo> parameter_layout(const ArchitectureSpec& spec);

/// Indices into the layout whose tag is in `tags`.
std::vector<std::size_t> parameters_by_component(const std::vector<ParameterInfo>& layout,
                                                 const std::set<ComponentTag>& tags);

enum class Activation { Gelu, Relu };

std::string_view to_string(Activation activation);
Activation activation_from_string(std::string_view name);

struct ForwardConfig {
  Activation activation = Activation::Gelu;
  double dropout = 0.1;

  bool operator==(const ForwardConfig&) const = default;
};

template <typename T>
struct Parameter {
  ParameterInfo info;
  Tensor<T> value;
};

/// Gradient buffers aligned with Model::parameters().
template <typename T>
using GradientSet = std::vector<Tensor<T>>;

/// Token ids for a batch of equal-length sequences, flattened row-major.
struct TokenBatch {
  std::size_t batch_size = 0;
  std::size_t seq_len = 0;
  std::vector<std::int32_t> tokens;
  std::vector<std::int32_t> segments;
};

/// BERT-style post-norm encoder with a linear head on the first token.
template <typename T>
class Model {
 public:
  Model(ArchitectureSpec spec, ForwardConfig config);

  const ArchitectureSpec& spec() const { return spec_; }
  const ForwardConfig& config() const { return config_; }
  ForwardConfig& config() { return config_; }

  std::vector<Parameter<T>>& parameters() { return params_; }
  const std::vector<Parameter<T>>& parameters() const { return params_; }
  std::vector<ParameterInfo> layout() const;

  Parameter<T>& parameter(std::string_view name);
  const Parameter<T>& parameter(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;

  std::vector<std::size_t> parameters_by_component(const std::set<ComponentTag>& tags) const;

  std::size_t num_parameters() const;
  GradientSet<T> zero_gradients() const;

  template <typename U>
  Model<U> cast() const {
    Model<U> out(spec_, config_);
    for (std::size_t i = 0; i < params_.size(); ++i) out.parameters()[i].value = params_[i].value.template cast<U>();
    return out;
  }

  bool same_weights(const Model& other) const;

 private:
  ArchitectureSpec spec_;
  ForwardConfig config_;
  std::vector<Parameter<T>> params_;
};

extern template class Model<float>;
extern template class Model<double>;

/// Truncated-normal (sigma 0.02, cut at 2 sigma) weights, zero biases, unit layer-norm scale.
template <typename T>
Model<T> build_model(const ArchitectureSpec& spec, std::uint64_t seed, ForwardConfig config = {});

struct ForwardOptions {
  bool training = false;
  /// Dropout masks are a pure function of this seed and the dropout site.
  std::uint64_t dropout_seed = 0;
};

/// Records the forward pass on `graph` and returns (batch, num_labels) logits.
/// With `grads` set, parameter gradients are accumulated there on backward;
/// otherwise parameters enter the graph as constants.
template <typename T>
Var<T> forward(Graph<T>& graph, const Model<T>& model, const TokenBatch& batch, const ForwardOptions& options,
               GradientSet<T>* grads = nullptr);

/// Eval-mode logits without gradient tracking.
template <typename T>
Tensor<T> predict_logits(const Model<T>& model, const TokenBatch& batch);

}  // namespace sparseforge
