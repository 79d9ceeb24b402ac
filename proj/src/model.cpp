// SPDX-License-Identifier: Apache-2.0
#include "sparseforge/model.hpp"

#include <algorithm>
#include <array>
#include <random>

#include <fmt/format.h>

#include "sparseforge/errors.hpp"

namespace sparseforge {

namespace {

constexpr std::array<std::pair<ComponentTag, std::string_view>, 7> kTagNames{{
    {ComponentTag::TokenEmbedding, "token_embedding"},
    {ComponentTag::PositionEmbedding, "position_embedding"},
    {ComponentTag::SegmentEmbedding, "segment_embedding"},
    {ComponentTag::EncoderLinear, "encoder_linear"},
    {ComponentTag::LayerNormParam, "layer_norm"},
    {ComponentTag::ClassificationHead, "classification_head"},
    {ComponentTag::Bias, "bias"},
}};

constexpr double kInitStddev = 0.02;

// Per-layer parameter indices, in layout order.
struct LayerSlots {
  std::size_t query_w, query_b, key_w, key_b, value_w, value_b, output_w, output_b;
  std::size_t attention_gamma, attention_beta;
  std::size_t up_w, up_b, down_w, down_b;
  std::size_t ffn_gamma, ffn_beta;
};

constexpr std::size_t kEmbeddingSlots = 5;
constexpr std::size_t kSlotsPerLayer = 16;

LayerSlots layer_slots(std::size_t layer) {
  const std::size_t b = kEmbeddingSlots + layer * kSlotsPerLayer;
  return LayerSlots{b,      b + 1,  b + 2,  b + 3,  b + 4,  b + 5,  b + 6,  b + 7,
                    b + 8,  b + 9,  b + 10, b + 11, b + 12, b + 13, b + 14, b + 15};
}

}  // namespace

std::string_view to_string(ComponentTag tag) {
  for (const auto& [t, name] : kTagNames) {
    if (t == tag) return name;
  }
  return "unknown";
}

ComponentTag component_tag_from_string(std::string_view name) {
  for (const auto& [t, n] : kTagNames) {
    if (n == name) return t;
  }
  throw ConfigError(fmt::format("unknown component tag '{}'", name));
}

std::string_view to_string(Activation activation) { return activation == Activation::Gelu ? "gelu" : "relu"; }

Activation activation_from_string(std::string_view name) {
  if (name == "gelu") return Activation::Gelu;
  if (name == "relu") return Activation::Relu;
  throw ConfigError(fmt::format("unknown activation '{}'", name));
}

void ArchitectureSpec::validate() const {
  const std::array<std::pair<std::string_view, std::size_t>, 8> counts{{
      {"vocab_size", vocab_size},
      {"hidden_dim", hidden_dim},
      {"num_layers", num_layers},
      {"num_heads", num_heads},
      {"ffn_dim", ffn_dim},
      {"max_positions", max_positions},
      {"num_segments", num_segments},
      {"num_labels", num_labels},
  }};
  for (const auto& [name, value] : counts) {
    if (value < 1) throw ConfigError(fmt::format("architecture: {} must be >= 1", name));
  }
  if (hidden_dim % num_heads != 0) {
    throw ConfigError(fmt::format("architecture: hidden_dim {} not divisible by num_heads {}", hidden_dim, num_heads));
  }
}

namespace presets {

ArchitectureSpec tiny() { return ArchitectureSpec{64, 32, 2, 2, 64, 16, 2, 2}; }

ArchitectureSpec bert_base() { return ArchitectureSpec{30522, 768, 12, 12, 3072, 512, 2, 2}; }

// CSQA scores each answer candidate with a single logit.
ArchitectureSpec roberta_large() { return ArchitectureSpec{50265, 1024, 24, 16, 4096, 514, 1, 1}; }

}  // namespace presets

ArchitectureSpec architecture_preset(std::string_view name) {
  if (name == "tiny") return presets::tiny();
  if (name == "bert-base") return presets::bert_base();
  if (name == "roberta-large") return presets::roberta_large();
  throw ConfigError(fmt::format("unknown architecture preset '{}'", name));
}

std::vector<std::string> architecture_preset_names() { return {"tiny", "bert-base", "roberta-large"}; }

std::vector<ParameterInfo> parameter_layout(const ArchitectureSpec& spec) {
  spec.validate();
  const std::size_t h = spec.hidden_dim;
  const std::size_t f = spec.ffn_dim;
  std::vector<ParameterInfo> layout;
  layout.reserve(kEmbeddingSlots + spec.num_layers * kSlotsPerLayer + 2);
  layout.push_back({"embeddings.token", ComponentTag::TokenEmbedding, -1, {spec.vocab_size, h}});
  layout.push_back({"embeddings.position", ComponentTag::PositionEmbedding, -1, {spec.max_positions, h}});
  layout.push_back({"embeddings.segment", ComponentTag::SegmentEmbedding, -1, {spec.num_segments, h}});
  layout.push_back({"embeddings.norm.gamma", ComponentTag::LayerNormParam, -1, {h}});
  layout.push_back({"embeddings.norm.beta", ComponentTag::LayerNormParam, -1, {h}});
  for (std::size_t l = 0; l < spec.num_layers; ++l) {
    const int layer = static_cast<int>(l);
    const std::string prefix = fmt::format("encoder.{}.", l);
    for (const char* role : {"query", "key", "value", "output"}) {
      layout.push_back({prefix + "attention." + role + ".weight", ComponentTag::EncoderLinear, layer, {h, h}});
      layout.push_back({prefix + "attention." + role + ".bias", ComponentTag::Bias, layer, {h}});
    }
    layout.push_back({prefix + "attention_norm.gamma", ComponentTag::LayerNormParam, layer, {h}});
    layout.push_back({prefix + "attention_norm.beta", ComponentTag::LayerNormParam, layer, {h}});
    layout.push_back({prefix + "ffn.up.weight", ComponentTag::EncoderLinear, layer, {h, f}});
    layout.push_back({prefix + "ffn.up.bias", ComponentTag::Bias, layer, {f}});
    layout.push_back({prefix + "ffn.down.weight", ComponentTag::EncoderLinear, layer, {f, h}});
    layout.push_back({prefix + "ffn.down.bias", ComponentTag::Bias, layer, {h}});
    layout.push_back({prefix + "ffn_norm.gamma", ComponentTag::LayerNormParam, layer, {h}});
    layout.push_back({prefix + "ffn_norm.beta", ComponentTag::LayerNormParam, layer, {h}});
  }
  layout.push_back({"head.weight", ComponentTag::ClassificationHead, -1, {h, spec.num_labels}});
  layout.push_back({"head.bias", ComponentTag::Bias, -1, {spec.num_labels}});
  return layout;
}

std::vector<std::size_t> parameters_by_component(const std::vector<ParameterInfo>& layout,
                                                 const std::set<ComponentTag>& tags) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (tags.contains(layout[i].tag)) out.push_back(i);
  }
  return out;
}

// ---------------------------------------------------------------------------

template <typename T>
Model<T>::Model(ArchitectureSpec spec, ForwardConfig config) : spec_(spec), config_(config) {
  for (auto& info : parameter_layout(spec_)) {
    Tensor<T> value(info.shape);
    params_.push_back(Parameter<T>{std::move(info), std::move(value)});
  }
}

template <typename T>
std::vector<ParameterInfo> Model<T>::layout() const {
  std::vector<ParameterInfo> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.info);
  return out;
}

template <typename T>
std::size_t Model<T>::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].info.name == name) return i;
  }
  throw ContractError(fmt::format("model has no parameter '{}'", name));
}

template <typename T>
Parameter<T>& Model<T>::parameter(std::string_view name) {
  return params_[index_of(name)];
}

template <typename T>
const Parameter<T>& Model<T>::parameter(std::string_view name) const {
  return params_[index_of(name)];
}

template <typename T>
std::vector<std::size_t> Model<T>::parameters_by_component(const std::set<ComponentTag>& tags) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (tags.contains(params_[i].info.tag)) out.push_back(i);
  }
  return out;
}

template <typename T>
std::size_t Model<T>::num_parameters() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

template <typename T>
GradientSet<T> Model<T>::zero_gradients() const {
  GradientSet<T> grads;
  grads.reserve(params_.size());
  for (const auto& p : params_) grads.emplace_back(p.value.shape());
  return grads;
}

template <typename T>
bool Model<T>::same_weights(const Model& other) const {
  if (!(spec_ == other.spec_) || params_.size() != other.params_.size()) return false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!(params_[i].value == other.params_[i].value)) return false;
  }
  return true;
}

template class Model<float>;
template class Model<double>;

template <typename T>
Model<T> build_model(const ArchitectureSpec& spec, std::uint64_t seed, ForwardConfig config) {
  spec.validate();
  Model<T> model(spec, config);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, kInitStddev);
  for (auto& p : model.parameters()) {
    switch (p.info.tag) {
      case ComponentTag::Bias:
        break;
      case ComponentTag::LayerNormParam:
        if (p.info.name.ends_with("gamma")) p.value.fill(T{1});
        break;
      default:
        for (T& w : p.value.data()) {
          double draw = normal(rng);
          while (std::abs(draw) > 2.0 * kInitStddev) draw = normal(rng);
          w = static_cast<T>(draw);
        }
        break;
    }
  }
  return model;
}

template <typename T>
Var<T> forward(Graph<T>& graph, const Model<T>& model, const TokenBatch& batch, const ForwardOptions& options,
               GradientSet<T>* grads) {
  const ArchitectureSpec& spec = model.spec();
  const std::size_t rows = batch.batch_size * batch.seq_len;
  if (batch.tokens.size() != rows) {
    throw DimensionError(fmt::format("forward: {} token ids for batch {} x seq {}", batch.tokens.size(),
                                     batch.batch_size, batch.seq_len));
  }
  if (!batch.segments.empty() && batch.segments.size() != rows) {
    throw DimensionError(fmt::format("forward: {} segment ids for {} tokens", batch.segments.size(), rows));
  }
  if (batch.seq_len == 0 || batch.seq_len > spec.max_positions) {
    throw IndexError(fmt::format("forward: sequence length {} outside [1, {}]", batch.seq_len, spec.max_positions));
  }
  if (grads != nullptr && grads->size() != model.parameters().size()) {
    throw ContractError("forward: gradient set does not match model parameters");
  }

  const auto& params = model.parameters();
  std::vector<std::optional<Var<T>>> bound(params.size());
  auto param = [&](std::size_t i) -> Var<T> {
    if (!bound[i]) bound[i] = graph.parameter(params[i].value, grads != nullptr ? &(*grads)[i] : nullptr);
    return *bound[i];
  };

  const double rate = options.training ? model.config().dropout : 0.0;
  std::uint64_t dropout_site = 0;
  auto maybe_dropout = [&](Var<T> x) {
    ++dropout_site;
    if (rate <= 0.0) return x;
    return dropout(x, static_cast<T>(rate), mix_seed(options.dropout_seed, dropout_site));
  };

  std::vector<std::int32_t> positions(rows);
  for (std::size_t r = 0; r < rows; ++r) positions[r] = static_cast<std::int32_t>(r % batch.seq_len);
  const std::vector<std::int32_t> zero_segments(batch.segments.empty() ? rows : 0, 0);
  const std::vector<std::int32_t>& segments = batch.segments.empty() ? zero_segments : batch.segments;

  Var<T> x = add(add(gather_rows(param(0), std::span<const std::int32_t>(batch.tokens)),
                     gather_rows(param(1), std::span<const std::int32_t>(positions))),
                 gather_rows(param(2), std::span<const std::int32_t>(segments)));
  x = maybe_dropout(layer_norm(x, param(3), param(4)));

  auto linear = [&](Var<T> in, std::size_t w, std::size_t b) { return add_bias(matmul(in, param(w)), param(b)); };

  for (std::size_t l = 0; l < spec.num_layers; ++l) {
    const LayerSlots s = layer_slots(l);
    const Var<T> q = linear(x, s.query_w, s.query_b);
    const Var<T> k = linear(x, s.key_w, s.key_b);
    const Var<T> v = linear(x, s.value_w, s.value_b);
    const Var<T> context = multi_head_attention(q, k, v, batch.batch_size, batch.seq_len, spec.num_heads);
    const Var<T> attended = maybe_dropout(linear(context, s.output_w, s.output_b));
    x = layer_norm(add(x, attended), param(s.attention_gamma), param(s.attention_beta));

    Var<T> hidden = linear(x, s.up_w, s.up_b);
    hidden = model.config().activation == Activation::Gelu ? gelu(hidden) : relu(hidden);
    const Var<T> projected = maybe_dropout(linear(hidden, s.down_w, s.down_b));
    x = layer_norm(add(x, projected), param(s.ffn_gamma), param(s.ffn_beta));
  }

  std::vector<std::int32_t> first_tokens(batch.batch_size);
  for (std::size_t b = 0; b < batch.batch_size; ++b) first_tokens[b] = static_cast<std::int32_t>(b * batch.seq_len);
  const Var<T> pooled = gather_rows(x, std::span<const std::int32_t>(first_tokens));
  const std::size_t head = params.size() - 2;
  return linear(pooled, head, head + 1);
}

template <typename T>
Tensor<T> predict_logits(const Model<T>& model, const TokenBatch& batch) {
  Graph<T> graph;
  return forward(graph, model, batch, ForwardOptions{}).value();
}

template Model<float> build_model(const ArchitectureSpec&, std::uint64_t, ForwardConfig);
template Model<double> build_model(const ArchitectureSpec&, std::uint64_t, ForwardConfig);
template Var<float> forward(Graph<float>&, const Model<float>&, const TokenBatch&, const ForwardOptions&,
                            GradientSet<float>*);
template Var<double> forward(Graph<double>&, const Model<double>&, const TokenBatch&, const ForwardOptions&,
                             GradientSet<double>*);
template Tensor<float> predict_logits(const Model<float>&, const TokenBatch&);
template Tensor<double> predict_logits(const Model<double>&, const TokenBatch&);

}  // namespace sparseforge
