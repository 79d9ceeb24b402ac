// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "sparseforge/tensor.hpp"

namespace sparseforge {

template <typename T>
class Graph;

/// Handle to a node recorded on a Graph. Cheap to copy; valid while the graph lives.
template <typename T>
struct Var {
  Graph<T>* graph = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Tape for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the tape itself is a topological
/// order: walking it backwards visits every node once, after all its consumers.
/// A graph lives for one forward/backward pass and is then discarded.
template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph& graph, std::size_t self, const Tensor<T>& grad_out)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<T> constant(Tensor<T> value);
  Var<T> variable(Tensor<T> value);
  /// Leaf whose gradient is added into `*grad_sink` when backward() runs.
  Var<T> parameter(const Tensor<T>& value, Tensor<T>* grad_sink);

  /// Appends an op output. `backward` is dropped when no input requires a gradient.
  Var<T> record(Tensor<T> value, std::span<const std::size_t> inputs, BackwardFn backward);

  const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  /// Gradient accumulator of a node, zero-initialised on first use.
  Tensor<T>& grad_buffer(std::size_t id);
  /// Gradient of a leaf after backward(); zeros if nothing flowed into it.
  Tensor<T> grad(Var<T> var) const;

  void backward(Var<T> loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    std::optional<Tensor<T>> grad;
    bool requires_grad = false;
    BackwardFn backward;
    Tensor<T>* grad_sink = nullptr;
  };

  std::vector<Node> nodes_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return graph->value(id);
}

// ---------------------------------------------------------------------------
// Differentiable ops. Rank-2 tensors are (rows, cols) unless noted otherwise.

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b);
template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> sub(Var<T> a, Var<T> b);
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);
template <typename T>
Var<T> scale(Var<T> a, T factor);
/// x (rows, d) + bias (d), broadcast over rows.
template <typename T>
Var<T> add_bias(Var<T> x, Var<T> bias);
template <typename T>
Var<T> relu(Var<T> x);
/// Exact (erf) GELU.
template <typename T>
Var<T> gelu(Var<T> x);
/// Normalises each row of x (rows, d), then applies gamma (d) and beta (d).
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5));
/// Row lookup: out[i] = table[ids[i]]. Backward scatter-adds into the table.
template <typename T>
Var<T> gather_rows(Var<T> table, std::span<const std::int32_t> ids);
/// Inverted dropout. The keep mask is a pure function of `seed`.
template <typename T>
Var<T> dropout(Var<T> x, T rate, std::uint64_t seed);
/// Scaled dot-product attention over q, k, v of shape (batch * seq, heads * head_dim).
template <typename T>
Var<T> multi_head_attention(Var<T> q, Var<T> k, Var<T> v, std::size_t batch, std::size_t seq,
                            std::size_t heads);
/// Softmax along `axis` with max subtraction. NaN inputs propagate NaN.
template <typename T>
Var<T> softmax(Var<T> x, std::size_t axis);
/// Mean over the batch of -log softmax(logits)[label]. logits is (batch, classes).
template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const std::int32_t> labels);
/// Batch mean of sum_c p ln(p / q) for (batch, classes) probabilities; both clamped to [1e-12, 1].
template <typename T>
Var<T> kl_divergence(Var<T> p, Var<T> q);
template <typename T>
Var<T> sum(Var<T> x);
template <typename T>
Var<T> mean(Var<T> x);

/// Probability floor applied before taking logs.
inline constexpr double kProbabilityEpsilon = 1e-12;

/// Uniform [0, 1) draw from a counter-based hash; used for replayable dropout.
double counter_uniform(std::uint64_t seed, std::uint64_t counter);
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace sparseforge
