// SPDX-License-Identifier: Apache-2.0
#include "sparseforge/autograd.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>

#include <fmt/format.h>

#include "kernels.hpp"
#include "sparseforge/errors.hpp"

namespace sparseforge {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finaliser over a combined word
  std::uint64_t z = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double counter_uniform(std::uint64_t seed, std::uint64_t counter) {
  return static_cast<double>(mix_seed(seed, counter) >> 11) * 0x1.0p-53;
}

// ---------------------------------------------------------------------------
// Graph

template <typename T>
Var<T> Graph<T>::constant(Tensor<T> value) {
  nodes_.push_back(Node{std::move(value), std::nullopt, false, {}, nullptr});
  return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
Var<T> Graph<T>::variable(Tensor<T> value) {
  nodes_.push_back(Node{std::move(value), std::nullopt, true, {}, nullptr});
  return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
Var<T> Graph<T>::parameter(const Tensor<T>& value, Tensor<T>* grad_sink) {
  if (grad_sink != nullptr && grad_sink->shape() != value.shape()) {
    throw DimensionError(fmt::format("gradient sink {} does not match parameter {}", shape_string(grad_sink->shape()),
                                     shape_string(value.shape())));
  }
  nodes_.push_back(Node{value, std::nullopt, grad_sink != nullptr, {}, grad_sink});
  return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
Var<T> Graph<T>::record(Tensor<T> value, std::span<const std::size_t> inputs, BackwardFn backward) {
  const bool needs_grad = std::any_of(inputs.begin(), inputs.end(), [&](std::size_t id) { return requires_grad(id); });
  nodes_.push_back(Node{std::move(value), std::nullopt, needs_grad, needs_grad ? std::move(backward) : BackwardFn{},
                        nullptr});
  return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
Tensor<T>& Graph<T>::grad_buffer(std::size_t id) {
  Node& node = nodes_[id];
  if (!node.grad) node.grad.emplace(node.value.shape());
  return *node.grad;
}

template <typename T>
Tensor<T> Graph<T>::grad(Var<T> var) const {
  const Node& node = nodes_[var.id];
  if (node.grad) return *node.grad;
  return Tensor<T>(node.value.shape());
}

template <typename T>
void Graph<T>::backward(Var<T> loss) {
  if (loss.graph != this) throw ContractError("backward: loss belongs to a different graph");
  if (nodes_[loss.id].value.numel() != 1) {
    throw ContractError(fmt::format("backward: loss must be a scalar, got shape {}",
                                    shape_string(nodes_[loss.id].value.shape())));
  }
  if (!nodes_[loss.id].requires_grad) return;
  grad_buffer(loss.id).fill(T{1});
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.grad) continue;
    if (node.backward) node.backward(*this, i, *node.grad);
    if (node.grad_sink != nullptr) {
      auto sink = node.grad_sink->data();
      auto g = node.grad->data();
      for (std::size_t j = 0; j < sink.size(); ++j) sink[j] += g[j];
    }
  }
}

template class Graph<float>;
template class Graph<double>;

// ---------------------------------------------------------------------------
// Ops

namespace {

template <typename T>
void require_same_shape(const char* op, Var<T> a, Var<T> b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(fmt::format("{}: shape mismatch {} vs {}", op, shape_string(a.shape()), shape_string(b.shape())));
  }
}

template <typename T>
void require_rank(const char* op, Var<T> a, std::size_t rank) {
  if (a.value().rank() != rank) {
    throw DimensionError(fmt::format("{}: expected rank {}, got shape {}", op, rank, shape_string(a.shape())));
  }
}

template <typename T>
void accumulate(Graph<T>& g, std::size_t id, const Tensor<T>& delta) {
  if (!g.requires_grad(id)) return;
  auto dst = g.grad_buffer(id).data();
  auto src = delta.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <typename T>
T clamp_probability(T p) {
  return std::max(p, static_cast<T>(kProbabilityEpsilon));
}

}  // namespace

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError(
        fmt::format("matmul: inner dimensions differ, {} x {}", shape_string(a.shape()), shape_string(b.shape())));
  }
  Tensor<T> out(Shape{m, n});
  kernels::gemm_nn(m, k, n, a.value().data().data(), b.value().data().data(), out.data().data());
  const std::array inputs{a.id, b.id};
  return a.graph->record(std::move(out), inputs, [=](Graph<T>& g, std::size_t, const Tensor<T>& dc) {
    if (g.requires_grad(a.id)) {
      kernels::gemm_nt(m, n, k, dc.data().data(), g.value(b.id).data().data(), g.grad_buffer(a.id).data().data());
    }
    if (g.requires_grad(b.id)) {
      kernels::gemm_tn(k, m, n, g.value(a.id).data().data(), dc.data().data(), g.grad_buffer(b.id).data().data());
    }
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_shape("add", a, b);
  Tensor<T> out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  const std::array inputs{a.id, b.id};
  return a.graph->record(std::move(out), inputs, [=](Graph<T>& g, std::size_t, const Tensor<T>& d) {
    accumulate(g, a.id, d);
    accumulate(g, b.id, d);
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same_shape("sub", a, b);
  Tensor<T> out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  const std::array inputs{a.id, b.id};
  return a.graph->record(std::move(out), inputs, [=](Graph<T>& g, std::size_t, const Tensor<T>& d) {
    accumulate(g, a.id, d);
    if (g.requires_grad(b.id)) {
      auto gb = g.grad_buffer(b.id).data();
      auto dv = d.data();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= dv[i];
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_shape("mul", a, b);
  Tensor<T> out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  const std::array inputs{a.id, b.id};
  return a.graph->record(std::move(out), inputs, [=](Graph<T>& g, std::size_t, const Tensor<T>& d) {
    auto dv = d.data();
    if (g.requires_grad(a.id)) {
      auto ga = g.grad_buffer(a.id).data();
      auto bv2 = g.value(b.id).data();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += dv[i] * bv2[i];
    }
    if (g.requires_grad(b.id)) {
      auto gb = g.grad_buffer(b.id).data();
      auto av = g.value(a.id).data();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += dv[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
  Tensor<T> out = a.value();
  for (T& x : out.data()) x *= factor;
  const std::array inputs{a.id};
  return a.graph->record(std::move(out), inputs, [=](Graph<T>& g, std::size_t, const Tensor<T>& d) {
    auto ga = g.grad_buffer(a.id).data();
    auto dv = d.data();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += dv[i] * factor;
  });
}

template <typename T>
Var<T> add_bias(Var<T> x, Var<T> bias) {
  require_rank("add_bias", x, 2);
  require_rank("add_bias", bias, 1);
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  if (bias.shape()[0] != cols) {
    throw DimensionError(
        fmt::format("add_bias: bias {} does not match rows {}", shape_string(bias.shape()), shape_string(x.shape())));
  }
  Tensor<T> out = x.value();
  auto o = out.data();
  auto bv = bias.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) o[r * cols + c] += bv[c];
  }
  const std::array inputs{x.id, bias.id};
  return x.graph->record(std::move(out), inputs, [=](Graph<T>& g, std::size_t, const Tensor<T>& d) {
    accumulate(g, x.id, d);
    if (g.requires_grad(bias.id)) {
      auto gb = g.grad_buffer(bias.id).data();
      auto dv = d.data();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) gb[c] += dv[r * cols + c];
      }
    }
  });
}

template <typename T>
Var<T> relu(Var<T> x) {
  Tensor<T> out = x.value();
  for (T& v : out.data()) v = v > T{0} ? v : T{0};
  const std::array inputs{x.id};
  return x.graph->record(std::move(out), inputs, [=](Graph<T>& g, std::size_t, const Tensor<T>& d) {
    auto gx = g.grad_buffer(x.id).data();
    auto xv = g.value(x.id).data();
    auto dv = d.data();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (xv[i] > T{0}) gx[i] += dv[i];
    }
  });
}

template <typename T>
Var<T> gelu(Var<T> x) {
  constexpr T inv_sqrt2 = T(0.70710678118654752440);
  constexpr T inv_sqrt_2pi = T(0.39894228040143267794);
  Tensor<T> out = x.value();
  for (T& v : out.data()) v = T(0.5) * v * (T{1} + std::erf(v * inv_sqrt2));
  const std::array inputs{x.id};
  return x.graph->record(std::move(out), inputs, [=](Graph<T>& g, std::size_t, const Tensor<T>& d) {
    auto gx = g.grad_buffer(x.id).data();
    auto xv = g.value(x.id).data();
    auto dv = d.data();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const T v = xv[i];
      const T cdf = T(0.5) * (T{1} + std::erf(v * inv_sqrt2));
      const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
      gx[i] += dv[i] * (cdf + v * pdf);
    }
  });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps) {
  require_rank("layer_norm", x, 2);
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  if (gamma.shape() != Shape{cols} || beta.shape() != Shape{cols}) {
    throw DimensionError(fmt::format("layer_norm: affine parameters must have shape ({})", cols));
  }
  auto normalized = std::make_shared<std::vector<T>>(rows * cols);
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  Tensor<T> out(Shape{rows, cols});
  auto xv = x.value().data();
  auto gv = gamma.value().data();
  auto bv = beta.value().data();
  auto o = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * cols;
    T mu{0};
    for (std::size_t c = 0; c < cols; ++c) mu += row[c];
    mu /= static_cast<T>(cols);
    T var{0};
    for (std::size_t c = 0; c < cols; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<T>(cols);
    const T rstd = T{1} / std::sqrt(var + eps);
    (*inv_std)[r] = rstd;
    for (std::size_t c = 0; c < cols; ++c) {
      const T xhat = (row[c] - mu) * rstd;
      (*normalized)[r * cols + c] = xhat;
      o[r * cols + c] = xhat * gv[c] + bv[c];
    }
  }
  const std::array inputs{x.id, gamma.id, beta.id};
  return x.graph->record(std::move(out), inputs, [=](Graph<T>& g, std::size_t, const Tensor<T>& d) {
    auto dv = d.data();
    const auto& xhat = *normalized;
    if (g.requires_grad(gamma.id) || g.requires_grad(beta.id)) {
      Tensor<T> dgamma(Shape{cols}), dbeta(Shape{cols});
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
          dgamma[c] += dv[r * cols + c] * xhat[r * cols + c];
          dbeta[c] += dv[r * cols + c];
        }
      }
      accumulate(g, gamma.id, dgamma);
      accumulate(g, beta.id, dbeta);
    }
    if (g.requires_grad(x.id)) {
      auto gx = g.grad_buffer(x.id).data();
      auto gv2 = g.value(gamma.id).data();
      std::vector<T> dxhat(cols);
      for (std::size_t r = 0; r < rows; ++r) {
        T mean_d{0}, mean_dx{0};
        for (std::size_t c = 0; c < cols; ++c) {
          dxhat[c] = dv[r * cols + c] * gv2[c];
          mean_d += dxhat[c];
          mean_dx += dxhat[c] * xhat[r * cols + c];
        }
        mean_d /= static_cast<T>(cols);
        mean_dx /= static_cast<T>(cols);
        const T rstd = (*inv_std)[r];
        for (std::size_t c = 0; c < cols; ++c) {
          gx[r * cols + c] += rstd * (dxhat[c] - mean_d - xhat[r * cols + c] * mean_dx);
        }
      }
    }
  });
}

template <typename T>
Var<T> gather_rows(Var<T> table, std::span<const std::int32_t> ids) {
  require_rank("gather_rows", table, 2);
  const std::size_t vocab = table.shape()[0], cols = table.shape()[1];
  for (std::int32_t id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw IndexError(fmt::format("gather_rows: id {} outside [0, {})", id, vocab));
    }
  }
  Tensor<T> out(Shape{ids.size(), cols});
  auto tv = table.value().data();
  auto o = out.data();
  for (std::size_t r = 0; r < ids.size(); ++r) {
    std::copy_n(tv.data() + static_cast<std::size_t>(ids[r]) * cols, cols, o.data() + r * cols);
  }
  auto index = std::make_shared<std::vector<std::int32_t>>(ids.begin(), ids.end());
  const std::array inputs{table.id};
  return table.graph->record(std::move(out), inputs, [=](Graph<T>& g, std::size_t, const Tensor<T>& d) {
    auto gt = g.grad_buffer(table.id).data();
    auto dv = d.data();
    for (std::size_t r = 0; r < index->size(); ++r) {
      T* dst = gt.data() + static_cast<std::size_t>((*index)[r]) * cols;
      const T* src = dv.data() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
    }
  });
}

template <typename T>
Var<T> dropout(Var<T> x, T rate, std::uint64_t seed) {
  if (rate < T{0} || rate >= T{1}) throw ContractError(fmt::format("dropout: rate {} outside [0, 1)", rate));
  if (rate == T{0}) return x;
  const T keep_scale = T{1} / (T{1} - rate);
  auto multiplier = std::make_shared<std::vector<T>>(x.value().numel());
  Tensor<T> out = x.value();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    const T m = counter_uniform(seed, i) < static_cast<double>(rate) ? T{0} : keep_scale;
    (*multiplier)[i] = m;
    o[i] *= m;
  }
  const std::array inputs{x.id};
  return x.graph->record(std::move(out), inputs, [=](Graph<T>& g, std::size_t, const Tensor<T>& d) {
    auto gx = g.grad_buffer(x.id).data();
    auto dv = d.data();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += dv[i] * (*multiplier)[i];
  });
}

template <typename T>
Var<T> multi_head_attention(Var<T> q, Var<T> k, Var<T> v, std::size_t batch, std::size_t seq, std::size_t heads) {
  require_same_shape("attention", q, k);
  require_same_shape("attention", q, v);
  require_rank("attention", q, 2);
  const std::size_t width = q.shape()[1];
  if (q.shape()[0] != batch * seq || heads == 0 || width % heads != 0) {
    throw DimensionError(fmt::format("attention: shape {} incompatible with batch {}, seq {}, heads {}",
                                     shape_string(q.shape()), batch, seq, heads));
  }
  const std::size_t head_dim = width / heads;
  const T inv_sqrt_d = T{1} / std::sqrt(static_cast<T>(head_dim));
  auto probs = std::make_shared<std::vector<T>>(batch * heads * seq * seq);
  Tensor<T> out(Shape{batch * seq, width});
  auto qv = q.value().data();
  auto kv = k.value().data();
  auto vv = v.value().data();
  auto o = out.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      T* p = probs->data() + (b * heads + h) * seq * seq;
      const std::size_t col0 = h * head_dim;
      for (std::size_t i = 0; i < seq; ++i) {
        const T* qi = qv.data() + (b * seq + i) * width + col0;
        T row_max = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < seq; ++j) {
          const T* kj = kv.data() + (b * seq + j) * width + col0;
          T s{0};
          for (std::size_t t = 0; t < head_dim; ++t) s += qi[t] * kj[t];
          s *= inv_sqrt_d;
          p[i * seq + j] = s;
          row_max = std::max(row_max, s);
        }
        T denom{0};
        for (std::size_t j = 0; j < seq; ++j) {
          p[i * seq + j] = std::exp(p[i * seq + j] - row_max);
          denom += p[i * seq + j];
        }
        T* oi = o.data() + (b * seq + i) * width + col0;
        for (std::size_t j = 0; j < seq; ++j) {
          p[i * seq + j] /= denom;
          const T* vj = vv.data() + (b * seq + j) * width + col0;
          for (std::size_t t = 0; t < head_dim; ++t) oi[t] += p[i * seq + j] * vj[t];
        }
      }
    }
  }
  const std::array inputs{q.id, k.id, v.id};
  return q.graph->record(std::move(out), inputs, [=](Graph<T>& g, std::size_t, const Tensor<T>& d) {
    auto qv2 = g.value(q.id).data();
    auto kv2 = g.value(k.id).data();
    auto vv2 = g.value(v.id).data();
    auto dv = d.data();
    T* gq = g.requires_grad(q.id) ? g.grad_buffer(q.id).data().data() : nullptr;
    T* gk = g.requires_grad(k.id) ? g.grad_buffer(k.id).data().data() : nullptr;
    T* gv = g.requires_grad(v.id) ? g.grad_buffer(v.id).data().data() : nullptr;
    std::vector<T> dscore(seq);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t h = 0; h < heads; ++h) {
        const T* p = probs->data() + (b * heads + h) * seq * seq;
        const std::size_t col0 = h * head_dim;
        for (std::size_t i = 0; i < seq; ++i) {
          const T* doi = dv.data() + (b * seq + i) * width + col0;
          T weighted{0};
          for (std::size_t j = 0; j < seq; ++j) {
            const T* vj = vv2.data() + (b * seq + j) * width + col0;
            T dp{0};
            for (std::size_t t = 0; t < head_dim; ++t) dp += doi[t] * vj[t];
            dscore[j] = dp;
            weighted += dp * p[i * seq + j];
            if (gv != nullptr) {
              T* gvj = gv + (b * seq + j) * width + col0;
              for (std::size_t t = 0; t < head_dim; ++t) gvj[t] += p[i * seq + j] * doi[t];
            }
          }
          const T* qi = qv2.data() + (b * seq + i) * width + col0;
          for (std::size_t j = 0; j < seq; ++j) {
            const T ds = p[i * seq + j] * (dscore[j] - weighted) * inv_sqrt_d;
            const T* kj = kv2.data() + (b * seq + j) * width + col0;
            if (gq != nullptr) {
              T* gqi = gq + (b * seq + i) * width + col0;
              for (std::size_t t = 0; t < head_dim; ++t) gqi[t] += ds * kj[t];
            }
            if (gk != nullptr) {
              T* gkj = gk + (b * seq + j) * width + col0;
              for (std::size_t t = 0; t < head_dim; ++t) gkj[t] += ds * qi[t];
            }
          }
        }
      }
    }
  });
}

template <typename T>
Var<T> softmax(Var<T> x, std::size_t axis) {
  const Shape& shape = x.shape();
  if (axis >= shape.size()) {
    throw DimensionError(fmt::format("softmax: axis {} invalid for shape {}", axis, shape_string(shape)));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= shape[a];
  for (std::size_t a = axis + 1; a < shape.size(); ++a) inner *= shape[a];
  const std::size_t n = shape[axis];
  Tensor<T> out = x.value();
  auto o = out.data();
  for (std::size_t a = 0; a < outer; ++a) {
    for (std::size_t c = 0; c < inner; ++c) {
      const std::size_t base = a * n * inner + c;
      T row_max = o[base];
      for (std::size_t i = 1; i < n; ++i) row_max = std::max(row_max, o[base + i * inner]);
      if (std::isnan(row_max)) row_max = T{0};
      T denom{0};
      for (std::size_t i = 0; i < n; ++i) {
        T& e = o[base + i * inner];
        e = std::exp(e - row_max);
        denom += e;
      }
      for (std::size_t i = 0; i < n; ++i) o[base + i * inner] /= denom;
    }
  }
  const std::array inputs{x.id};
  return x.graph->record(std::move(out), inputs, [=](Graph<T>& g, std::size_t self, const Tensor<T>& d) {
    auto y = g.value(self).data();
    auto dv = d.data();
    auto gx = g.grad_buffer(x.id).data();
    for (std::size_t a = 0; a < outer; ++a) {
      for (std::size_t c = 0; c < inner; ++c) {
        const std::size_t base = a * n * inner + c;
        T dot{0};
        for (std::size_t i = 0; i < n; ++i) dot += dv[base + i * inner] * y[base + i * inner];
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t idx = base + i * inner;
          gx[idx] += y[idx] * (dv[idx] - dot);
        }
      }
    }
  });
}

template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const std::int32_t> labels) {
  require_rank("cross_entropy", logits, 2);
  const std::size_t batch = logits.shape()[0], classes = logits.shape()[1];
  if (labels.size() != batch) {
    throw DimensionError(fmt::format("cross_entropy: {} labels for batch of {}", labels.size(), batch));
  }
  for (std::int32_t y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw IndexError(fmt::format("cross_entropy: label {} outside [0, {})", y, classes));
    }
  }
  auto probs = std::make_shared<std::vector<T>>(batch * classes);
  auto lv = logits.value().data();
  T total{0};
  for (std::size_t b = 0; b < batch; ++b) {
    const T* row = lv.data() + b * classes;
    const T row_max = *std::max_element(row, row + classes);
    T denom{0};
    for (std::size_t c = 0; c < classes; ++c) denom += std::exp(row[c] - row_max);
    const T log_denom = std::log(denom);
    for (std::size_t c = 0; c < classes; ++c) (*probs)[b * classes + c] = std::exp(row[c] - row_max - log_denom);
    total += log_denom + row_max - row[labels[b]];
  }
  auto targets = std::make_shared<std::vector<std::int32_t>>(labels.begin(), labels.end());
  const std::array inputs{logits.id};
  return logits.graph->record(
      Tensor<T>::scalar(total / static_cast<T>(batch)), inputs, [=](Graph<T>& g, std::size_t, const Tensor<T>& d) {
        auto gl = g.grad_buffer(logits.id).data();
        const T factor = d[0] / static_cast<T>(batch);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t c = 0; c < classes; ++c) {
            const T indicator = static_cast<std::size_t>((*targets)[b]) == c ? T{1} : T{0};
            gl[b * classes + c] += factor * ((*probs)[b * classes + c] - indicator);
          }
        }
      });
}

template <typename T>
Var<T> kl_divergence(Var<T> p, Var<T> q) {
  require_same_shape("kl_divergence", p, q);
  const std::size_t batch = p.value().rank() >= 2 ? p.shape()[0] : 1;
  auto pv = p.value().data();
  auto qv = q.value().data();
  T total{0};
  for (std::size_t i = 0; i < pv.size(); ++i) {
    if (pv[i] > T{0}) total += pv[i] * (std::log(clamp_probability(pv[i])) - std::log(clamp_probability(qv[i])));
  }
  const std::array inputs{p.id, q.id};
  return p.graph->record(
      Tensor<T>::scalar(total / static_cast<T>(batch)), inputs, [=](Graph<T>& g, std::size_t, const Tensor<T>& d) {
        const T factor = d[0] / static_cast<T>(batch);
        auto pv2 = g.value(p.id).data();
        auto qv2 = g.value(q.id).data();
        const T eps = static_cast<T>(kProbabilityEpsilon);
        if (g.requires_grad(p.id)) {
          auto gp = g.grad_buffer(p.id).data();
          for (std::size_t i = 0; i < gp.size(); ++i) {
            const T dlogp = pv2[i] >= eps ? std::log(pv2[i]) + T{1} : std::log(eps);
            gp[i] += factor * (dlogp - std::log(clamp_probability(qv2[i])));
          }
        }
        if (g.requires_grad(q.id)) {
          auto gq = g.grad_buffer(q.id).data();
          for (std::size_t i = 0; i < gq.size(); ++i) {
            if (qv2[i] >= eps) gq[i] -= factor * pv2[i] / qv2[i];
          }
        }
      });
}

template <typename T>
Var<T> sum(Var<T> x) {
  T total{0};
  for (T v : x.value().data()) total += v;
  const std::array inputs{x.id};
  return x.graph->record(Tensor<T>::scalar(total), inputs, [=](Graph<T>& g, std::size_t, const Tensor<T>& d) {
    for (T& v : g.grad_buffer(x.id).data()) v += d[0];
  });
}

template <typename T>
Var<T> mean(Var<T> x) {
  const std::size_t n = x.value().numel();
  if (n == 0) throw ContractError("mean of an empty tensor");
  return scale(sum(x), T{1} / static_cast<T>(n));
}

#define SPARSEFORGE_INSTANTIATE_OPS(T)                                                                     \
  template Var<T> matmul(Var<T>, Var<T>);                                                                  \
  template Var<T> add(Var<T>, Var<T>);                                                                     \
  template Var<T> sub(Var<T>, Var<T>);                                                                     \
  template Var<T> mul(Var<T>, Var<T>);                                                                     \
  template Var<T> scale(Var<T>, T);                                                                        \
  template Var<T> add_bias(Var<T>, Var<T>);                                                                \
  template Var<T> relu(Var<T>);                                                                            \
  template Var<T> gelu(Var<T>);                                                                            \
  template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, T);                                                   \
  template Var<T> gather_rows(Var<T>, std::span<const std::int32_t>);                                      \
  template Var<T> dropout(Var<T>, T, std::uint64_t);                                                       \
  template Var<T> multi_head_attention(Var<T>, Var<T>, Var<T>, std::size_t, std::size_t, std::size_t);     \
  template Var<T> softmax(Var<T>, std::size_t);                                                            \
  template Var<T> cross_entropy(Var<T>, std::span<const std::int32_t>);                                    \
  template Var<T> kl_divergence(Var<T>, Var<T>);                                                           \
  template Var<T> sum(Var<T>);                                                                             \
  template Var<T> mean(Var<T>);

SPARSEFORGE_INSTANTIATE_OPS(float)
SPARSEFORGE_INSTANTIATE_OPS(double)

#undef SPARSEFORGE_INSTANTIATE_OPS

}  // namespace sparseforge
