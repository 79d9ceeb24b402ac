// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "sparseforge/accounting.hpp"
#include "sparseforge/errors.hpp"
#include "sparseforge/optim.hpp"
#include "sparseforge/pruning.hpp"
#include "sparseforge/task.hpp"

using namespace sparseforge;

namespace {

// One scope entry per tensor size, with masks and scores keyed 0..n-1.
struct ToyScope {
  std::vector<ParameterInfo> layout;
  MaskSet masks;
  ScopePolicy policy;
};

ToyScope toy_scope(const std::vector<std::size_t>& sizes, Granularity granularity = Granularity::Global) {
  ToyScope s;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    s.layout.push_back(ParameterInfo{"w" + std::to_string(i), ComponentTag::EncoderLinear, 0, Shape{sizes[i]}});
  }
  s.policy.granularity = granularity;
  s.masks = MaskSet::dense(s.layout, s.policy);
  return s;
}

std::size_t brute_force_count(double target, std::size_t n) {
  return static_cast<std::size_t>(std::floor(target * static_cast<double>(n) + 1e-9));
}

}  // namespace

TEST_CASE("magnitude scores") {
  const std::vector<double> w{-3, 1, 2, 0};
  CHECK(magnitude_scores<double>(w) == std::vector<double>{3, 1, 2, 0});
  const Mask m{1, 0, 1, 1};
  const auto masked = magnitude_scores<double>(w, &m);
  CHECK(masked[1] == kPrunedScore);
  CHECK(masked[0] == 3);
}

TEST_CASE("select_prune masks the lowest scores") {
  ToyScope s = toy_scope({4});
  const SaliencySet scores{{0, {4, 1, 3, 2}}};
  const MaskSet out = select_prune(scores, s.masks, 0.5, s.policy);
  CHECK(out.mask(0) == Mask{1, 0, 1, 0});
  CHECK(select_prune(scores, out, 0.5, s.policy) == out);
  CHECK_THROWS_AS(select_prune(scores, out, 0.25, s.policy), ScheduleError);
  CHECK_THROWS_AS(select_prune(scores, out, 1.5, s.policy), ScheduleError);
}

TEST_CASE("zero weights go first and masked weights are never resurrected") {
  ToyScope s = toy_scope({5});
  Mask m{1, 1, 0, 1, 1};
  s.masks.set(0, m);
  const std::vector<double> w{0.5, 0.0, 9.0, 0.7, 0.2};
  const SaliencySet scores{{0, magnitude_scores<double>(w, &m)}};
  const MaskSet out = select_prune(scores, s.masks, 0.4, s.policy);
  CHECK(out.mask(0) == Mask{1, 0, 0, 1, 1});
}

TEST_CASE("ties break by parameter then flat index") {
  ToyScope s = toy_scope({3, 3});
  const SaliencySet scores{{0, {1, 1, 1}}, {1, {1, 1, 1}}};
  const MaskSet out = select_prune(scores, s.masks, 0.5, s.policy);
  CHECK(out.mask(0) == Mask{0, 0, 0});
  CHECK(out.mask(1) == Mask{1, 1, 1});
}

TEST_CASE("global and per-layer granularity differ on disjoint score ranges") {
  const SaliencySet scores{{0, {1, 2, 3, 4}}, {1, {10, 20, 30, 40}}};
  ToyScope global = toy_scope({4, 4});
  ToyScope layer = toy_scope({4, 4}, Granularity::PerLayerUniform);
  const MaskSet g = select_prune(scores, global.masks, 0.5, global.policy);
  const MaskSet l = select_prune(scores, layer.masks, 0.5, layer.policy);
  CHECK(g.mask(0) == Mask{0, 0, 0, 0});
  CHECK(g.mask(1) == Mask{1, 1, 1, 1});
  CHECK(l.mask(0) == Mask{0, 0, 1, 1});
  CHECK(l.mask(1) == Mask{0, 0, 1, 1});
  CHECK(g.pruned_count() == l.pruned_count());
}

TEST_CASE("select_prune properties over random scores") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 60; ++trial) {
    std::vector<std::size_t> sizes(1 + rng() % 4);
    for (auto& n : sizes) n = 1 + rng() % 40;
    const Granularity gran = trial % 2 == 0 ? Granularity::Global : Granularity::PerLayerUniform;
    ToyScope s = toy_scope(sizes, gran);
    const std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
    std::vector<std::vector<double>> weights;
    for (std::size_t n : sizes) weights.push_back(oracle::random_tensor({n}, rng()).values());

    // A random non-decreasing schedule.
    std::vector<double> targets(1 + rng() % 6);
    for (auto& t : targets) t = std::uniform_real_distribution<double>(0, 1)(rng);
    std::sort(targets.begin(), targets.end());

    MaskSet masks = s.masks;
    for (double target : targets) {
      SaliencySet scores;
      for (std::size_t p = 0; p < sizes.size(); ++p) {
        scores[p] = magnitude_scores<double>(weights[p], &masks.mask(p));
      }
      const MaskSet next = select_prune(scores, masks, target, s.policy);
      CHECK(next == select_prune(scores, masks, target, s.policy));
      CHECK(next.contains_pruning_of(masks));
      CHECK(next.pruned_count() == brute_force_count(target, total));
      CHECK(std::abs(next.sparsity() - target) < 1.0 / static_cast<double>(total));
      if (gran == Granularity::Global) {
        // Every kept weight scores at least as high as every newly pruned one.
        double max_pruned = -1, min_kept = 1e9;
        for (std::size_t p = 0; p < sizes.size(); ++p) {
          for (std::size_t i = 0; i < sizes[p]; ++i) {
            const double a = std::abs(weights[p][i]);
            if (next.mask(p)[i] == 1) min_kept = std::min(min_kept, a);
            else if (masks.mask(p)[i] == 1) max_pruned = std::max(max_pruned, a);
          }
        }
        CHECK(max_pruned <= min_kept);
      }
      masks = next;
      for (std::size_t p = 0; p < sizes.size(); ++p) {
        for (std::size_t i = 0; i < sizes[p]; ++i) {
          if (masks.mask(p)[i] == 0) weights[p][i] = 0.0;
        }
      }
    }
  }
}

TEST_CASE("fisher saliency on a two-weight linear probe") {
  // y = w . x with squared loss L = (w . x - t)^2 / 2, so dL/dw = (w . x - t) x.
  Tensor<double> w({2}, std::vector<double>{0.8, -1.5});
  const std::vector<std::array<double, 3>> data{{1.0, 2.0, 0.5}, {-0.5, 1.0, 2.0}};
  auto grad_of = [&](std::size_t n) {
    const auto& d = data[n % data.size()];
    const double r = w[0] * d[0] + w[1] * d[1] - d[2];
    return std::vector<Tensor<double>>{Tensor<double>({2}, std::vector<double>{r * d[0], r * d[1]})};
  };
  const std::vector<const Tensor<double>*> weights{&w};

  SUBCASE("one sample matches w^2 g^2 / 2") {
    const auto s = fisher_scores<double>(weights, 1, grad_of, 0.0);
    const double r = 0.8 * 1.0 - 1.5 * 2.0 - 0.5;
    CHECK(s[0][0] == doctest::Approx(0.8 * 0.8 * (r * 1.0) * (r * 1.0) / 2).epsilon(1e-14));
    CHECK(s[0][1] == doctest::Approx(1.5 * 1.5 * (r * 2.0) * (r * 2.0) / 2).epsilon(1e-14));
  }
  SUBCASE("doubling identical data leaves scores unchanged") {
    const auto two = fisher_scores<double>(weights, 2, grad_of, 1e-8);
    const auto four = fisher_scores<double>(weights, 4, grad_of, 1e-8);
    CHECK(two[0][0] == doctest::Approx(four[0][0]).epsilon(1e-15));
    CHECK(two[0][1] == doctest::Approx(four[0][1]).epsilon(1e-15));
  }
  SUBCASE("zero gradient gives zero scores") {
    auto zero = [](std::size_t) { return std::vector<Tensor<double>>{Tensor<double>({2})}; };
    const auto s = fisher_scores<double>(weights, 3, zero, 0.0);
    CHECK(s[0] == std::vector<double>{0.0, 0.0});
    const auto damped = fisher_scores<double>(weights, 3, zero, kFisherDampening);
    CHECK(damped[0][0] == doctest::Approx(0.64 * 1e-8 / 2));
  }
  SUBCASE("no samples is a contract error") {
    CHECK_THROWS_AS(fisher_scores<double>(weights, 0, grad_of, 0.0), ContractError);
  }
}

TEST_CASE("fisher scores on the model") {
  const ArchitectureSpec spec = presets::tiny();
  Model<double> model = build_model<double>(spec, 1);
  TaskSpec task;
  task.num_labels = 2;
  task.train_size = 40;
  task.eval_size = 8;
  const TaskData data = gen_task(task);
  const auto batches = sequential_batches(data.train, 8);
  const MaskSet masks = MaskSet::dense(model.layout(), ScopePolicy::encoder_only());
  const SaliencySet s = fisher_scores(model, masks, batches, 16);
  CHECK(s.size() == 12);
  for (const auto& [id, v] : s) {
    CHECK(v.size() == model.parameters()[id].value.numel());
    for (double x : v) CHECK(x >= 0.0);
  }
  CHECK_THROWS_AS(fisher_scores(model, masks, std::span<const LabeledBatch>{}, 4), ContractError);
}

TEST_CASE("apply_masks and gradient masking") {
  const ArchitectureSpec spec = presets::tiny();
  Model<double> model = build_model<double>(spec, 2);
  const TokenBatch batch = oracle::random_batch(spec, 2, 8, 1);
  const Tensor<double> before = predict_logits(model, batch);
  apply_masks(model, MaskSet::dense(model.layout(), ScopePolicy::all_components()));
  CHECK(predict_logits(model, batch) == before);

  const MaskSet masks = one_shot_prune(model, PrunerKind::Magnitude, 0.6, ScopePolicy::encoder_only());
  for (const auto& [id, mask] : masks.masks()) {
    const auto w = model.parameters()[id].value.data();
    std::size_t nonzero = 0, kept = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      nonzero += w[i] != 0.0;
      kept += mask[i];
    }
    CHECK(nonzero == kept);
  }

  // One Adam step with fresh gradients leaves masked entries at exactly zero.
  Adam<double> adam(model, AdamConfig{});
  GradientSet<double> grads = model.zero_gradients();
  {
    Graph<double> g;
    g.backward(cross_entropy(forward(g, model, batch, ForwardOptions{true, 3}, &grads), std::vector<std::int32_t>{0, 1}));
  }
  mask_gradients(grads, masks);
  adam.reset_pruned(masks);
  adam.step(model, grads, 1e-2);
  for (const auto& [id, mask] : masks.masks()) {
    const auto w = model.parameters()[id].value.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (mask[i] == 0) CHECK(w[i] == 0.0);
    }
  }

  MaskSet bad = masks;
  bad.set(bad.masks().begin()->first, Mask(5, 1));
  CHECK_THROWS_AS(apply_masks(model, bad), ContractError);
}

TEST_CASE("one-shot pruning") {
  const ArchitectureSpec spec = presets::tiny();
  const Model<float> trained = build_model<float>(spec, 3);

  Model<float> untouched = trained;
  const MaskSet none = one_shot_prune(untouched, PrunerKind::Magnitude, 0.0, ScopePolicy::encoder_only());
  CHECK(untouched.same_weights(trained));
  CHECK(none.pruned_count() == 0);

  Model<float> half = trained;
  const MaskSet m = one_shot_prune(half, PrunerKind::Magnitude, 0.5, ScopePolicy::encoder_only());
  CHECK(std::abs(sparsity_report(spec, m).encoder_sparsity - 0.5) < 1.0 / 16384);

  Model<float> everything = trained;
  const MaskSet all = one_shot_prune(everything, PrunerKind::Magnitude, 0.5, ScopePolicy::all_components());
  const SparsityReport r = sparsity_report(spec, all);
  for (ComponentGroup g : kComponentGroups) CHECK(r.group(g).density < 1.0);
  for (const auto& [id, _] : all.masks()) {
    const ComponentTag tag = trained.parameters()[id].info.tag;
    CHECK(tag != ComponentTag::Bias);
    CHECK(tag != ComponentTag::LayerNormParam);
  }
}

TEST_CASE("scope names") {
  CHECK(to_string(Granularity::PerLayerUniform) == "per_layer_uniform");
  CHECK(granularity_from_string("global") == Granularity::Global);
  CHECK(pruner_from_string("diagonal_fisher") == PrunerKind::DiagonalFisher);
  CHECK_THROWS_AS(pruner_from_string("obs"), ConfigError);
  CHECK(ScopePolicy{} == ScopePolicy::encoder_only());
}
