// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "sparseforge/distillation.hpp"
#include "sparseforge/errors.hpp"
#include "sparseforge/grad_check.hpp"
#include "sparseforge/optim.hpp"

using namespace sparseforge;
using oracle::random_tensor;

namespace {

double kd_value(const Tensor<double>& student, const Tensor<double>& teacher, const std::vector<std::int32_t>& labels,
                const KDConfig& cfg) {
  Graph<double> g;
  return kd_loss(g.constant(student), teacher, labels, cfg).value().item();
}

}  // namespace

TEST_CASE("kd_loss boundary cases") {
  const Tensor<double> s = random_tensor({3, 4}, 1, -3, 3);
  const Tensor<double> t = random_tensor({3, 4}, 2, -3, 3);
  const std::vector<std::int32_t> labels{0, 3, 1};
  Graph<double> g;
  const double ce = cross_entropy(g.constant(s), labels).value().item();
  CHECK(kd_value(s, t, labels, KDConfig{0.0, 5.5, true}) == ce);
  CHECK(kd_value(s, s, labels, KDConfig{1.0, 5.5, true}) == 0.0);
  CHECK_THROWS_AS(kd_value(s, random_tensor({3, 3}, 3), labels, KDConfig{}), ContractError);
}

TEST_CASE("kd_loss matches a 40-digit reference") {
  const Tensor<double> s({1, 2}, std::vector<double>{2, 0});
  const Tensor<double> t({1, 2}, std::vector<double>{0, 2});
  const double v = kd_value(s, t, {0}, KDConfig{1.0, 5.5, true});
  CHECK(std::abs(v - 1.978249003776187034195849) < 1e-14);

  // The same value from the long double oracle, and the unscaled variant.
  const auto p = oracle::softmax({0 / 5.5L, 2 / 5.5L});
  const auto q = oracle::softmax({2 / 5.5L, 0 / 5.5L});
  CHECK(std::abs(v - static_cast<double>(5.5L * 5.5L * oracle::kl(p, q))) < 1e-14);
  const double unscaled = kd_value(s, t, {0}, KDConfig{1.0, 5.5, false});
  CHECK(std::abs(unscaled - static_cast<double>(oracle::kl(p, q))) < 1e-15);
}

TEST_CASE("kd_loss mixes CE and KL linearly in the hardness") {
  const Tensor<double> s = random_tensor({2, 3}, 4, -2, 2);
  const Tensor<double> t = random_tensor({2, 3}, 5, -2, 2);
  const std::vector<std::int32_t> labels{2, 1};
  const double ce = kd_value(s, t, labels, KDConfig{0.0, 2.0, true});
  const double kl = kd_value(s, t, labels, KDConfig{1.0, 2.0, true});
  CHECK(kd_value(s, t, labels, KDConfig{0.3, 2.0, true}) == doctest::Approx(0.7 * ce + 0.3 * kl).epsilon(1e-14));
}

TEST_CASE("kd_loss gradients across hardness and temperature") {
  const std::vector<std::int32_t> labels{1, 0, 2};
  const Tensor<double> teacher = random_tensor({3, 3}, 6, -4, 4);
  for (double h : {0.0, 0.5, 1.0}) {
    for (double T : {1.0, 2.0, 5.5}) {
      const KDConfig cfg{h, T, true};
      auto r = grad_check([&](Graph<double>&, std::span<const Var<double>> in) {
        return kd_loss(in[0], teacher, labels, cfg);
      }, {random_tensor({3, 3}, 7, -4, 4)}, 1e-5);
      INFO("h=" << h << " T=" << T);
      CHECK_MESSAGE(r.passed(), r.summary());
    }
  }
}

TEST_CASE("kd_loss is continuous in h and T") {
  const Tensor<double> s = random_tensor({2, 4}, 8, -2, 2);
  const Tensor<double> t = random_tensor({2, 4}, 9, -2, 2);
  const std::vector<std::int32_t> labels{3, 0};
  for (double h = 0.0; h <= 1.0; h += 0.1) {
    for (double T = 0.5; T <= 8.0; T += 0.25) {
      const double here = kd_value(s, t, labels, KDConfig{h, T, true});
      CHECK(std::abs(kd_value(s, t, labels, KDConfig{h, T + 1e-7, true}) - here) < 1e-5);
      CHECK(std::abs(kd_value(s, t, labels, KDConfig{std::min(1.0, h + 1e-7), T, true}) - here) < 1e-5);
    }
  }
}

TEST_CASE("KL term is non-negative (property)") {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t b = 1 + rng() % 4, c = 2 + rng() % 5;
    const double T = 0.5 + static_cast<double>(rng() % 100) / 10.0;
    std::vector<std::int32_t> labels(b, 0);
    const double v = kd_value(random_tensor({b, c}, rng(), -5, 5), random_tensor({b, c}, rng(), -5, 5), labels,
                              KDConfig{1.0, T, true});
    CHECK(v >= 0.0);
  }
}

TEST_CASE("soften") {
  const Tensor<double> flat = soften(Tensor<double>({1, 2}, std::vector<double>{0, 0}), 1.0);
  CHECK(flat[0] == 0.5);
  const Tensor<double> z({1, 2}, std::vector<double>{10, 0});
  CHECK(row_entropy(soften(z, 5.5))[0] > row_entropy(soften(z, 1.0))[0]);
  const Tensor<double> hot = soften(z, 1e6);
  CHECK(hot[0] == doctest::Approx(0.5).epsilon(1e-4));
  CHECK_THROWS_AS(soften(z, 0.0), ContractError);
}

TEST_CASE("entropy grows with temperature and T = 5.5 flattens confident teachers") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    // Confident teacher rows: one logit well above the rest.
    Tensor<double> z = random_tensor({1, 5}, rng(), -1, 1);
    z[rng() % 5] += 8.0;
    double prev = -1;
    for (double T : {1.0, 2.0, 3.0, 5.5, 8.0}) {
      const double h = row_entropy(soften(z, T))[0];
      CHECK(h >= prev);
      prev = h;
    }
    const Tensor<double> p1 = soften(z, 1.0), p55 = soften(z, 5.5);
    double max1 = 0, max55 = 0;
    for (std::size_t c = 0; c < 5; ++c) {
      max1 = std::max(max1, p1[c]);
      max55 = std::max(max55, p55[c]);
    }
    CHECK(max1 > 0.99);
    CHECK(max55 < 0.8);
  }
}

TEST_CASE("teacher is frozen and distilling from itself starts at zero") {
  const ArchitectureSpec spec = presets::tiny();
  Model<double> trained = build_model<double>(spec, 4, ForwardConfig{Activation::Gelu, 0.1});
  const Teacher<double> teacher = make_teacher(trained);
  const TokenBatch batch = oracle::random_batch(spec, 3, 10, 2);
  CHECK(teacher.logits(batch) == teacher.logits(batch));

  Model<double> student = trained;
  const std::vector<std::int32_t> labels{0, 1, 1};
  Graph<double> g;
  GradientSet<double> grads = student.zero_gradients();
  // Eval-mode student: the KL term of a student identical to its teacher is zero.
  const Var<double> logits = forward(g, student, batch, ForwardOptions{false, 0}, &grads);
  const Var<double> loss = kd_loss(logits, teacher.logits(batch), labels, KDConfig{1.0, 5.5, true});
  CHECK(loss.value().item() == 0.0);

  // Train the student; the teacher's weights must not move.
  Graph<double> g2;
  GradientSet<double> grads2 = student.zero_gradients();
  const Var<double> l2 = kd_loss(forward(g2, student, batch, ForwardOptions{true, 9}, &grads2), teacher.logits(batch),
                                 labels, KDConfig{0.5, 2.0, true});
  g2.backward(l2);
  Adam<double> adam(student, AdamConfig{});
  adam.step(student, grads2, 1e-2);
  CHECK_FALSE(student.same_weights(trained));
  CHECK(teacher.model().same_weights(trained));
}

TEST_CASE("kd config validation") {
  CHECK_THROWS_AS((KDConfig{1.5, 2.0, true}.validate()), ConfigError);
  CHECK_THROWS_AS((KDConfig{0.5, 0.0, true}.validate()), ConfigError);
  CHECK_NOTHROW(KDConfig{}.validate());
  CHECK(KDConfig{} == KDConfig{1.0, 5.5, true});
}
