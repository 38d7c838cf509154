#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "cada/attention.hpp"
#include "oracle.hpp"

using namespace cada;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = d(rng);
  return t;
}

const double kE2 = std::exp(2.0);

Model random_model(std::uint64_t seed, double dropout = 0.5) {
  Model m;
  m.arch.dropout = dropout;
  std::mt19937_64 rng(seed);
  m.params = ParamGroups(m.arch, rng);
  return m;
}

}  // namespace

TEST(CertaintyGradient, SquaredNorm) {
  Tape t;
  Var f = t.leaf(Tensor::matrix({{1, -2}}));
  const Tensor g = certainty_gradient(t, f, t.sum(t.mul(f, f)));
  EXPECT_EQ(g, Tensor::matrix({{-2, 4}}));
}

TEST(CertaintyGradient, ConstantAndLinear) {
  {
    Tape t;
    Var f = t.leaf(Tensor::matrix({{1, -2, 3}}));
    const Tensor g = certainty_gradient(t, f, t.sum(t.scale(f, 0.0)));
    for (double v : g.values()) EXPECT_EQ(v, 0.0);
  }
  {
    Tape t;
    Var f = t.leaf(Tensor::matrix({{1, -2, 3}}));
    EXPECT_EQ(certainty_gradient(t, f, t.scale(t.sum(f), -1.0)), Tensor::matrix({{1, 1, 1}}));
  }
}

TEST(CertaintyGradient, Errors) {
  Tape t;
  Var f = t.leaf(Tensor::matrix({{1, 2}}));
  Var other = t.leaf(Tensor::matrix({{3, 4}}));
  EXPECT_THROW(certainty_gradient(t, f, t.sum(other)), std::invalid_argument);
  Tape t2;
  Var f2 = t2.leaf(Tensor::matrix({{1, 2}}));
  EXPECT_THROW(certainty_gradient(t2, f2, f2), std::invalid_argument);
}

TEST(AttentionWeights, HandCase) {
  const Tensor f = Tensor::matrix({{1, 1, 1}});
  const Tensor g = Tensor::matrix({{2, -3, 0}});
  const std::vector<double> one{1.0}, half{0.5};
  const AttentionResult r = attention_weights(f, g, one, 1e4);
  EXPECT_EQ(r.p, Tensor::matrix({{2, -3, 0}}));
  EXPECT_EQ(r.a, Tensor::matrix({{2, -30000, 0}}));
  EXPECT_NEAR(r.w[0], kE2 / (kE2 + 1.0), 1e-9);
  EXPECT_NEAR(r.w[1], 0.0, 1e-12);
  EXPECT_NEAR(r.w[2], 1.0 / (kE2 + 1.0), 1e-9);
  EXPECT_NEAR(r.w[0], 0.8808, 5e-5);
  EXPECT_NEAR(r.w[2], 0.1192, 5e-5);

  const AttentionResult h = attention_weights(f, g, half, 1e4);
  EXPECT_NEAR(h.w[0], 0.4404, 5e-5);
  EXPECT_NEAR(h.w[2], 0.0596, 5e-5);
  EXPECT_NEAR(h.w[0], 0.5 * kE2 / (kE2 + 1.0), 1e-12);
}

TEST(AttentionWeights, EqualNegativeScoresAreUniform) {
  const std::vector<double> one{1.0};
  const AttentionResult r =
      attention_weights(Tensor::matrix({{1, 1}}), Tensor::matrix({{-1, -1}}), one, 1e4);
  EXPECT_EQ(r.w, Tensor::matrix({{0.5, 0.5}}));
}

TEST(AttentionWeights, MaskStrengthScalesWithScore) {
  // Suppression of a negative entry is exp(-c |p|) against a zero entry.
  const std::vector<double> one{1.0};
  const Tensor f = Tensor::matrix({{1, 1}});
  const AttentionResult tiny = attention_weights(f, Tensor::matrix({{0, -1e-4}}), one, 1e4);
  EXPECT_NEAR(tiny.normalized[1], std::exp(-1.0) / (1.0 + std::exp(-1.0)), 1e-12);
  const AttentionResult clear = attention_weights(f, Tensor::matrix({{0, -1e-2}}), one, 1e4);
  EXPECT_LT(clear.normalized[1], 1e-12);
}

TEST(AttentionWeights, Errors) {
  const std::vector<double> one{1.0}, two{1.0, 1.0}, bad{1.5};
  const Tensor f = Tensor::matrix({{1, 2}});
  EXPECT_THROW(attention_weights(f, Tensor::matrix({{1, 2, 3}}), one), std::invalid_argument);
  EXPECT_THROW(attention_weights(f, f, two), std::invalid_argument);
  EXPECT_THROW(attention_weights(f, f, bad), std::invalid_argument);
  EXPECT_THROW(attention_weights(f, f, one, 0.5), std::invalid_argument);
}

TEST(ApplyAttention, HandCases) {
  EXPECT_EQ(apply_attention(Tensor::matrix({{1, 2}}), Tensor::matrix({{0.5, 0.25}})),
            Tensor::matrix({{1.5, 2.5}}));
  const Tensor f = Tensor::matrix({{0.3, -7.1, 2.2}});
  EXPECT_EQ(apply_attention(f, Tensor(f.shape())), f);
  const std::vector<double> zero{0.0};
  const AttentionResult r = attention_weights(f, Tensor::matrix({{1, -1, 2}}), zero);
  EXPECT_EQ(apply_attention(f, r.w), f);
  EXPECT_THROW(apply_attention(f, Tensor::matrix({{1, 2}})), std::invalid_argument);
}

TEST(ApplyAttention, TapeFormTreatsWeightsAsConstant) {
  const Tensor w = Tensor::matrix({{0.5, 0.25}});
  Tape t;
  Var f = t.leaf(Tensor::matrix({{1, 2}}));
  Var h = apply_attention(t, f, w);
  EXPECT_EQ(t.value(h), Tensor::matrix({{1.5, 2.5}}));
  t.backward(t.sum(h));
  EXPECT_EQ(t.grad(f), Tensor::matrix({{1.5, 1.25}}));
}

TEST(CadaA, SyntheticVarianceHandCase) {
  // v = 0.5 + (f - 1) . k with k = [-2, 3, 0]: at f = 1, v = 0.5 and g = -k.
  Tape t;
  Var f = t.leaf(Tensor::matrix({{1, 1, 1}}));
  Var shifted = t.add(f, t.constant(Tensor::vector({-1, -1, -1})));
  Var v = t.add(t.matmul(shifted, t.constant(Tensor::matrix({{-2}, {3}, {0}}))),
                t.constant(Tensor::scalar(0.5)));
  HeadOutput disc{v, v, v, v};
  const AttentionResult r = cada_a_attention(t, f, disc, 1e4);
  EXPECT_EQ(r.certainty, std::vector<double>{0.5});
  EXPECT_NEAR(r.w[0], 0.4404, 5e-5);
  EXPECT_LT(r.w[1], 1e-12);
  EXPECT_NEAR(r.w[2], 0.0596, 5e-5);
  EXPECT_EQ(r.variant, AttentionVariant::aleatoric);
}

TEST(CadaA, SaturatedVarianceGatesToZero) {
  Model m = random_model(3);
  m.params[GroupId::discriminator_variance].layers[0].bias = Tensor::vector({60.0});
  std::mt19937_64 rng(1);
  const Tensor f = random_tensor({4, 32}, rng, 0, 1);
  const AttentionResult r = cada_a_attention(m, f, DropoutPlan{}, 1e4);
  for (double v : r.w.values()) EXPECT_LT(v, 1e-12);
  for (std::size_t i = 0; i < f.size(); ++i) EXPECT_NEAR(r.h[i], f[i], 1e-12);
}

TEST(CadaA, ZeroFeaturesUniformAndZeroH) {
  const Model m = random_model(4);
  const Tensor f(Shape{3, 32});
  const AttentionResult r = cada_a_attention(m, f, DropoutPlan{}, 1e4);
  for (std::size_t i = 0; i < 3; ++i) {
    for (double v : r.normalized.row(i)) EXPECT_DOUBLE_EQ(v, 1.0 / 32.0);
    for (double v : r.h.row(i)) EXPECT_EQ(v, 0.0);
  }
}

TEST(CadaA, MatchesIndependentOracle) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 5; ++trial) {
    const Model m = random_model(100 + trial);
    const Tensor f = random_tensor({4, 32}, rng, 0, 1.5);
    const auto plan =
        DropoutPlan::sample(0.5, discriminator_mask_shapes(m.arch, 4), 7 + static_cast<std::uint64_t>(trial));
    const AttentionResult r = cada_a_attention(m, f, plan, 1e4);
    for (std::size_t i = 0; i < 4; ++i) {
      const oracle::Row fi(f.row(i).begin(), f.row(i).end());
      const std::vector<double> mask(plan.mask(0).row(i).begin(), plan.mask(0).row(i).end());
      auto v = [&](const oracle::Row& x) { return oracle::discriminator(m.params, x, &mask).v; };
      const oracle::Row g = oracle::numeric_grad(v, fi);
      oracle::Row neg(g.size());
      for (std::size_t k = 0; k < g.size(); ++k) neg[k] = -g[k];
      const oracle::Row w = oracle::weights(fi, neg, 1.0 - v(fi), 1e4);
      EXPECT_NEAR(r.certainty[i], 1.0 - v(fi), 1e-12);
      for (std::size_t k = 0; k < 32; ++k) EXPECT_NEAR(r.w.at(i, k), w[k], 1e-6) << i << "," << k;
    }
  }
}

TEST(CadaP, MatchesIndependentOracle) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 5; ++trial) {
    const Model m = random_model(200 + trial);
    const Tensor f = random_tensor({3, 32}, rng, 0, 1.5);
    const auto plans = sample_dropout_plans(0.5, discriminator_mask_shapes(m.arch, 3), 4, rng);
    const AttentionResult r = cada_p_attention(m, f, plans, 1e4);
    EXPECT_EQ(r.variant, AttentionVariant::predictive);
    for (std::size_t i = 0; i < 3; ++i) {
      const oracle::Row fi(f.row(i).begin(), f.row(i).end());
      std::vector<std::vector<double>> masks;
      for (const auto& p : plans) masks.emplace_back(p.mask(0).row(i).begin(), p.mask(0).row(i).end());
      auto var = [&](const oracle::Row& x) { return oracle::predictive(m.params, x, masks); };
      const oracle::Row g = oracle::numeric_grad(var, fi);
      oracle::Row neg(g.size());
      for (std::size_t k = 0; k < g.size(); ++k) neg[k] = -g[k];
      const double certainty = 1.0 - var(fi) / (1.0 + std::numbers::ln2);
      const oracle::Row w = oracle::weights(fi, neg, certainty, 1e4);
      EXPECT_NEAR(r.certainty[i], certainty, 1e-12);
      for (std::size_t k = 0; k < 32; ++k) EXPECT_NEAR(r.w.at(i, k), w[k], 1e-6) << i << "," << k;
    }
  }
}

TEST(CadaP, RateZeroAnyTEqualsSinglePass) {
  const Model m = random_model(5, 0.0);
  std::mt19937_64 rng(2);
  const Tensor f = random_tensor({4, 32}, rng, 0, 1);
  const AttentionResult single = cada_p_attention(m, f, std::span<const DropoutPlan>{}, 1e4);
  for (std::size_t T : {1u, 3u, 8u}) {
    const AttentionResult r = cada_p_attention(m, f, T, rng, 1e4);
    for (std::size_t i = 0; i < f.size(); ++i) EXPECT_NEAR(r.w[i], single.w[i], 1e-12);
  }
  EXPECT_THROW(cada_p_attention(m, f, 0, rng, 1e4), std::invalid_argument);
}

TEST(CadaP, MaximalUncertaintyGivesIdentity) {
  Model m = random_model(6);
  auto& logits = m.params[GroupId::discriminator_logits].layers[0];
  logits.weight = Tensor(logits.weight.shape());
  logits.bias = Tensor(logits.bias.shape());
  m.params[GroupId::discriminator_variance].layers[0].bias = Tensor::vector({60.0});
  std::mt19937_64 rng(3);
  const Tensor f = random_tensor({3, 32}, rng, -1, 1);
  const AttentionResult r = cada_p_attention(m, f, 4, rng, 1e4);
  for (double c : r.certainty) EXPECT_LT(c, 1e-12);
  for (std::size_t i = 0; i < f.size(); ++i) EXPECT_NEAR(r.h[i], f[i], 1e-12);
}

TEST(AttentionInvariants, RandomInstances) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> cert(0.0, 1.0);
  std::uniform_real_distribution<double> mag(0.1, 3.0);
  std::bernoulli_distribution sign(0.5);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 3, d = 8;
    Tensor f(Shape{n, d}), g(Shape{n, d});
    for (double& v : f.values()) v = sign(rng) ? mag(rng) : -mag(rng);
    for (double& v : g.values()) v = sign(rng) ? mag(rng) : -mag(rng);
    std::vector<double> c(n);
    for (double& v : c) v = cert(rng);
    const AttentionResult r = attention_weights(f, g, c, 1e4);
    const Tensor h = apply_attention(f, r.w);
    for (std::size_t i = 0; i < n; ++i) {
      double sum = 0.0;
      bool any_nonnegative = false;
      for (std::size_t j = 0; j < d; ++j) any_nonnegative = any_nonnegative || r.p.at(i, j) >= 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        sum += r.normalized.at(i, j);
        // A row with no p >= 0 still normalizes to 1, so the mask cannot zero it.
        if (any_nonnegative && r.p.at(i, j) < 0.0) ASSERT_LT(r.normalized.at(i, j), 1e-12);
        ASSERT_LE(r.w.at(i, j), c[i]);
        ASSERT_GE(r.w.at(i, j), 0.0);
        ASSERT_EQ(r.w.at(i, j), c[i] * r.normalized.at(i, j));
        ASSERT_LE(std::abs(h.at(i, j)), 2.0 * std::abs(f.at(i, j)));
      }
      ASSERT_NEAR(sum, 1.0, 1e-9);
    }

    // Scaling f by k > 0 keeps the masked set.
    const double k = mag(rng);
    Tensor fk = f;
    for (double& v : fk.values()) v *= k;
    const AttentionResult rk = attention_weights(fk, g, c, 1e4);
    for (std::size_t i = 0; i < f.size(); ++i) ASSERT_EQ(rk.p[i] < 0.0, r.p[i] < 0.0);

    const std::vector<double> zero(n, 0.0);
    ASSERT_EQ(apply_attention(f, attention_weights(f, g, zero, 1e4).w), f);
  }
}
