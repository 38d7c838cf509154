#include "cada/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace cada {

std::string_view variant_name(AttentionVariant v) {
  return v == AttentionVariant::aleatoric ? "cada-a" : "cada-p";
}

Tensor certainty_gradient(Tape& tape, Var f, Var uncertainty) {
  if (tape.value(uncertainty).size() != 1) {
    throw std::invalid_argument("certainty_gradient: uncertainty must be a scalar");
  }
  tape.backward(uncertainty);
  if (!tape.reached(f)) {
    throw std::invalid_argument("certainty_gradient: uncertainty does not depend on features");
  }
  Tensor g = tape.grad(f);
  for (double& v : g.values()) v = -v;
  return g;
}

AttentionResult attention_weights(const Tensor& f, const Tensor& g,
                                  std::span<const double> certainty, double c) {
  if (f.shape() != g.shape() || f.rank() != 2) {
    throw std::invalid_argument("attention_weights: f and g must share an [n, d] shape");
  }
  if (certainty.size() != f.rows()) {
    throw std::invalid_argument("attention_weights: one certainty value per sample required");
  }
  if (!(c >= 1.0)) throw std::invalid_argument("attention_weights: c must be >= 1");

  const std::size_t n = f.rows(), d = f.cols();
  AttentionResult r;
  r.p = Tensor(f.shape());
  r.a = Tensor(f.shape());
  r.normalized = Tensor(f.shape());
  r.w = Tensor(f.shape());
  r.certainty.assign(certainty.begin(), certainty.end());
  for (std::size_t i = 0; i < n; ++i) {
    const double cert = certainty[i];
    if (!(cert >= 0.0 && cert <= 1.0)) {
      throw std::invalid_argument("attention_weights: certainty must lie in [0, 1]");
    }
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < d; ++j) {
      const double p = f.at(i, j) * g.at(i, j);
      const double a = std::max(p, 0.0) - c * std::max(-p, 0.0);
      r.p.at(i, j) = p;
      r.a.at(i, j) = a;
      m = std::max(m, a);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double e = std::exp(r.a.at(i, j) - m);
      r.normalized.at(i, j) = e;
      z += e;
    }
    for (std::size_t j = 0; j < d; ++j) {
      r.normalized.at(i, j) /= z;
      r.w.at(i, j) = cert * r.normalized.at(i, j);
    }
  }
  return r;
}

Tensor apply_attention(const Tensor& f, const Tensor& w) {
  if (f.shape() != w.shape()) throw std::invalid_argument("apply_attention: shape mismatch");
  Tensor h = f;
  for (std::size_t i = 0; i < h.size(); ++i) h[i] = f[i] * (1.0 + w[i]);
  return h;
}

Var apply_attention(Tape& tape, Var f, const Tensor& w) {
  if (tape.shape(f) != w.shape()) throw std::invalid_argument("apply_attention: shape mismatch");
  Tensor gain = w;
  for (double& v : gain.values()) v += 1.0;
  return tape.mul(f, tape.constant(std::move(gain)));
}

AttentionResult cada_a_attention(Tape& tape, Var f, const HeadOutput& disc, double c) {
  const Tensor& var = tape.value(disc.var);
  std::vector<double> certainty(var.size());
  for (std::size_t i = 0; i < var.size(); ++i) certainty[i] = std::clamp(1.0 - var[i], 0.0, 1.0);
  const Tensor g = certainty_gradient(tape, f, tape.sum(disc.var));
  const Tensor& features = tape.value(f);
  AttentionResult r = attention_weights(features, g, certainty, c);
  r.h = apply_attention(features, r.w);
  r.variant = AttentionVariant::aleatoric;
  return r;
}

namespace {

constexpr std::array<GroupId, 3> kDiscriminatorGroups{
    GroupId::discriminator, GroupId::discriminator_logits, GroupId::discriminator_variance};

}  // namespace

AttentionResult cada_a_attention(const Model& model, const Tensor& f, const DropoutPlan& plan,
                                 double c) {
  Tape tape;
  BoundParams bound = cada::bind(tape, model.params, kDiscriminatorGroups, false);
  Var features = tape.leaf(f);
  HeadOutput disc = discriminator_heads(tape, model.arch, bound, features, plan);
  return cada_a_attention(tape, features, disc, c);
}

AttentionResult cada_p_attention(const Model& model, const Tensor& f,
                                 std::span<const DropoutPlan> plans, double c,
                                 PredictiveMode mode) {
  Tape tape;
  BoundParams bound = cada::bind(tape, model.params, kDiscriminatorGroups, false);
  Var features = tape.leaf(f);
  Var predictive = predictive_uncertainty_node(tape, model.arch, bound, features, plans, mode);
  const Tensor& var = tape.value(predictive);
  std::vector<double> certainty(var.size());
  for (std::size_t i = 0; i < var.size(); ++i) {
    certainty[i] = std::clamp(1.0 - var[i] / kPredictiveBound, 0.0, 1.0);
  }
  const Tensor g = certainty_gradient(tape, features, tape.sum(predictive));
  AttentionResult r = attention_weights(f, g, certainty, c);
  r.h = apply_attention(f, r.w);
  r.variant = AttentionVariant::predictive;
  return r;
}

AttentionResult cada_p_attention(const Model& model, const Tensor& f, std::size_t T,
                                 std::mt19937_64& rng, double c, PredictiveMode mode) {
  if (T == 0) throw std::invalid_argument("cada_p_attention: T must be >= 1");
  const auto shapes = discriminator_mask_shapes(model.arch, f.rows());
  const auto plans = sample_dropout_plans(model.arch.dropout, shapes, T, rng);
  return cada_p_attention(model, f, plans, c, mode);
}

}  // namespace cada
