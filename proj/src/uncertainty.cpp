#include "cada/uncertainty.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace cada {

Tensor sample_logit_noise(std::size_t T, std::size_t rows, std::size_t cols,
                          std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor noise(Shape{T, rows, cols});
  for (double& e : noise.values()) e = normal(rng);
  return noise;
}

Var aleatoric_loss(Tape& tape, Var logits, Var sigma, std::span<const int> labels,
                   const Tensor& noise) {
  const Tensor& z = tape.value(logits);
  if (z.rank() != 2) throw std::invalid_argument("aleatoric_loss expects [n, K] logits");
  const std::size_t n = z.rows(), k = z.cols();
  if (noise.rank() != 3 || noise.dim(1) != n || noise.dim(2) != k) {
    throw std::invalid_argument("aleatoric_loss: noise shape " + shape_string(noise.shape()) +
                                " does not match logits " + shape_string(z.shape()));
  }
  const std::size_t T = noise.dim(0);
  if (T == 0) throw std::invalid_argument("aleatoric_loss: T must be >= 1");
  if (labels.size() != n) throw std::invalid_argument("aleatoric_loss: label count mismatch");
  for (double s : tape.value(sigma).values()) {
    if (s < 0.0) throw std::invalid_argument("aleatoric_loss: sigma must be non-negative");
  }

  Tensor onehot(Shape{n, k});
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw std::out_of_range("aleatoric_loss: label " + std::to_string(y) + " out of range");
    }
    onehot.at(i, static_cast<std::size_t>(y)) = 1.0;
  }
  Var mask = tape.constant(std::move(onehot));

  Var total;
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<double> eps(noise.values().begin() + static_cast<std::ptrdiff_t>(t * n * k),
                            noise.values().begin() + static_cast<std::ptrdiff_t>((t + 1) * n * k));
    Var corrupted = tape.noise_inject(logits, sigma, Tensor(Shape{n, k}, std::move(eps)));
    Var p_true = tape.sum(tape.mul(tape.softmax(corrupted, 1), mask), 1);
    total = t == 0 ? p_true : tape.add(total, p_true);
  }
  Var mc_mean = tape.scale(total, 1.0 / static_cast<double>(T));
  return tape.scale(tape.mean(tape.log(mc_mean)), -1.0);
}

double binary_entropy(std::span<const double> p) {
  if (p.empty()) throw std::invalid_argument("binary_entropy: empty distribution");
  double total = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) throw std::invalid_argument("binary_entropy: negative probability");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw std::invalid_argument("binary_entropy: probabilities sum to " + std::to_string(total));
  }
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

UncertaintyEstimate combine_mc_samples(std::span<const McSample> samples, PredictiveMode mode) {
  if (samples.empty()) throw std::invalid_argument("combine_mc_samples: no samples");
  const std::size_t n = samples.front().probabilities.rows();
  const double T = static_cast<double>(samples.size());
  for (const McSample& s : samples) {
    if (s.probabilities.rank() != 2 || s.probabilities.rows() != n || s.variance.size() != n) {
      throw std::invalid_argument("combine_mc_samples: inconsistent sample shapes");
    }
  }
  UncertaintyEstimate est;
  est.aleatoric.assign(n, 0.0);
  est.entropy.assign(n, 0.0);
  est.predictive.assign(n, 0.0);
  est.predictive_norm.assign(n, 0.0);
  const std::size_t k = samples.front().probabilities.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double v_sum = 0.0, h_sum = 0.0, total = 0.0;
    std::vector<double> p_mean(k, 0.0);
    for (const McSample& s : samples) {
      const double v = s.variance[i];
      const double h = binary_entropy(s.probabilities.row(i));
      v_sum += v;
      h_sum += h;
      total += v + h;
      for (std::size_t c = 0; c < k; ++c) p_mean[c] += s.probabilities.at(i, c) / T;
    }
    est.aleatoric[i] = v_sum / T;
    if (mode == PredictiveMode::mean_of_entropies) {
      est.entropy[i] = h_sum / T;
      est.predictive[i] = total / T;
    } else {
      est.entropy[i] = binary_entropy(p_mean);
      est.predictive[i] = est.aleatoric[i] + est.entropy[i];
    }
    est.predictive_norm[i] = est.predictive[i] / kPredictiveBound;
  }
  return est;
}

UncertaintyEstimate predictive_uncertainty(const Model& model, const Tensor& f,
                                           std::span<const DropoutPlan> plans,
                                           PredictiveMode mode) {
  static const DropoutPlan kNoDropout;
  std::span<const DropoutPlan> passes = plans.empty() ? std::span(&kNoDropout, 1) : plans;
  Tape tape;
  BoundParams bound = cada::bind(tape, model.params, kAllGroups, false);
  Var features = tape.constant(f);
  std::vector<McSample> samples;
  samples.reserve(passes.size());
  for (const DropoutPlan& plan : passes) {
    HeadOutput out = discriminator_heads(tape, model.arch, bound, features, plan);
    samples.push_back({tape.value(tape.softmax(out.logits, 1)), tape.value(out.var)});
  }
  return combine_mc_samples(samples, mode);
}

UncertaintyEstimate predictive_uncertainty(const Model& model, const Tensor& f, std::size_t T,
                                           std::mt19937_64& rng, PredictiveMode mode) {
  if (T == 0) throw std::invalid_argument("predictive_uncertainty: T must be >= 1");
  const auto shapes = discriminator_mask_shapes(model.arch, f.rows());
  const auto plans = sample_dropout_plans(model.arch.dropout, shapes, T, rng);
  return predictive_uncertainty(model, f, plans, mode);
}

namespace {

// Row entropy of an [n, K] probability node as an [n, 1] node.
Var entropy_column(Tape& tape, Var p) {
  const std::size_t k = tape.shape(p)[1];
  Var plogp = tape.mul(p, tape.log(p));
  return tape.scale(tape.matmul(plogp, tape.constant(Tensor(Shape{k, 1}, 1.0))), -1.0);
}

}  // namespace

Var predictive_uncertainty_node(Tape& tape, const Architecture& arch, const BoundParams& params,
                                Var f, std::span<const DropoutPlan> plans, PredictiveMode mode) {
  static const DropoutPlan kNoDropout;
  std::span<const DropoutPlan> passes = plans.empty() ? std::span(&kNoDropout, 1) : plans;
  const double inv_t = 1.0 / static_cast<double>(passes.size());

  Var acc;
  Var p_acc;
  for (std::size_t t = 0; t < passes.size(); ++t) {
    HeadOutput out = discriminator_heads(tape, arch, params, f, passes[t]);
    Var p = tape.softmax(out.logits, 1);
    if (mode == PredictiveMode::mean_of_entropies) {
      Var term = tape.add(out.var, entropy_column(tape, p));
      acc = t == 0 ? term : tape.add(acc, term);
    } else {
      acc = t == 0 ? out.var : tape.add(acc, out.var);
      p_acc = t == 0 ? p : tape.add(p_acc, p);
    }
  }
  if (mode == PredictiveMode::mean_of_entropies) return tape.scale(acc, inv_t);
  return tape.add(tape.scale(acc, inv_t), entropy_column(tape, tape.scale(p_acc, inv_t)));
}

}  // namespace cada
