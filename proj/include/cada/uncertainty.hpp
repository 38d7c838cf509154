#pragma once

#include <random>
#include <span>
#include <vector>

#include "cada/model.hpp"
#include "cada/tape.hpp"

namespace cada {

// Loss attenuation under Gaussian logit corruption:
//   yhat_t = logits + sigma * eps_t
//   loss   = mean_i -log( (1/T) sum_t softmax(yhat_t)_i[label_i] )
// `noise` has shape [T, n, K] for n x K logits; sigma is [n, 1] (one scale per
// sample) or the logit shape. sigma = 0 reduces to cross-entropy.
Var aleatoric_loss(Tape& tape, Var logits, Var sigma, std::span<const int> labels,
                   const Tensor& noise);

// Standard normal samples of shape [T, rows, cols].
Tensor sample_logit_noise(std::size_t T, std::size_t rows, std::size_t cols, std::mt19937_64& rng);

// -sum p log p in nats with 0 log 0 = 0. Throws when p is not a distribution.
double binary_entropy(std::span<const double> p);

// ln 2 bounds the two-class entropy and the sigmoid variance is below 1, so
// predictive uncertainty never exceeds this.
inline constexpr double kPredictiveBound = 1.0 + 0.69314718055994530942;

// How the entropy term of the predictive estimate is formed.
enum class PredictiveMode {
  mean_of_entropies,  // (1/T) sum_t (v_t + H(p_t))
  entropy_of_mean,    // (1/T) sum_t v_t + H((1/T) sum_t p_t)
};

struct UncertaintyEstimate {
  std::vector<double> aleatoric;        // MC mean of v_t
  std::vector<double> entropy;          // entropy term, nats
  std::vector<double> predictive;       // aleatoric + entropy
  std::vector<double> predictive_norm;  // predictive / kPredictiveBound

  std::size_t size() const { return predictive.size(); }
};

// One dropout-sampled discriminator pass: per-sample domain probabilities
// [n, 2] and variance [n] or [n, 1].
struct McSample {
  Tensor probabilities;
  Tensor variance;
};

UncertaintyEstimate combine_mc_samples(std::span<const McSample> samples,
                                       PredictiveMode mode = PredictiveMode::mean_of_entropies);

// Per-sample MC predictive uncertainty of the discriminator at features f,
// from T dropout plans drawn from rng.
UncertaintyEstimate predictive_uncertainty(const Model& model, const Tensor& f, std::size_t T,
                                           std::mt19937_64& rng,
                                           PredictiveMode mode = PredictiveMode::mean_of_entropies);

// Same estimate with explicit plans (empty plan = deterministic pass).
UncertaintyEstimate predictive_uncertainty(const Model& model, const Tensor& f,
                                           std::span<const DropoutPlan> plans,
                                           PredictiveMode mode = PredictiveMode::mean_of_entropies);

// Differentiable form on a tape: returns the per-sample predictive
// uncertainty as an [n, 1] node, averaged over one pass per plan.
Var predictive_uncertainty_node(Tape& tape, const Architecture& arch, const BoundParams& params,
                                Var f, std::span<const DropoutPlan> plans,
                                PredictiveMode mode = PredictiveMode::mean_of_entropies);

}  // namespace cada
