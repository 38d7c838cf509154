#pragma once

#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "cada/model.hpp"
#include "cada/tape.hpp"
#include "cada/uncertainty.hpp"

namespace cada {

enum class AttentionVariant { aleatoric, predictive };

std::string_view variant_name(AttentionVariant v);

inline constexpr double kDefaultMaskConstant = 1e4;

// Certainty attention over the feature components of each sample.
//   p = f * g                      (g: certainty gradient)
//   a = relu(p) - c * relu(-p)     (negative p pushed far below zero)
//   w = certainty * softmax(a)     (row-wise)
//   h = f * (1 + w)
struct AttentionResult {
  Tensor p;
  Tensor a;
  Tensor normalized;  // softmax(a)
  Tensor w;
  Tensor h;  // empty until apply_attention
  std::vector<double> certainty;
  AttentionVariant variant = AttentionVariant::aleatoric;
};

// g = -d(uncertainty)/df, run as a backward pass on `tape`. The result is a
// plain tensor, detached from any graph. Throws when uncertainty does not
// depend on f.
Tensor certainty_gradient(Tape& tape, Var f, Var uncertainty);

AttentionResult attention_weights(const Tensor& f, const Tensor& g,
                                  std::span<const double> certainty,
                                  double c = kDefaultMaskConstant);

Tensor apply_attention(const Tensor& f, const Tensor& w);
// On-tape form; w enters as a constant so gradients only reach f.
Var apply_attention(Tape& tape, Var f, const Tensor& w);

// Aleatoric variant from discriminator outputs already recorded on `tape`
// as a function of the leaf f. Uses the batch sum of v as the scalar to
// differentiate, so each row of g is -dv_i/df_i.
AttentionResult cada_a_attention(Tape& tape, Var f, const HeadOutput& disc,
                                 double c = kDefaultMaskConstant);
AttentionResult cada_a_attention(const Model& model, const Tensor& f, const DropoutPlan& plan,
                                 double c = kDefaultMaskConstant);

// Predictive variant: certainty = 1 - Var / (1 + ln 2), with Var averaged
// over one discriminator pass per plan.
AttentionResult cada_p_attention(const Model& model, const Tensor& f,
                                 std::span<const DropoutPlan> plans,
                                 double c = kDefaultMaskConstant,
                                 PredictiveMode mode = PredictiveMode::mean_of_entropies);
AttentionResult cada_p_attention(const Model& model, const Tensor& f, std::size_t T,
                                 std::mt19937_64& rng, double c = kDefaultMaskConstant,
                                 PredictiveMode mode = PredictiveMode::mean_of_entropies);

}  // namespace cada
