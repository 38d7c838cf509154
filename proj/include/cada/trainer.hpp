#pragma once

#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "cada/config.hpp"
#include "cada/data.hpp"
#include "cada/model.hpp"
#include "cada/tape.hpp"

namespace cada {

// J = L_cy + L_cv - lambda (L_dy + L_dv), reported only; updates follow the
// reversal-layer composition of the same objective.
double total_objective(double l_cy, double l_cv, double l_dy, double l_dv, double lambda);

// Randomness consumed by one training step, sampled up front so a step can
// be replayed exactly.
struct StepNoise {
  DropoutPlan feature_source;
  DropoutPlan feature_target;
  DropoutPlan classifier;
  DropoutPlan discriminator_source;
  DropoutPlan discriminator_target;
  Tensor classifier_noise;            // [T, n_s, K]
  Tensor discriminator_noise_source;  // [T, n_s, 2]
  Tensor discriminator_noise_target;  // [T, n_t, 2]
  std::vector<DropoutPlan> attention_plans;  // CADA-P only
};

StepNoise sample_step_noise(const Architecture& arch, const TrainConfig& cfg, std::size_t n_source,
                            std::size_t n_target, std::mt19937_64& step_rng,
                            std::mt19937_64& attention_rng);

// Maps detached source features to attention weights w (empty = none).
using AttentionFn = std::function<Tensor(const Tensor& source_features)>;

AttentionFn attention_for(const Model& model, const TrainConfig& cfg, const StepNoise& noise);

// The four losses of one step recorded on a tape. `total` is their plain
// sum; the discriminator branch sits behind gradient_reversal(f, lambda).
struct FusedForward {
  BoundParams bound;
  Var source_features;
  Var target_features;
  Var classifier_input;
  Var l_cy;
  Var l_cv;
  Var l_dy;
  Var l_dv;
  Var total;
  Tensor attention;  // w used for this pass, empty without attention
};

FusedForward fused_forward(Tape& tape, const Model& model, const Tensor& source_x,
                           std::span<const int> source_y, const Tensor& target_x,
                           const StepNoise& noise, double lambda, const AttentionFn& attention);

struct StepRecord {
  double l_cy = 0.0;
  double l_cv = 0.0;
  double l_dy = 0.0;
  double l_dv = 0.0;
  double lambda = 0.0;
  double objective = 0.0;
};

// One fused forward/backward and one SGD-momentum update per group. The
// source-only variant leaves the discriminator groups untouched.
StepRecord train_step(Model& model, const Tensor& source_x, std::span<const int> source_y,
                      const Tensor& target_x, const TrainConfig& cfg, double lambda,
                      const StepNoise& noise);

struct EpochRecord {
  std::size_t epoch = 0;
  double lambda = 0.0;
  double l_cy = 0.0;
  double l_cv = 0.0;
  double l_dy = 0.0;
  double l_dv = 0.0;
  double objective = 0.0;
  double source_accuracy = 0.0;
  double target_accuracy = -1.0;  // -1 when target labels are unavailable
  double domain_accuracy = 0.0;
  double mean_aleatoric = 0.0;
  double mean_predictive = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
};

struct TrainResult {
  Model model;
  TrainHistory history;
};

// Freshly initialised model for a config and dataset.
Model initial_model(const TrainConfig& cfg, const DomainPair& data);

// Shuffled minibatch training. Target labels, when given, are used only for
// the per-epoch accuracy column.
TrainResult train(const TrainConfig& cfg, const Batch& source, const Batch& target,
                  const HiddenLabels& target_labels = {});
TrainResult train(const TrainConfig& cfg, const DomainPair& data);

void write_history_csv(const TrainHistory& history, const std::filesystem::path& path);

}  // namespace cada
