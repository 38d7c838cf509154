#pragma once

#include <filesystem>
#include <random>
#include <span>
#include <vector>

#include <json.hpp>

#include "cada/config.hpp"
#include "cada/data.hpp"
#include "cada/model.hpp"

namespace cada {

// Inference path: no dropout, classifier reads f directly (no attention).
Tensor extract_features(const Model& model, const Tensor& x);
std::vector<int> predict(const Model& model, const Tensor& x);

// Fraction of argmax-correct predictions; ties go to the lowest class.
double accuracy(const Model& model, const Tensor& x, std::span<const int> labels);
double accuracy(const Model& model, const Batch& batch);

// Discriminator accuracy at telling source (0) from target (1) features.
double domain_accuracy(const Model& model, const Tensor& source_x, const Tensor& target_x);

// 2 (1 - 2 err) with err clamped to [0, 0.5].
double a_distance_from_error(double error);

struct ProxyADistance {
  double error = 0.5;
  double distance = 0.0;
};

// Linear logistic probe trained on half of each domain (standardised
// features), evaluated on the other half.
ProxyADistance proxy_a_distance(const Tensor& source, const Tensor& target, std::mt19937_64& rng);

struct MetricsReport {
  double source_accuracy = 0.0;
  double target_accuracy = -1.0;
  double probe_error = 0.5;
  double proxy_a_distance = 0.0;
  double mean_aleatoric = 0.0;
  double mean_predictive = 0.0;
  std::uint64_t seed = 0;
  nlohmann::json config;

  nlohmann::json to_json() const;
};

MetricsReport evaluate(const Model& model, const DomainPair& data, const TrainConfig& cfg);

// Writes metrics.json after checking proxy_a_distance == 2 (1 - 2 probe_error).
void write_metrics(const MetricsReport& report, const std::filesystem::path& path);

// attention_cada-a.csv, attention_cada-p.csv, uncertainty.csv, embeddings.csv
// and export.json under `dir`. Schemas in docs/formats.md.
void export_reports(const Model& model, const DomainPair& data, const TrainConfig& cfg,
                    const std::filesystem::path& dir);

}  // namespace cada
