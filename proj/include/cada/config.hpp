#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cada/data.hpp"
#include "cada/model.hpp"
#include "cada/uncertainty.hpp"

namespace cada {

enum class Variant { source_only, cada_w, cada_a, cada_p };

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view name);
bool uses_attention(Variant v);

struct LambdaSchedule {
  enum class Kind { constant, annealed };
  Kind kind = Kind::annealed;
  double value = 1.0;  // constant kind only
};

// Trade-off weight at training progress p in [0, 1]: constant value, or
// 2 / (1 + exp(-10 p)) - 1 when annealed.
double lambda_schedule(double progress, const LambdaSchedule& schedule);

struct DatasetSpec {
  enum class Kind { two_moons, shifted_blobs, csv };
  Kind kind = Kind::two_moons;
  std::size_t n = 500;  // per domain
  double noise = 0.1;
  double rotation_deg = 35.0;
  std::size_t classes = 3;
  std::size_t dims = 2;
  std::vector<double> shift{0.0, 0.0};
  double scale = 1.0;
  std::string source_path;
  std::string target_path;
};

struct TrainConfig {
  Variant variant = Variant::cada_p;
  LambdaSchedule lambda;
  std::size_t mc_samples = 10;
  double mask_constant = 1e4;
  double dropout = 0.5;
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::size_t epochs = 200;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  PredictiveMode predictive_mode = PredictiveMode::mean_of_entropies;
  std::vector<std::size_t> feature_widths{64, 32};
  std::size_t classifier_width = 32;
  std::size_t discriminator_width = 32;
  DatasetSpec dataset;

  void validate() const;
};

// Schema documented in docs/formats.md. Missing keys take defaults; unknown
// keys and wrong types throw std::invalid_argument.
TrainConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const TrainConfig& cfg);
TrainConfig load_config(const std::filesystem::path& path);

// Independent deterministic random streams derived from the run seed.
enum class Stream : std::uint64_t { data = 1, init = 2, shuffle = 3, step = 4, attention = 5, eval = 6 };
std::mt19937_64 make_stream(std::uint64_t seed, Stream stream);

DomainPair make_dataset(const DatasetSpec& spec, std::uint64_t seed);

// Layer widths from the config; input width and class count from the data.
Architecture architecture_for(const TrainConfig& cfg, const DomainPair& data);

}  // namespace cada
