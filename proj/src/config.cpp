#include "cada/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <initializer_list>
#include <stdexcept>

namespace cada {

using nlohmann::json;

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::source_only: return "source-only";
    case Variant::cada_w: return "cada-w";
    case Variant::cada_a: return "cada-a";
    case Variant::cada_p: return "cada-p";
  }
  return "unknown";
}

Variant parse_variant(std::string_view name) {
  for (Variant v : {Variant::source_only, Variant::cada_w, Variant::cada_a, Variant::cada_p}) {
    if (to_string(v) == name) return v;
  }
  throw std::invalid_argument("unknown variant '" + std::string(name) + "'");
}

bool uses_attention(Variant v) { return v == Variant::cada_a || v == Variant::cada_p; }

double lambda_schedule(double progress, const LambdaSchedule& schedule) {
  if (schedule.kind == LambdaSchedule::Kind::constant) return schedule.value;
  return 2.0 / (1.0 + std::exp(-10.0 * progress)) - 1.0;
}

void TrainConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("config: ") + what);
  };
  require(mc_samples >= 1, "mc_samples must be >= 1");
  require(mask_constant >= 1.0, "mask_constant must be >= 1");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1)");
  require(learning_rate >= 0.0, "learning_rate must be >= 0");
  require(momentum >= 0.0 && momentum < 1.0, "momentum must lie in [0, 1)");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(!feature_widths.empty(), "layers.feature must not be empty");
  for (std::size_t w : feature_widths) require(w >= 1, "layer widths must be >= 1");
  require(classifier_width >= 1 && discriminator_width >= 1, "layer widths must be >= 1");
  require(lambda.kind == LambdaSchedule::Kind::annealed || lambda.value >= 0.0,
          "lambda.value must be >= 0");
  const DatasetSpec& d = dataset;
  switch (d.kind) {
    case DatasetSpec::Kind::two_moons:
      require(d.n >= 2, "dataset.n must be >= 2");
      require(d.noise >= 0.0, "dataset.noise must be >= 0");
      break;
    case DatasetSpec::Kind::shifted_blobs:
      require(d.n >= 2, "dataset.n must be >= 2");
      require(d.classes >= 2, "dataset.classes must be >= 2");
      require(d.dims >= 1, "dataset.dims must be >= 1");
      require(d.shift.size() == d.dims, "dataset.shift length must equal dataset.dims");
      break;
    case DatasetSpec::Kind::csv:
      require(!d.source_path.empty() && !d.target_path.empty(),
              "dataset.source and dataset.target are required for csv");
      break;
  }
}

namespace {

void check_keys(const json& j, std::string_view where, std::initializer_list<std::string_view> keys) {
  if (!j.is_object()) throw std::invalid_argument("config: " + std::string(where) + " must be an object");
  for (const auto& [k, _] : j.items()) {
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) {
      throw std::invalid_argument("config: unknown key '" + k + "' in " + std::string(where));
    }
  }
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
    if (!v.is_number_unsigned()) {
      throw std::invalid_argument(std::string("config: '") + key + "' must be a non-negative integer");
    }
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) throw std::invalid_argument(std::string("config: '") + key + "' must be a number");
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) throw std::invalid_argument(std::string("config: '") + key + "' must be a string");
  }
  try {
    out = v.get<T>();
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: '") + key + "': " + e.what());
  }
}

std::string_view mode_name(PredictiveMode m) {
  return m == PredictiveMode::mean_of_entropies ? "mean-of-entropies" : "entropy-of-mean";
}

std::string_view dataset_kind_name(DatasetSpec::Kind k) {
  switch (k) {
    case DatasetSpec::Kind::two_moons: return "two-moons";
    case DatasetSpec::Kind::shifted_blobs: return "shifted-blobs";
    case DatasetSpec::Kind::csv: return "csv";
  }
  return "unknown";
}

DatasetSpec dataset_from_json(const json& j) {
  DatasetSpec d;
  std::string kind = "two-moons";
  if (j.contains("kind")) read(j, "kind", kind);
  if (kind == "two-moons") {
    check_keys(j, "dataset", {"kind", "n", "noise", "rotation_deg"});
    d.kind = DatasetSpec::Kind::two_moons;
    read(j, "n", d.n);
    read(j, "noise", d.noise);
    read(j, "rotation_deg", d.rotation_deg);
  } else if (kind == "shifted-blobs") {
    check_keys(j, "dataset", {"kind", "n", "classes", "dims", "shift", "scale"});
    d.kind = DatasetSpec::Kind::shifted_blobs;
    read(j, "n", d.n);
    read(j, "classes", d.classes);
    read(j, "dims", d.dims);
    d.shift.assign(d.dims, 0.0);
    if (j.contains("shift")) {
      if (!j.at("shift").is_array()) throw std::invalid_argument("config: 'shift' must be an array");
      d.shift = j.at("shift").get<std::vector<double>>();
    }
    read(j, "scale", d.scale);
  } else if (kind == "csv") {
    check_keys(j, "dataset", {"kind", "source", "target"});
    d.kind = DatasetSpec::Kind::csv;
    read(j, "source", d.source_path);
    read(j, "target", d.target_path);
  } else {
    throw std::invalid_argument("config: unknown dataset kind '" + kind + "'");
  }
  return d;
}

json dataset_to_json(const DatasetSpec& d) {
  json j;
  j["kind"] = dataset_kind_name(d.kind);
  switch (d.kind) {
    case DatasetSpec::Kind::two_moons:
      j["n"] = d.n;
      j["noise"] = d.noise;
      j["rotation_deg"] = d.rotation_deg;
      break;
    case DatasetSpec::Kind::shifted_blobs:
      j["n"] = d.n;
      j["classes"] = d.classes;
      j["dims"] = d.dims;
      j["shift"] = d.shift;
      j["scale"] = d.scale;
      break;
    case DatasetSpec::Kind::csv:
      j["source"] = d.source_path;
      j["target"] = d.target_path;
      break;
  }
  return j;
}

}  // namespace

TrainConfig config_from_json(const json& j) {
  check_keys(j, "config",
             {"variant", "lambda", "mc_samples", "mask_constant", "dropout", "learning_rate",
              "momentum", "epochs", "batch_size", "seed", "predictive_mode", "layers", "dataset"});
  TrainConfig cfg;
  if (j.contains("variant")) {
    std::string v;
    read(j, "variant", v);
    cfg.variant = parse_variant(v);
  }
  if (j.contains("lambda")) {
    const json& l = j.at("lambda");
    check_keys(l, "lambda", {"schedule", "value"});
    std::string kind = "annealed";
    read(l, "schedule", kind);
    if (kind == "annealed") {
      cfg.lambda.kind = LambdaSchedule::Kind::annealed;
      if (l.contains("value")) throw std::invalid_argument("config: annealed lambda takes no value");
    } else if (kind == "constant") {
      cfg.lambda.kind = LambdaSchedule::Kind::constant;
      read(l, "value", cfg.lambda.value);
    } else {
      throw std::invalid_argument("config: unknown lambda schedule '" + kind + "'");
    }
  }
  read(j, "mc_samples", cfg.mc_samples);
  read(j, "mask_constant", cfg.mask_constant);
  read(j, "dropout", cfg.dropout);
  read(j, "learning_rate", cfg.learning_rate);
  read(j, "momentum", cfg.momentum);
  read(j, "epochs", cfg.epochs);
  read(j, "batch_size", cfg.batch_size);
  read(j, "seed", cfg.seed);
  if (j.contains("predictive_mode")) {
    std::string m;
    read(j, "predictive_mode", m);
    if (m == "mean-of-entropies") {
      cfg.predictive_mode = PredictiveMode::mean_of_entropies;
    } else if (m == "entropy-of-mean") {
      cfg.predictive_mode = PredictiveMode::entropy_of_mean;
    } else {
      throw std::invalid_argument("config: unknown predictive_mode '" + m + "'");
    }
  }
  if (j.contains("layers")) {
    const json& l = j.at("layers");
    check_keys(l, "layers", {"feature", "classifier", "discriminator"});
    if (l.contains("feature")) {
      const json& f = l.at("feature");
      if (!f.is_array()) throw std::invalid_argument("config: 'layers.feature' must be an array");
      cfg.feature_widths.clear();
      for (const json& w : f) {
        if (!w.is_number_unsigned()) throw std::invalid_argument("config: layer widths must be integers");
        cfg.feature_widths.push_back(w.get<std::size_t>());
      }
    }
    read(l, "classifier", cfg.classifier_width);
    read(l, "discriminator", cfg.discriminator_width);
  }
  if (j.contains("dataset")) cfg.dataset = dataset_from_json(j.at("dataset"));
  cfg.validate();
  return cfg;
}

json config_to_json(const TrainConfig& cfg) {
  json j;
  j["variant"] = to_string(cfg.variant);
  if (cfg.lambda.kind == LambdaSchedule::Kind::annealed) {
    j["lambda"] = {{"schedule", "annealed"}};
  } else {
    j["lambda"] = {{"schedule", "constant"}, {"value", cfg.lambda.value}};
  }
  j["mc_samples"] = cfg.mc_samples;
  j["mask_constant"] = cfg.mask_constant;
  j["dropout"] = cfg.dropout;
  j["learning_rate"] = cfg.learning_rate;
  j["momentum"] = cfg.momentum;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["seed"] = cfg.seed;
  j["predictive_mode"] = mode_name(cfg.predictive_mode);
  j["layers"] = {{"feature", cfg.feature_widths},
                 {"classifier", cfg.classifier_width},
                 {"discriminator", cfg.discriminator_width}};
  j["dataset"] = dataset_to_json(cfg.dataset);
  return j;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

std::mt19937_64 make_stream(std::uint64_t seed, Stream stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

DomainPair make_dataset(const DatasetSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng = make_stream(seed, Stream::data);
  switch (spec.kind) {
    case DatasetSpec::Kind::two_moons:
      return make_two_moons(spec.n, spec.noise, spec.rotation_deg, rng);
    case DatasetSpec::Kind::shifted_blobs:
      return make_shifted_blobs(spec.classes, spec.dims, spec.shift, spec.scale, spec.n, rng);
    case DatasetSpec::Kind::csv: {
      DomainPair src = split_domains(load_csv(spec.source_path));
      DomainPair tgt = split_domains(load_csv(spec.target_path));
      if (src.source.size() == 0) throw std::invalid_argument(spec.source_path + ": no source rows");
      if (tgt.target.size() == 0) throw std::invalid_argument(spec.target_path + ": no target rows");
      DomainPair pair;
      pair.source = std::move(src.source);
      pair.target = std::move(tgt.target);
      pair.target_labels = std::move(tgt.target_labels);
      return pair;
    }
  }
  throw std::logic_error("unreachable dataset kind");
}

Architecture architecture_for(const TrainConfig& cfg, const DomainPair& data) {
  Architecture arch;
  arch.input_dim = data.source.width();
  arch.feature_widths = cfg.feature_widths;
  arch.classifier_width = cfg.classifier_width;
  arch.discriminator_width = cfg.discriminator_width;
  arch.dropout = cfg.dropout;
  int max_label = 1;
  for (int y : data.source.labels) max_label = std::max(max_label, y);
  arch.num_classes = static_cast<std::size_t>(max_label) + 1;
  if (cfg.dataset.kind == DatasetSpec::Kind::shifted_blobs) {
    arch.num_classes = std::max(arch.num_classes, cfg.dataset.classes);
  }
  if (data.target.width() != arch.input_dim) {
    throw std::invalid_argument("source and target feature widths differ");
  }
  arch.validate();
  return arch;
}

}  // namespace cada
