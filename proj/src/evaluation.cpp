#include "cada/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>

#include "cada/attention.hpp"
#include "cada/uncertainty.hpp"

namespace cada {

namespace {

constexpr std::array<GroupId, 1> kFeatureGroup{GroupId::feature};
constexpr std::array<GroupId, 3> kDiscriminatorGroups{
    GroupId::discriminator, GroupId::discriminator_logits, GroupId::discriminator_variance};

std::vector<int> row_argmax(const Tensor& logits) {
  std::vector<int> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    // max_element returns the first maximum, so ties go to the lowest index
    out[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

void check_writable(std::ofstream& os, const std::filesystem::path& path) {
  if (!os) throw std::runtime_error("cannot write " + path.string());
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

Tensor extract_features(const Model& model, const Tensor& x) {
  Tape tape;
  BoundParams bound = cada::bind(tape, model.params, kFeatureGroup, false);
  return tape.value(feature_extract(tape, model.arch, bound, tape.constant(x), DropoutPlan{}));
}

std::vector<int> predict(const Model& model, const Tensor& x) {
  Tape tape;
  std::array<GroupId, 4> groups{GroupId::feature, GroupId::classifier, GroupId::classifier_logits,
                                GroupId::classifier_variance};
  BoundParams bound = cada::bind(tape, model.params, groups, false);
  Var f = feature_extract(tape, model.arch, bound, tape.constant(x), DropoutPlan{});
  HeadOutput out = classifier_forward(tape, model.arch, bound, f, DropoutPlan{});
  return row_argmax(tape.value(out.logits));
}

double accuracy(const Model& model, const Tensor& x, std::span<const int> labels) {
  if (labels.empty() || x.rank() != 2 || x.rows() == 0) {
    throw std::invalid_argument("accuracy: empty batch");
  }
  if (labels.size() != x.rows()) throw std::invalid_argument("accuracy: label count mismatch");
  for (int y : labels) {
    if (y < 0) throw std::invalid_argument("accuracy: labels required");
  }
  const std::vector<int> pred = predict(model, x);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

double accuracy(const Model& model, const Batch& batch) {
  return accuracy(model, batch.features, batch.labels);
}

double domain_accuracy(const Model& model, const Tensor& source_x, const Tensor& target_x) {
  const Tensor f = concat_rows(extract_features(model, source_x), extract_features(model, target_x));
  Tape tape;
  BoundParams bound = cada::bind(tape, model.params, kDiscriminatorGroups, false);
  HeadOutput out = discriminator_heads(tape, model.arch, bound, tape.constant(f), DropoutPlan{});
  const std::vector<int> pred = row_argmax(tape.value(out.logits));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int d = i < source_x.rows() ? kSourceDomain : kTargetDomain;
    hits += pred[i] == d;
  }
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

double a_distance_from_error(double error) {
  if (std::isnan(error)) throw std::invalid_argument("a_distance_from_error: NaN error");
  const double e = std::clamp(error, 0.0, 0.5);
  return 2.0 * (1.0 - 2.0 * e);
}

ProxyADistance proxy_a_distance(const Tensor& source, const Tensor& target, std::mt19937_64& rng) {
  if (source.rank() != 2 || target.rank() != 2 || source.cols() != target.cols()) {
    throw std::invalid_argument("proxy_a_distance: feature widths differ");
  }
  if (source.rows() < 20 || target.rows() < 20) {
    throw std::invalid_argument("proxy_a_distance: need at least 20 samples per domain");
  }
  const std::size_t d = source.cols();

  // 50/50 split within each domain.
  auto split = [&rng](std::size_t n) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    return idx;
  };
  const auto is = split(source.rows());
  const auto it = split(target.rows());
  const std::size_t hs = source.rows() / 2, ht = target.rows() / 2;

  std::vector<std::vector<double>> train_x, test_x;
  std::vector<int> train_y, test_y;
  auto take = [&](const Tensor& t, const std::vector<std::size_t>& idx, std::size_t half, int label) {
    for (std::size_t k = 0; k < idx.size(); ++k) {
      auto row = t.row(idx[k]);
      auto& dst_x = k < half ? train_x : test_x;
      auto& dst_y = k < half ? train_y : test_y;
      dst_x.emplace_back(row.begin(), row.end());
      dst_y.push_back(label);
    }
  };
  take(source, is, hs, 0);
  take(target, it, ht, 1);

  // Standardise with training-half statistics.
  std::vector<double> mu(d, 0.0), sd(d, 0.0);
  for (const auto& r : train_x)
    for (std::size_t j = 0; j < d; ++j) mu[j] += r[j];
  for (double& m : mu) m /= static_cast<double>(train_x.size());
  for (const auto& r : train_x)
    for (std::size_t j = 0; j < d; ++j) sd[j] += (r[j] - mu[j]) * (r[j] - mu[j]);
  for (double& s : sd) {
    s = std::sqrt(s / static_cast<double>(train_x.size()));
    if (!(s > 1e-12)) s = 1.0;  // constant column
  }
  auto standardise = [&](std::vector<std::vector<double>>& rows) {
    for (auto& r : rows)
      for (std::size_t j = 0; j < d; ++j) r[j] = (r[j] - mu[j]) / sd[j];
  };
  standardise(train_x);
  standardise(test_x);

  // Full-batch gradient descent on L2-regularised logistic loss.
  constexpr int kIterations = 300;
  constexpr double kStep = 0.5;
  constexpr double kL2 = 1e-3;
  std::vector<double> w(d, 0.0), gw(d);
  double b = 0.0;
  const double inv_n = 1.0 / static_cast<double>(train_x.size());
  for (int iter = 0; iter < kIterations; ++iter) {
    std::fill(gw.begin(), gw.end(), 0.0);
    double gb = 0.0;
    for (std::size_t i = 0; i < train_x.size(); ++i) {
      double z = b;
      for (std::size_t j = 0; j < d; ++j) z += w[j] * train_x[i][j];
      const double p = 1.0 / (1.0 + std::exp(-z));
      const double r = p - static_cast<double>(train_y[i]);
      for (std::size_t j = 0; j < d; ++j) gw[j] += r * train_x[i][j];
      gb += r;
    }
    for (std::size_t j = 0; j < d; ++j) w[j] -= kStep * (gw[j] * inv_n + kL2 * w[j]);
    b -= kStep * gb * inv_n;
  }

  std::size_t errors = 0;
  for (std::size_t i = 0; i < test_x.size(); ++i) {
    double z = b;
    for (std::size_t j = 0; j < d; ++j) z += w[j] * test_x[i][j];
    errors += (z > 0.0 ? 1 : 0) != test_y[i];
  }
  ProxyADistance out;
  out.error = std::clamp(static_cast<double>(errors) / static_cast<double>(test_x.size()), 0.0, 0.5);
  out.distance = a_distance_from_error(out.error);
  return out;
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j;
  j["source_accuracy"] = source_accuracy;
  j["target_accuracy"] = target_accuracy;
  j["probe_error"] = probe_error;
  j["proxy_a_distance"] = proxy_a_distance;
  j["mean_aleatoric"] = mean_aleatoric;
  j["mean_predictive"] = mean_predictive;
  j["seed"] = seed;
  j["config"] = config;
  return j;
}

MetricsReport evaluate(const Model& model, const DomainPair& data, const TrainConfig& cfg) {
  MetricsReport r;
  r.seed = cfg.seed;
  r.config = config_to_json(cfg);
  r.source_accuracy = accuracy(model, data.source);
  if (!data.target_labels.empty()) {
    r.target_accuracy = accuracy(model, data.target.features, data.target_labels.for_evaluation());
  }
  const Tensor fs = extract_features(model, data.source.features);
  const Tensor ft = extract_features(model, data.target.features);
  std::mt19937_64 rng = make_stream(cfg.seed, Stream::eval);
  const ProxyADistance pad = proxy_a_distance(fs, ft, rng);
  r.probe_error = pad.error;
  r.proxy_a_distance = pad.distance;
  const UncertaintyEstimate u =
      predictive_uncertainty(model, concat_rows(fs, ft), cfg.mc_samples, rng, cfg.predictive_mode);
  const double n = static_cast<double>(u.size());
  r.mean_aleatoric = std::accumulate(u.aleatoric.begin(), u.aleatoric.end(), 0.0) / n;
  r.mean_predictive = std::accumulate(u.predictive.begin(), u.predictive.end(), 0.0) / n;
  return r;
}

void write_metrics(const MetricsReport& report, const std::filesystem::path& path) {
  if (report.proxy_a_distance != 2.0 * (1.0 - 2.0 * report.probe_error)) {
    throw std::logic_error("metrics: proxy A-distance does not match probe error");
  }
  std::ofstream os(path, std::ios::binary);
  check_writable(os, path);
  os << report.to_json().dump(2) << '\n';
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

namespace {

struct Labelled {
  std::vector<int> domains;
  std::vector<int> labels;
};

void write_matrix_csv(const std::filesystem::path& path, const Labelled& rows,
                      const std::vector<std::pair<std::string, const Tensor*>>& blocks) {
  std::ofstream os(path, std::ios::binary);
  check_writable(os, path);
  os << "domain,label";
  for (const auto& [prefix, t] : blocks)
    for (std::size_t j = 0; j < t->cols(); ++j) os << ',' << prefix << j;
  os << '\n';
  for (std::size_t i = 0; i < rows.domains.size(); ++i) {
    os << rows.domains[i] << ',' << rows.labels[i];
    for (const auto& [prefix, t] : blocks)
      for (double v : t->row(i)) os << ',' << fmt(v);
    os << '\n';
  }
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace

void export_reports(const Model& model, const DomainPair& data, const TrainConfig& cfg,
                    const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());

  const Tensor f = concat_rows(extract_features(model, data.source.features),
                               extract_features(model, data.target.features));
  Labelled rows;
  rows.domains.assign(data.source.size(), kSourceDomain);
  rows.domains.resize(f.rows(), kTargetDomain);
  rows.labels = data.source.labels;
  if (data.target_labels.empty()) {
    rows.labels.resize(f.rows(), kUnlabeled);
  } else {
    auto hidden = data.target_labels.for_evaluation();
    rows.labels.insert(rows.labels.end(), hidden.begin(), hidden.end());
  }

  std::mt19937_64 rng = make_stream(cfg.seed, Stream::eval);
  const AttentionResult att_a = cada_a_attention(model, f, DropoutPlan{}, cfg.mask_constant);
  const AttentionResult att_p =
      cada_p_attention(model, f, cfg.mc_samples, rng, cfg.mask_constant, cfg.predictive_mode);
  const UncertaintyEstimate u =
      predictive_uncertainty(model, f, cfg.mc_samples, rng, cfg.predictive_mode);

  Tensor h = f;
  if (cfg.variant == Variant::cada_a) h = apply_attention(f, att_a.w);
  if (cfg.variant == Variant::cada_p) h = apply_attention(f, att_p.w);

  write_matrix_csv(dir / "attention_cada-a.csv", rows, {{"w_", &att_a.w}});
  write_matrix_csv(dir / "attention_cada-p.csv", rows, {{"w_", &att_p.w}});
  write_matrix_csv(dir / "embeddings.csv", rows, {{"f_", &f}, {"h_", &h}});

  Tensor unc(Shape{u.size(), 4});
  for (std::size_t i = 0; i < u.size(); ++i) {
    unc.at(i, 0) = u.aleatoric[i];
    unc.at(i, 1) = u.entropy[i];
    unc.at(i, 2) = u.predictive[i];
    unc.at(i, 3) = u.predictive_norm[i];
  }
  {
    const std::filesystem::path path = dir / "uncertainty.csv";
    std::ofstream os(path, std::ios::binary);
    check_writable(os, path);
    os << "domain,label,aleatoric,entropy,predictive,predictive_norm\n";
    for (std::size_t i = 0; i < u.size(); ++i) {
      os << rows.domains[i] << ',' << rows.labels[i];
      for (double v : unc.row(i)) os << ',' << fmt(v);
      os << '\n';
    }
    if (!os) throw std::runtime_error("failed writing " + path.string());
  }

  nlohmann::json side;
  side["config"] = config_to_json(cfg);
  side["mc_samples"] = cfg.mc_samples;
  side["embedding_variant"] = std::string(to_string(cfg.variant));
  side["files"] = {"attention_cada-a.csv", "attention_cada-p.csv", "uncertainty.csv",
                   "embeddings.csv"};
  const std::filesystem::path path = dir / "export.json";
  std::ofstream os(path, std::ios::binary);
  check_writable(os, path);
  os << side.dump(2) << '\n';
}

}  // namespace cada
