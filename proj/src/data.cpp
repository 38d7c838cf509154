#include "cada/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace cada {

bool Batch::fully_labeled() const {
  return std::none_of(labels.begin(), labels.end(), [](int y) { return y == kUnlabeled; });
}

void Batch::validate() const {
  if (features.rank() != 2) throw std::invalid_argument("batch features must be [n, d]");
  const std::size_t n = features.rows();
  if (labels.size() != n || domains.size() != n) {
    throw std::invalid_argument("batch: features, labels and domains disagree in length");
  }
  if (!feature_names.empty() && feature_names.size() != features.cols()) {
    throw std::invalid_argument("batch: feature_names length differs from width");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (domains[i] != kSourceDomain && domains[i] != kTargetDomain) {
      throw std::invalid_argument("batch: domain must be 0 or 1");
    }
    if (labels[i] < kUnlabeled) throw std::invalid_argument("batch: label must be >= -1");
    if (domains[i] == kSourceDomain && labels[i] == kUnlabeled) {
      throw std::invalid_argument("batch: source sample without a label");
    }
  }
}

Batch make_batch(Tensor features, std::vector<int> labels, int domain) {
  Batch b;
  b.domains.assign(labels.size(), domain);
  b.features = std::move(features);
  b.labels = std::move(labels);
  b.validate();
  return b;
}

namespace {

struct Rotation {
  double cos;
  double sin;
};

// Quarter turns use exact values so 180 degrees is an exact negation.
Rotation rotation_for(double degrees) {
  double r = std::fmod(degrees, 360.0);
  if (r < 0) r += 360.0;
  if (r == 0.0) return {1.0, 0.0};
  if (r == 90.0) return {0.0, 1.0};
  if (r == 180.0) return {-1.0, 0.0};
  if (r == 270.0) return {0.0, -1.0};
  const double rad = degrees * std::numbers::pi / 180.0;
  return {std::cos(rad), std::sin(rad)};
}

struct Draw {
  Tensor features;
  std::vector<int> labels;
};

Draw draw_moons(std::size_t n, double noise, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
  std::normal_distribution<double> jitter(0.0, 1.0);
  const std::size_t outer = n / 2;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  Draw d{Tensor(Shape{n, 2}), std::vector<int>(n)};
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t i = order[k];
    const double t = angle(rng);
    double x, y;
    if (k < outer) {
      x = std::cos(t);
      y = std::sin(t);
      d.labels[i] = 0;
    } else {
      x = 1.0 - std::cos(t);
      y = 0.5 - std::sin(t);
      d.labels[i] = 1;
    }
    if (noise > 0.0) {
      x += noise * jitter(rng);
      y += noise * jitter(rng);
    }
    d.features.at(i, 0) = x;
    d.features.at(i, 1) = y;
  }
  return d;
}

}  // namespace

DomainPair make_two_moons(std::size_t n, double noise, double rotation_deg, std::mt19937_64& rng) {
  if (n < 2) throw std::invalid_argument("make_two_moons: need n >= 2 per domain");
  if (!(noise >= 0.0)) throw std::invalid_argument("make_two_moons: noise must be >= 0");
  Draw src = draw_moons(n, noise, rng);
  Draw tgt = draw_moons(n, noise, rng);
  const Rotation rot = rotation_for(rotation_deg);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = tgt.features.at(i, 0);
    const double y = tgt.features.at(i, 1);
    tgt.features.at(i, 0) = rot.cos * x - rot.sin * y;
    tgt.features.at(i, 1) = rot.sin * x + rot.cos * y;
  }
  DomainPair pair;
  pair.source = make_batch(std::move(src.features), std::move(src.labels), kSourceDomain);
  pair.target = make_batch(std::move(tgt.features), std::vector<int>(n, kUnlabeled), kTargetDomain);
  pair.target_labels = HiddenLabels(std::move(tgt.labels));
  return pair;
}

DomainPair make_shifted_blobs(std::size_t classes, std::size_t dims, std::span<const double> shift,
                              double scale, std::size_t n, std::mt19937_64& rng) {
  if (classes < 2) throw std::invalid_argument("make_shifted_blobs: need at least 2 classes");
  if (dims == 0) throw std::invalid_argument("make_shifted_blobs: dims must be >= 1");
  if (shift.size() != dims) throw std::invalid_argument("make_shifted_blobs: shift length != dims");
  if (n < 2) throw std::invalid_argument("make_shifted_blobs: need n >= 2 per domain");

  std::uniform_real_distribution<double> centre(-4.0, 4.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> means(classes * dims);
  for (double& m : means) m = centre(rng);

  auto draw = [&](bool shifted) {
    Draw d{Tensor(Shape{n, dims}), std::vector<int>(n)};
    for (std::size_t i = 0; i < n; ++i) d.labels[i] = static_cast<int>(i % classes);
    std::shuffle(d.labels.begin(), d.labels.end(), rng);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t k = static_cast<std::size_t>(d.labels[i]);
      for (std::size_t j = 0; j < dims; ++j) {
        const double mu = means[k * dims + j];
        const double m = shifted ? scale * mu + shift[j] : mu;
        d.features.at(i, j) = m + normal(rng);
      }
    }
    return d;
  };
  Draw src = draw(false);
  Draw tgt = draw(true);
  DomainPair pair;
  pair.source = make_batch(std::move(src.features), std::move(src.labels), kSourceDomain);
  pair.target = make_batch(std::move(tgt.features), std::vector<int>(n, kUnlabeled), kTargetDomain);
  pair.target_labels = HiddenLabels(std::move(tgt.labels));
  return pair;
}

namespace {

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

template <class T>
bool parse_number(const std::string& s, T& out) {
  const char* begin = s.data();
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(begin, end, out);
  return ec == std::errc{} && ptr == end && !s.empty();
}

}  // namespace

Batch load_csv(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  auto fail = [&](std::size_t line, const std::string& why) {
    return std::runtime_error(path.string() + ":" + std::to_string(line) + ": " + why);
  };

  std::string line;
  if (!std::getline(is, line)) throw fail(1, "empty file, expected header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_commas(line);
  if (header.size() < 2 || header[0] != "domain" || header[1] != "label") {
    throw fail(1, "header must start with domain,label");
  }
  const std::size_t width = header.size() - 2;

  Batch b;
  b.feature_names.assign(header.begin() + 2, header.end());
  std::vector<double> values;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_commas(line);
    if (cells.size() != header.size()) {
      throw fail(lineno, "expected " + std::to_string(header.size()) + " fields, got " +
                             std::to_string(cells.size()));
    }
    int domain = 0, label = 0;
    if (!parse_number(cells[0], domain) || (domain != kSourceDomain && domain != kTargetDomain)) {
      throw fail(lineno, "invalid domain '" + cells[0] + "'");
    }
    if (!parse_number(cells[1], label) || label < kUnlabeled) {
      throw fail(lineno, "invalid label '" + cells[1] + "'");
    }
    if (domain == kSourceDomain && label == kUnlabeled) {
      throw fail(lineno, "source row without a label");
    }
    for (std::size_t j = 0; j < width; ++j) {
      double v = 0.0;
      if (!parse_number(cells[j + 2], v) || !std::isfinite(v)) {
        throw fail(lineno, "invalid value '" + cells[j + 2] + "' in column " + header[j + 2]);
      }
      values.push_back(v);
    }
    b.domains.push_back(domain);
    b.labels.push_back(label);
  }
  b.features = Tensor(Shape{b.labels.size(), width}, std::move(values));
  return b;
}

void save_csv(const Batch& batch, const std::filesystem::path& path) {
  batch.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  const std::size_t d = batch.width();
  os << "domain,label";
  for (std::size_t j = 0; j < d; ++j) {
    os << ',' << (batch.feature_names.empty() ? "feat_" + std::to_string(j) : batch.feature_names[j]);
  }
  os << '\n';
  char buf[32];
  for (std::size_t i = 0; i < batch.size(); ++i) {
    os << batch.domains[i] << ',' << batch.labels[i];
    for (std::size_t j = 0; j < d; ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", batch.features.at(i, j));
      os << ',' << buf;
    }
    os << '\n';
  }
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

DomainPair split_domains(const Batch& mixed) {
  mixed.validate();
  std::vector<std::size_t> src, tgt;
  for (std::size_t i = 0; i < mixed.size(); ++i) {
    (mixed.domains[i] == kSourceDomain ? src : tgt).push_back(i);
  }
  auto pick = [&](const std::vector<std::size_t>& idx, std::vector<int>& labels) {
    labels.clear();
    for (std::size_t i : idx) labels.push_back(mixed.labels[i]);
    return gather_rows(mixed.features, idx);
  };
  DomainPair pair;
  std::vector<int> labels;
  Tensor fs = pick(src, labels);
  pair.source = make_batch(std::move(fs), labels, kSourceDomain);
  Tensor ft = pick(tgt, labels);
  pair.target = make_batch(std::move(ft), std::vector<int>(tgt.size(), kUnlabeled), kTargetDomain);
  if (std::any_of(labels.begin(), labels.end(), [](int y) { return y != kUnlabeled; })) {
    pair.target_labels = HiddenLabels(labels);
  }
  pair.source.feature_names = mixed.feature_names;
  pair.target.feature_names = mixed.feature_names;
  return pair;
}

Batch with_labels(const Batch& target, const HiddenLabels& labels) {
  Batch b = target;
  if (!labels.empty()) {
    if (labels.size() != b.size()) throw std::invalid_argument("with_labels: size mismatch");
    auto l = labels.for_evaluation();
    b.labels.assign(l.begin(), l.end());
  }
  return b;
}

}  // namespace cada
