#pragma once

#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cada/tensor.hpp"

namespace cada {

inline constexpr int kUnlabeled = -1;
inline constexpr int kSourceDomain = 0;
inline constexpr int kTargetDomain = 1;

// Samples with features [n, d], a class label per sample (kUnlabeled when
// absent) and a domain flag (0 source, 1 target).
struct Batch {
  Tensor features;
  std::vector<int> labels;
  std::vector<int> domains;
  std::vector<std::string> feature_names;  // defaults to feat_0..feat_{d-1}

  std::size_t size() const { return labels.size(); }
  std::size_t width() const { return features.rank() == 2 ? features.cols() : 0; }
  bool fully_labeled() const;

  void validate() const;
};

// Target-domain labels kept apart from the Batch the trainer consumes.
// Only evaluation code should call for_evaluation().
class HiddenLabels {
 public:
  HiddenLabels() = default;
  explicit HiddenLabels(std::vector<int> labels) : labels_(std::move(labels)) {}

  std::span<const int> for_evaluation() const { return labels_; }
  std::size_t size() const { return labels_.size(); }
  bool empty() const { return labels_.empty(); }

 private:
  std::vector<int> labels_;
};

struct DomainPair {
  Batch source;
  Batch target;  // labels all kUnlabeled
  HiddenLabels target_labels;
};

// Two interleaved half circles per domain with Gaussian noise; the target
// draw is rotated by rotation_deg about the origin.
DomainPair make_two_moons(std::size_t n, double noise, double rotation_deg, std::mt19937_64& rng);

// K unit-variance Gaussian clusters in d dims; target cluster means are
// scale * mean + shift.
DomainPair make_shifted_blobs(std::size_t classes, std::size_t dims, std::span<const double> shift,
                              double scale, std::size_t n, std::mt19937_64& rng);

// CSV with header `domain,label,<feature columns...>`; label -1 = unlabeled.
Batch load_csv(const std::filesystem::path& path);
void save_csv(const Batch& batch, const std::filesystem::path& path);

// Separates a mixed batch into source and target, moving target labels into
// HiddenLabels.
DomainPair split_domains(const Batch& mixed);

// Target batch with its hidden labels restored, for export.
Batch with_labels(const Batch& target, const HiddenLabels& labels);

Batch make_batch(Tensor features, std::vector<int> labels, int domain);

}  // namespace cada
