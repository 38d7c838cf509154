#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cada/tape.hpp"
#include "cada/tensor.hpp"

namespace cada {

// Layer widths and dropout rate for the three networks.
//   feature extractor:  input -> feature_widths... (ReLU + dropout each)
//   classifier trunk:   feature_dim -> classifier_width (ReLU + dropout)
//   discriminator trunk feature_dim -> discriminator_width (ReLU + dropout)
//   heads:              single affine layers on their trunk
struct Architecture {
  std::size_t input_dim = 2;
  std::vector<std::size_t> feature_widths{64, 32};
  std::size_t classifier_width = 32;
  std::size_t discriminator_width = 32;
  std::size_t num_classes = 2;
  double dropout = 0.5;

  std::size_t feature_dim() const { return feature_widths.back(); }
  void validate() const;
};

enum class GroupId : std::size_t {
  feature,
  classifier,
  classifier_logits,
  classifier_variance,
  discriminator,
  discriminator_logits,
  discriminator_variance,
};

inline constexpr std::size_t kGroupCount = 7;
inline constexpr std::array<GroupId, kGroupCount> kAllGroups{
    GroupId::feature,       GroupId::classifier,           GroupId::classifier_logits,
    GroupId::classifier_variance, GroupId::discriminator, GroupId::discriminator_logits,
    GroupId::discriminator_variance};

std::string_view group_name(GroupId id);
// The minimizing side of the saddle point: feature extractor and classifier.
bool is_classifier_side(GroupId id);

struct Layer {
  std::string name;
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
};

struct ParamGroup {
  GroupId id{};
  std::vector<Layer> layers;
  std::vector<Layer> velocity;  // SGD momentum, same shapes as layers
};

// The seven disjoint parameter collections of the three networks.
class ParamGroups {
 public:
  ParamGroups() = default;
  ParamGroups(const Architecture& arch, std::mt19937_64& rng);

  ParamGroup& operator[](GroupId id) { return groups_[static_cast<std::size_t>(id)]; }
  const ParamGroup& operator[](GroupId id) const { return groups_[static_cast<std::size_t>(id)]; }

  std::size_t parameter_count() const;
  bool operator==(const ParamGroups& other) const;

 private:
  std::array<ParamGroup, kGroupCount> groups_;
};

struct BoundLayer {
  Var weight;
  Var bias;
};

// Tape handles for one or more parameter groups.
class BoundParams {
 public:
  const std::vector<BoundLayer>& operator[](GroupId id) const;
  std::vector<BoundLayer>& slot(GroupId id) { return groups_[static_cast<std::size_t>(id)].emplace(); }
  bool has(GroupId id) const { return groups_[static_cast<std::size_t>(id)].has_value(); }

 private:
  std::array<std::optional<std::vector<BoundLayer>>, kGroupCount> groups_;
};

// Registers each tensor of the selected groups on the tape, as leaves when
// `trainable` and as constants otherwise.
BoundParams bind(Tape& tape, const ParamGroups& params, std::span<const GroupId> groups = kAllGroups,
                 bool trainable = true);

struct LayerGrad {
  Tensor weight;
  Tensor bias;
};
using Gradients = std::array<std::vector<LayerGrad>, kGroupCount>;

// Reads the gradient of every bound tensor after a backward pass.
Gradients collect_gradients(const Tape& tape, const BoundParams& bound, const ParamGroups& params);

// Per-layer dropout masks for one forward pass of one network. A default
// constructed plan is inactive: layers pass through unmasked (inference).
class DropoutPlan {
 public:
  DropoutPlan() = default;
  static DropoutPlan sample(double rate, std::span<const Shape> shapes, std::uint64_t lineage);

  bool active() const { return !masks_.empty(); }
  double rate() const { return rate_; }
  std::uint64_t lineage() const { return lineage_; }
  std::size_t layers() const { return masks_.size(); }
  const Tensor& mask(std::size_t layer) const { return masks_.at(layer); }

  bool operator==(const DropoutPlan&) const = default;

 private:
  double rate_ = 0.0;
  std::uint64_t lineage_ = 0;
  std::vector<Tensor> masks_;
};

// T independent plans; plan t is seeded by the t-th draw from rng.
std::vector<DropoutPlan> sample_dropout_plans(double rate, std::span<const Shape> shapes,
                                              std::size_t count, std::mt19937_64& rng);

// Mask shapes for a batch of `rows` samples through each network.
std::vector<Shape> feature_mask_shapes(const Architecture& arch, std::size_t rows);
std::vector<Shape> classifier_mask_shapes(const Architecture& arch, std::size_t rows);
std::vector<Shape> discriminator_mask_shapes(const Architecture& arch, std::size_t rows);

struct HeadOutput {
  Var logits;
  Var raw_var;
  Var var;
  Var sigma;
};

Var feature_extract(Tape& tape, const Architecture& arch, const BoundParams& params, Var x,
                    const DropoutPlan& plan);

// Logits and log-variance head: var = exp(raw_var).
HeadOutput classifier_forward(Tape& tape, const Architecture& arch, const BoundParams& params,
                              Var h, const DropoutPlan& plan);

// Domain logits and variance var = sigmoid(raw_var) on gradient_reversal(f).
HeadOutput discriminator_forward(Tape& tape, const Architecture& arch, const BoundParams& params,
                                 Var f, const DropoutPlan& plan, double grl_strength);

// Discriminator without the reversal layer, for differentiating its
// uncertainty with respect to the features.
HeadOutput discriminator_heads(Tape& tape, const Architecture& arch, const BoundParams& params,
                               Var f, const DropoutPlan& plan);

struct Model {
  Architecture arch;
  ParamGroups params;
};

// Text checkpoint; layout documented in docs/formats.md.
void save_checkpoint(const std::filesystem::path& path, const ParamGroups& params);
ParamGroups load_checkpoint(const std::filesystem::path& path, const Architecture& arch);

}  // namespace cada
