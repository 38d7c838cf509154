#include "cada/model.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace cada {

void Architecture::validate() const {
  if (input_dim == 0) throw std::invalid_argument("architecture: input_dim must be >= 1");
  if (feature_widths.empty()) throw std::invalid_argument("architecture: no feature layers");
  for (std::size_t w : feature_widths) {
    if (w == 0) throw std::invalid_argument("architecture: feature width must be >= 1");
  }
  if (classifier_width == 0 || discriminator_width == 0) {
    throw std::invalid_argument("architecture: trunk widths must be >= 1");
  }
  if (num_classes < 2) throw std::invalid_argument("architecture: need at least 2 classes");
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw std::invalid_argument("architecture: dropout rate must lie in [0, 1)");
  }
}

std::string_view group_name(GroupId id) {
  switch (id) {
    case GroupId::feature: return "feature";
    case GroupId::classifier: return "classifier";
    case GroupId::classifier_logits: return "classifier_logits";
    case GroupId::classifier_variance: return "classifier_variance";
    case GroupId::discriminator: return "discriminator";
    case GroupId::discriminator_logits: return "discriminator_logits";
    case GroupId::discriminator_variance: return "discriminator_variance";
  }
  return "unknown";
}

bool is_classifier_side(GroupId id) {
  switch (id) {
    case GroupId::feature:
    case GroupId::classifier:
    case GroupId::classifier_logits:
    case GroupId::classifier_variance:
      return true;
    default:
      return false;
  }
}

namespace {

Layer make_layer(std::string name, std::size_t in, std::size_t out, double limit,
                 std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-limit, limit);
  Layer layer{std::move(name), Tensor(Shape{in, out}), Tensor(Shape{out})};
  for (double& w : layer.weight.values()) w = dist(rng);
  return layer;
}

Layer zeros_like(const Layer& l) {
  return Layer{l.name, Tensor(l.weight.shape()), Tensor(l.bias.shape())};
}

// He-uniform for ReLU layers, Glorot-uniform for the affine heads.
double he_limit(std::size_t in) { return std::sqrt(6.0 / static_cast<double>(in)); }
double glorot_limit(std::size_t in, std::size_t out) {
  return std::sqrt(6.0 / static_cast<double>(in + out));
}

}  // namespace

ParamGroups::ParamGroups(const Architecture& arch, std::mt19937_64& rng) {
  arch.validate();
  auto add = [&](GroupId id, Layer layer) { (*this)[id].layers.push_back(std::move(layer)); };
  std::size_t in = arch.input_dim;
  for (std::size_t i = 0; i < arch.feature_widths.size(); ++i) {
    const std::size_t out = arch.feature_widths[i];
    add(GroupId::feature, make_layer("fc" + std::to_string(i + 1), in, out, he_limit(in), rng));
    in = out;
  }
  const std::size_t f = arch.feature_dim();
  const std::size_t c = arch.classifier_width;
  const std::size_t d = arch.discriminator_width;
  add(GroupId::classifier, make_layer("fc", f, c, he_limit(f), rng));
  add(GroupId::classifier_logits, make_layer("fc", c, arch.num_classes,
                                             glorot_limit(c, arch.num_classes), rng));
  add(GroupId::classifier_variance, make_layer("fc", c, 1, glorot_limit(c, 1), rng));
  add(GroupId::discriminator, make_layer("fc", f, d, he_limit(f), rng));
  add(GroupId::discriminator_logits, make_layer("fc", d, 2, glorot_limit(d, 2), rng));
  add(GroupId::discriminator_variance, make_layer("fc", d, 1, glorot_limit(d, 1), rng));
  for (GroupId id : kAllGroups) {
    ParamGroup& g = (*this)[id];
    g.id = id;
    for (const Layer& l : g.layers) g.velocity.push_back(zeros_like(l));
  }
}

std::size_t ParamGroups::parameter_count() const {
  std::size_t n = 0;
  for (const ParamGroup& g : groups_) {
    for (const Layer& l : g.layers) n += l.weight.size() + l.bias.size();
  }
  return n;
}

bool ParamGroups::operator==(const ParamGroups& other) const {
  for (std::size_t i = 0; i < kGroupCount; ++i) {
    const auto& a = groups_[i].layers;
    const auto& b = other.groups_[i].layers;
    if (a.size() != b.size()) return false;
    for (std::size_t j = 0; j < a.size(); ++j) {
      if (a[j].name != b[j].name || a[j].weight != b[j].weight || a[j].bias != b[j].bias) {
        return false;
      }
    }
  }
  return true;
}

const std::vector<BoundLayer>& BoundParams::operator[](GroupId id) const {
  const auto& g = groups_[static_cast<std::size_t>(id)];
  if (!g) {
    throw std::logic_error("parameter group " + std::string(group_name(id)) +
                           " is not bound to this tape");
  }
  return *g;
}

BoundParams bind(Tape& tape, const ParamGroups& params, std::span<const GroupId> groups,
                 bool trainable) {
  BoundParams bound;
  for (GroupId id : groups) {
    auto& slot = bound.slot(id);
    for (const Layer& l : params[id].layers) {
      if (trainable) {
        slot.push_back({tape.leaf(l.weight), tape.leaf(l.bias)});
      } else {
        slot.push_back({tape.constant(l.weight), tape.constant(l.bias)});
      }
    }
  }
  return bound;
}

Gradients collect_gradients(const Tape& tape, const BoundParams& bound,
                            const ParamGroups& params) {
  Gradients grads;
  for (GroupId id : kAllGroups) {
    auto& out = grads[static_cast<std::size_t>(id)];
    if (!bound.has(id)) {
      for (const Layer& l : params[id].layers) {
        out.push_back({Tensor(l.weight.shape()), Tensor(l.bias.shape())});
      }
      continue;
    }
    for (const BoundLayer& b : bound[id]) out.push_back({tape.grad(b.weight), tape.grad(b.bias)});
  }
  return grads;
}

DropoutPlan DropoutPlan::sample(double rate, std::span<const Shape> shapes,
                                std::uint64_t lineage) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw std::invalid_argument("dropout rate must lie in [0, 1)");
  }
  DropoutPlan plan;
  plan.rate_ = rate;
  plan.lineage_ = lineage;
  std::mt19937_64 rng(lineage);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double keep = 1.0 - rate;
  const double scale = 1.0 / keep;
  for (const Shape& s : shapes) {
    Tensor mask(s, 1.0);
    if (rate > 0.0) {
      for (double& m : mask.values()) m = unit(rng) < keep ? scale : 0.0;
    }
    plan.masks_.push_back(std::move(mask));
  }
  return plan;
}

std::vector<DropoutPlan> sample_dropout_plans(double rate, std::span<const Shape> shapes,
                                              std::size_t count, std::mt19937_64& rng) {
  if (count == 0) throw std::invalid_argument("sample_dropout_plans: count must be >= 1");
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw std::invalid_argument("dropout rate must lie in [0, 1)");
  }
  std::vector<DropoutPlan> plans;
  plans.reserve(count);
  for (std::size_t t = 0; t < count; ++t) plans.push_back(DropoutPlan::sample(rate, shapes, rng()));
  return plans;
}

std::vector<Shape> feature_mask_shapes(const Architecture& arch, std::size_t rows) {
  std::vector<Shape> shapes;
  for (std::size_t w : arch.feature_widths) shapes.push_back({rows, w});
  return shapes;
}

std::vector<Shape> classifier_mask_shapes(const Architecture& arch, std::size_t rows) {
  return {{rows, arch.classifier_width}};
}

std::vector<Shape> discriminator_mask_shapes(const Architecture& arch, std::size_t rows) {
  return {{rows, arch.discriminator_width}};
}

namespace {

Var affine(Tape& tape, Var x, const BoundLayer& layer) {
  return tape.add(tape.matmul(x, layer.weight), layer.bias);
}

void check_plan(const DropoutPlan& plan, const Architecture& arch, std::size_t layers,
                const char* network) {
  if (!plan.active()) return;
  if (plan.layers() != layers) {
    throw std::invalid_argument(std::string(network) + ": dropout plan has " +
                                std::to_string(plan.layers()) + " masks, expected " +
                                std::to_string(layers));
  }
  if (plan.rate() != arch.dropout) {
    throw std::invalid_argument(std::string(network) + ": dropout plan rate differs from config");
  }
}

void check_input(const Tape& tape, Var x, std::size_t width, const char* network) {
  const Shape& s = tape.shape(x);
  if (s.size() != 2 || s[1] != width) {
    throw std::invalid_argument(std::string(network) + ": expected input [n, " +
                                std::to_string(width) + "], got " + shape_string(s));
  }
}

Var hidden(Tape& tape, Var x, const BoundLayer& layer, const DropoutPlan& plan, std::size_t idx) {
  Var a = tape.relu(affine(tape, x, layer));
  return plan.active() ? tape.dropout(a, plan.mask(idx)) : a;
}

}  // namespace

Var feature_extract(Tape& tape, const Architecture& arch, const BoundParams& params, Var x,
                    const DropoutPlan& plan) {
  check_input(tape, x, arch.input_dim, "feature_extract");
  const auto& layers = params[GroupId::feature];
  check_plan(plan, arch, layers.size(), "feature_extract");
  Var a = x;
  for (std::size_t i = 0; i < layers.size(); ++i) a = hidden(tape, a, layers[i], plan, i);
  return a;
}

HeadOutput classifier_forward(Tape& tape, const Architecture& arch, const BoundParams& params,
                              Var h, const DropoutPlan& plan) {
  check_input(tape, h, arch.feature_dim(), "classifier_forward");
  check_plan(plan, arch, 1, "classifier_forward");
  Var z = hidden(tape, h, params[GroupId::classifier].at(0), plan, 0);
  HeadOutput out;
  out.logits = affine(tape, z, params[GroupId::classifier_logits].at(0));
  out.raw_var = affine(tape, z, params[GroupId::classifier_variance].at(0));
  out.var = tape.exp(out.raw_var);
  out.sigma = tape.exp(tape.scale(out.raw_var, 0.5));
  return out;
}

HeadOutput discriminator_heads(Tape& tape, const Architecture& arch, const BoundParams& params,
                               Var f, const DropoutPlan& plan) {
  check_input(tape, f, arch.feature_dim(), "discriminator_forward");
  check_plan(plan, arch, 1, "discriminator_forward");
  Var z = hidden(tape, f, params[GroupId::discriminator].at(0), plan, 0);
  HeadOutput out;
  out.logits = affine(tape, z, params[GroupId::discriminator_logits].at(0));
  out.raw_var = affine(tape, z, params[GroupId::discriminator_variance].at(0));
  out.var = tape.sigmoid(out.raw_var);
  out.sigma = tape.exp(tape.scale(tape.log(out.var), 0.5));
  return out;
}

HeadOutput discriminator_forward(Tape& tape, const Architecture& arch, const BoundParams& params,
                                 Var f, const DropoutPlan& plan, double grl_strength) {
  return discriminator_heads(tape, arch, params, tape.gradient_reversal(f, grl_strength), plan);
}

// Checkpoint layout:
//   cada-checkpoint 1
//   tensors <count>
//   then per tensor: "<group>.<layer>.<weight|bias> <rank> <dims...>" on one
//   line and its row-major values (%.17g, space separated) on the next.
namespace {

constexpr const char* kCheckpointMagic = "cada-checkpoint";
constexpr int kCheckpointVersion = 1;

void write_tensor(std::ostream& os, const std::string& key, const Tensor& t) {
  os << key << ' ' << t.rank();
  for (std::size_t d : t.shape()) os << ' ' << d;
  os << '\n';
  char buf[32];
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", t[i]);
    if (i) os << ' ';
    os << buf;
  }
  os << '\n';
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParamGroups& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
  std::size_t count = 0;
  for (GroupId id : kAllGroups) count += 2 * params[id].layers.size();
  os << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  os << "tensors " << count << '\n';
  for (GroupId id : kAllGroups) {
    for (const Layer& l : params[id].layers) {
      const std::string prefix = std::string(group_name(id)) + "." + l.name;
      write_tensor(os, prefix + ".weight", l.weight);
      write_tensor(os, prefix + ".bias", l.bias);
    }
  }
  if (!os) throw std::runtime_error("failed writing checkpoint " + path.string());
}

ParamGroups load_checkpoint(const std::filesystem::path& path, const Architecture& arch) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  auto fail = [&](const std::string& why) -> std::runtime_error {
    return std::runtime_error("checkpoint " + path.string() + ": " + why);
  };

  std::string magic;
  int version = 0;
  if (!(is >> magic >> version) || magic != kCheckpointMagic) throw fail("bad header");
  if (version != kCheckpointVersion) throw fail("unsupported version " + std::to_string(version));
  std::string word;
  std::size_t count = 0;
  if (!(is >> word >> count) || word != "tensors") throw fail("missing tensor count");

  std::map<std::string, Tensor> tensors;
  for (std::size_t n = 0; n < count; ++n) {
    std::string key;
    std::size_t rank = 0;
    if (!(is >> key >> rank) || rank > 2) throw fail("bad tensor record " + std::to_string(n));
    Shape shape(rank);
    for (auto& d : shape) {
      if (!(is >> d)) throw fail("bad shape for " + key);
    }
    std::vector<double> values(shape_size(shape));
    for (double& v : values) {
      std::string token;
      if (!(is >> token)) throw fail("truncated values for " + key);
      try {
        v = std::stod(token);
      } catch (const std::exception&) {
        throw fail("bad value '" + token + "' in " + key);
      }
    }
    if (!tensors.emplace(key, Tensor(shape, std::move(values))).second) {
      throw fail("duplicate tensor " + key);
    }
  }

  std::mt19937_64 unused(0);
  ParamGroups params(arch, unused);
  std::size_t matched = 0;
  for (GroupId id : kAllGroups) {
    ParamGroup& g = params[id];
    for (Layer& l : g.layers) {
      const std::string prefix = std::string(group_name(id)) + "." + l.name;
      for (auto [suffix, target] : {std::pair{".weight", &l.weight}, std::pair{".bias", &l.bias}}) {
        auto it = tensors.find(prefix + suffix);
        if (it == tensors.end()) throw fail("missing tensor " + prefix + suffix);
        if (it->second.shape() != target->shape()) {
          throw fail("shape mismatch for " + prefix + suffix + ": file " +
                     shape_string(it->second.shape()) + ", architecture " +
                     shape_string(target->shape()));
        }
        *target = it->second;
        ++matched;
      }
    }
    for (Layer& v : g.velocity) {
      v.weight = Tensor(v.weight.shape());
      v.bias = Tensor(v.bias.shape());
    }
  }
  if (matched != tensors.size()) throw fail("unexpected extra tensors");
  return params;
}

}  // namespace cada
