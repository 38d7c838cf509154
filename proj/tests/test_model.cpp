#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "cada/gradcheck.hpp"
#include "cada/model.hpp"

using namespace cada;

namespace {

Model make_model(double dropout = 0.5, std::uint64_t seed = 1) {
  Model m;
  m.arch.dropout = dropout;
  std::mt19937_64 rng(seed);
  m.params = ParamGroups(m.arch, rng);
  return m;
}

Tensor random_input(std::size_t n, std::size_t d, std::mt19937_64& rng, double scale = 2.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Tensor t(Shape{n, d});
  for (double& v : t.values()) v = u(rng);
  return t;
}

void zero_group(ParamGroups& p, GroupId id) {
  for (Layer& l : p[id].layers) {
    l.weight = Tensor(l.weight.shape());
    l.bias = Tensor(l.bias.shape());
  }
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("cada_model_" + name);
}

}  // namespace

TEST(ParamGroups, SevenDisjointGroupsCoverAllParameters) {
  Model m = make_model();
  std::size_t total = 0;
  std::set<std::string> names;
  for (GroupId id : kAllGroups) {
    const ParamGroup& g = m.params[id];
    EXPECT_EQ(g.id, id);
    EXPECT_FALSE(g.layers.empty());
    ASSERT_EQ(g.velocity.size(), g.layers.size());
    for (std::size_t i = 0; i < g.layers.size(); ++i) {
      total += g.layers[i].weight.size() + g.layers[i].bias.size();
      EXPECT_EQ(g.velocity[i].weight.shape(), g.layers[i].weight.shape());
      EXPECT_TRUE(names.insert(std::string(group_name(id)) + "." + g.layers[i].name).second);
    }
  }
  EXPECT_EQ(total, m.params.parameter_count());
  // 2-64-32 extractor, 32-32 trunks, heads 2 + 1 logits/variance per side
  EXPECT_EQ(total, 2u * 64 + 64 + 64u * 32 + 32 + 2 * (32u * 32 + 32) + 32 * 2 + 2 + 33 + 32 * 2 + 2 + 33);
}

TEST(ParamGroups, ClassifierSide) {
  EXPECT_TRUE(is_classifier_side(GroupId::feature));
  EXPECT_TRUE(is_classifier_side(GroupId::classifier_variance));
  EXPECT_FALSE(is_classifier_side(GroupId::discriminator));
  EXPECT_FALSE(is_classifier_side(GroupId::discriminator_logits));
  EXPECT_FALSE(is_classifier_side(GroupId::discriminator_variance));
}

TEST(ParamGroups, SeedDeterministic) {
  EXPECT_TRUE(make_model(0.5, 3).params == make_model(0.5, 3).params);
  EXPECT_FALSE(make_model(0.5, 3).params == make_model(0.5, 4).params);
}

TEST(ParamGroups, EveryGradientLandsInOneGroup) {
  Model m = make_model();
  std::mt19937_64 rng(2);
  const Tensor x = random_input(5, 2, rng);
  Tape t;
  BoundParams b = cada::bind(t, m.params);
  Var f = feature_extract(t, m.arch, b, t.constant(x), {});
  HeadOutput c = classifier_forward(t, m.arch, b, f, {});
  HeadOutput d = discriminator_forward(t, m.arch, b, f, {}, 1.0);
  t.backward(t.add(t.add(t.sum(c.logits), t.sum(c.var)), t.add(t.sum(d.logits), t.sum(d.var))));
  const Gradients g = collect_gradients(t, b, m.params);
  for (GroupId id : kAllGroups) {
    const auto& gg = g[static_cast<std::size_t>(id)];
    ASSERT_EQ(gg.size(), m.params[id].layers.size());
    for (std::size_t l = 0; l < gg.size(); ++l) {
      EXPECT_EQ(gg[l].weight.shape(), m.params[id].layers[l].weight.shape());
      EXPECT_EQ(gg[l].bias.shape(), m.params[id].layers[l].bias.shape());
    }
  }
}

TEST(FeatureExtract, ZeroParametersGiveZeroFeatures) {
  Model m = make_model();
  zero_group(m.params, GroupId::feature);
  std::mt19937_64 rng(1);
  Tape t;
  BoundParams b = cada::bind(t, m.params);
  const Tensor f = t.value(feature_extract(t, m.arch, b, t.constant(random_input(7, 2, rng)), {}));
  EXPECT_EQ(f.shape(), (Shape{7, 32}));
  for (double v : f.values()) EXPECT_EQ(v, 0.0);
}

TEST(FeatureExtract, RateZeroIgnoresPlanSeed) {
  Model m = make_model(0.0);
  std::mt19937_64 rng(1);
  const Tensor x = random_input(6, 2, rng);
  auto run = [&](std::uint64_t lineage) {
    Tape t;
    BoundParams b = cada::bind(t, m.params);
    auto plan = DropoutPlan::sample(0.0, feature_mask_shapes(m.arch, 6), lineage);
    return t.value(feature_extract(t, m.arch, b, t.constant(x), plan));
  };
  EXPECT_EQ(run(1), run(99));
}

TEST(FeatureExtract, SamePlanSameOutputDifferentPlanDiffers) {
  Model m = make_model(0.5);
  std::mt19937_64 rng(1);
  const Tensor x = random_input(6, 2, rng);
  auto run = [&](const DropoutPlan& plan) {
    Tape t;
    BoundParams b = cada::bind(t, m.params);
    return t.value(feature_extract(t, m.arch, b, t.constant(x), plan));
  };
  auto p1 = DropoutPlan::sample(0.5, feature_mask_shapes(m.arch, 6), 11);
  auto p2 = DropoutPlan::sample(0.5, feature_mask_shapes(m.arch, 6), 12);
  EXPECT_EQ(run(p1), run(p1));
  EXPECT_NE(run(p1), run(p2));
}

TEST(FeatureExtract, Errors) {
  Model m = make_model(0.5);
  Tape t;
  BoundParams b = cada::bind(t, m.params);
  EXPECT_THROW(feature_extract(t, m.arch, b, t.constant(Tensor(Shape{3, 5})), {}), std::invalid_argument);
  auto wrong_rate = DropoutPlan::sample(0.25, feature_mask_shapes(m.arch, 3), 1);
  EXPECT_THROW(feature_extract(t, m.arch, b, t.constant(Tensor(Shape{3, 2})), wrong_rate),
               std::invalid_argument);
  auto wrong_count = DropoutPlan::sample(0.5, classifier_mask_shapes(m.arch, 3), 1);
  EXPECT_THROW(feature_extract(t, m.arch, b, t.constant(Tensor(Shape{3, 2})), wrong_count),
               std::invalid_argument);
  BoundParams partial = cada::bind(t, m.params, std::array{GroupId::classifier});
  EXPECT_THROW(feature_extract(t, m.arch, partial, t.constant(Tensor(Shape{3, 2})), {}),
               std::logic_error);
}

TEST(Classifier, ZeroRawVarGivesUnitVariance) {
  Model m = make_model();
  zero_group(m.params, GroupId::classifier_variance);
  std::mt19937_64 rng(5);
  Tape t;
  BoundParams b = cada::bind(t, m.params);
  HeadOutput c = classifier_forward(t, m.arch, b, t.constant(random_input(4, 32, rng)), {});
  for (double v : t.value(c.var).values()) EXPECT_EQ(v, 1.0);
  for (double v : t.value(c.sigma).values()) EXPECT_EQ(v, 1.0);
}

TEST(Classifier, ZeroTrunkGivesHeadBias) {
  Model m = make_model();
  zero_group(m.params, GroupId::classifier);
  m.params[GroupId::classifier_logits].layers[0].bias = Tensor::vector({0.25, -1.5});
  std::mt19937_64 rng(5);
  Tape t;
  BoundParams b = cada::bind(t, m.params);
  HeadOutput c = classifier_forward(t, m.arch, b, t.constant(random_input(4, 32, rng)), {});
  const Tensor logits = t.value(c.logits);
  for (std::size_t r = 0; r < 4; ++r) {
    EXPECT_EQ(logits.at(r, 0), 0.25);
    EXPECT_EQ(logits.at(r, 1), -1.5);
  }
}

TEST(Classifier, LogitGradientThroughTrunk) {
  Model m = make_model(0.5);
  std::mt19937_64 rng(6);
  const Tensor h = random_input(4, 32, rng);
  const Tensor w = random_input(4, 2, rng);
  const auto plan = DropoutPlan::sample(0.5, classifier_mask_shapes(m.arch, 4), 3);
  auto r = finite_diff_check(
      [&](Tape& t, Var v) {
        BoundParams b = cada::bind(t, m.params, kAllGroups, false);
        HeadOutput c = classifier_forward(t, m.arch, b, v, plan);
        return t.add(t.sum(t.mul(c.logits, t.constant(w))), t.sum(c.var));
      },
      h);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Discriminator, ZeroStrengthDetachesFeatures) {
  Model m = make_model();
  std::mt19937_64 rng(7);
  Tape t;
  BoundParams b = cada::bind(t, m.params);
  Var f = t.leaf(random_input(5, 32, rng));
  HeadOutput d = discriminator_forward(t, m.arch, b, f, {}, 0.0);
  const std::vector<int> y{0, 1, 0, 1, 1};
  t.backward(t.add(t.cross_entropy(d.logits, y), t.sum(d.var)));
  const Tensor gf = t.grad(f);
  for (double g : gf.values()) EXPECT_EQ(g, 0.0);
  // the head parameters still learn
  double total = 0.0;
  const Tensor gw = t.grad(b[GroupId::discriminator_logits][0].weight);
  for (double g : gw.values()) total += std::abs(g);
  EXPECT_GT(total, 0.0);
}

TEST(Discriminator, ZeroRawVarGivesHalf) {
  Model m = make_model();
  zero_group(m.params, GroupId::discriminator_variance);
  std::mt19937_64 rng(7);
  Tape t;
  BoundParams b = cada::bind(t, m.params);
  HeadOutput d = discriminator_forward(t, m.arch, b, t.constant(random_input(3, 32, rng)), {}, 1.0);
  for (double v : t.value(d.var).values()) EXPECT_EQ(v, 0.5);
}

TEST(Discriminator, IdenticalBatchesIdenticalLogits) {
  Model m = make_model();
  std::mt19937_64 rng(8);
  const Tensor f = random_input(4, 32, rng);
  Tape t;
  BoundParams b = cada::bind(t, m.params);
  HeadOutput s = discriminator_forward(t, m.arch, b, t.constant(f), {}, 1.0);
  HeadOutput g = discriminator_forward(t, m.arch, b, t.constant(f), {}, 1.0);
  EXPECT_EQ(t.value(s.logits), t.value(g.logits));
}

TEST(Heads, VarianceRangesAndSigma) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 30; ++trial) {
    Model m = make_model(0.5, static_cast<std::uint64_t>(trial));
    Tape t;
    BoundParams b = cada::bind(t, m.params);
    Var f = t.constant(random_input(6, 32, rng, 5.0));
    HeadOutput c = classifier_forward(t, m.arch, b, f, {});
    HeadOutput d = discriminator_forward(t, m.arch, b, f, {}, 1.0);
    const Tensor cv = t.value(c.var), cs = t.value(c.sigma);
    const Tensor dv = t.value(d.var), ds = t.value(d.sigma);
    for (std::size_t i = 0; i < cv.size(); ++i) {
      EXPECT_GT(cv[i], 0.0);
      EXPECT_NEAR(cs[i] * cs[i], cv[i], 1e-12 * std::max(1.0, cv[i]));
      EXPECT_GT(dv[i], 0.0);
      EXPECT_LT(dv[i], 1.0);
      EXPECT_NEAR(ds[i] * ds[i], dv[i], 1e-12);
    }
  }
}

TEST(Heads, RateZeroDeterministic) {
  Model m = make_model(0.0);
  std::mt19937_64 rng(10);
  const Tensor x = random_input(4, 2, rng);
  auto run = [&]() {
    Tape t;
    BoundParams b = cada::bind(t, m.params);
    Var f = feature_extract(t, m.arch, b, t.constant(x), {});
    return t.value(classifier_forward(t, m.arch, b, f, {}).logits);
  };
  EXPECT_EQ(run(), run());
}

TEST(DropoutPlans, RateZeroAllOnes) {
  std::mt19937_64 rng(1);
  const std::vector<Shape> shapes{{3, 4}, {3, 2}};
  for (const DropoutPlan& p : sample_dropout_plans(0.0, shapes, 5, rng)) {
    ASSERT_EQ(p.layers(), 2u);
    for (std::size_t l = 0; l < 2; ++l)
      for (double v : p.mask(l).values()) EXPECT_EQ(v, 1.0);
  }
}

TEST(DropoutPlans, SeedReproducible) {
  const std::vector<Shape> shapes{{8, 32}};
  std::mt19937_64 a(7), b(7);
  EXPECT_EQ(sample_dropout_plans(0.5, shapes, 4, a), sample_dropout_plans(0.5, shapes, 4, b));
  const auto p = DropoutPlan::sample(0.5, shapes, 42);
  EXPECT_EQ(p, DropoutPlan::sample(0.5, shapes, 42));
  EXPECT_EQ(p.lineage(), 42u);
}

TEST(DropoutPlans, EntriesAndKeptFraction) {
  const std::vector<Shape> shapes{{100, 100}};
  std::mt19937_64 rng(3);
  const auto plans = sample_dropout_plans(0.5, shapes, 1, rng);
  std::size_t kept = 0;
  for (double v : plans[0].mask(0).values()) {
    EXPECT_TRUE(v == 0.0 || v == 2.0);
    kept += v != 0.0;
  }
  EXPECT_NEAR(static_cast<double>(kept) / 1e4, 0.5, 0.03);
  for (double v : DropoutPlan::sample(0.2, shapes, 1).mask(0).values()) {
    EXPECT_TRUE(v == 0.0 || v == 1.0 / 0.8);
  }
}

TEST(DropoutPlans, Errors) {
  std::mt19937_64 rng(1);
  const std::vector<Shape> shapes{{2, 2}};
  EXPECT_THROW(sample_dropout_plans(1.0, shapes, 2, rng), std::invalid_argument);
  EXPECT_THROW(sample_dropout_plans(0.5, shapes, 0, rng), std::invalid_argument);
  EXPECT_THROW(DropoutPlan::sample(-0.1, shapes, 1), std::invalid_argument);
}

TEST(Checkpoint, RoundTripLossless) {
  Model m = make_model(0.5, 21);
  // values that need all 17 digits
  m.params[GroupId::feature].layers[0].weight[0] = 0.1 + 0.2;
  m.params[GroupId::feature].layers[0].bias[0] = -1.0 / 3.0;
  const auto path = temp_file("roundtrip.txt");
  save_checkpoint(path, m.params);
  const ParamGroups back = load_checkpoint(path, m.arch);
  EXPECT_TRUE(back == m.params);
  std::ifstream is(path);
  std::string first;
  std::getline(is, first);
  EXPECT_EQ(first, "cada-checkpoint 1");
}

TEST(Checkpoint, Errors) {
  Model m = make_model();
  const auto path = temp_file("errors.txt");
  save_checkpoint(path, m.params);

  Architecture wider = m.arch;
  wider.classifier_width = 16;
  EXPECT_THROW(load_checkpoint(path, wider), std::runtime_error);

  auto rewrite = [&](const std::string& text) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os << text;
  };
  rewrite("not-a-checkpoint 1\n");
  EXPECT_THROW(load_checkpoint(path, m.arch), std::runtime_error);
  rewrite("cada-checkpoint 2\ntensors 0\n");
  EXPECT_THROW(load_checkpoint(path, m.arch), std::runtime_error);
  rewrite("cada-checkpoint 1\ntensors 0\n");
  EXPECT_THROW(load_checkpoint(path, m.arch), std::runtime_error);
  EXPECT_THROW(load_checkpoint(temp_file("absent.txt"), m.arch), std::runtime_error);
}

TEST(Checkpoint, RejectsExtraAndTruncated) {
  Model m = make_model();
  const auto path = temp_file("extra.txt");
  save_checkpoint(path, m.params);
  std::string text;
  {
    std::ifstream is(path);
    text.assign(std::istreambuf_iterator<char>(is), {});
  }
  std::string extra = text;
  const auto pos = extra.find('\n', extra.find("tensors"));
  const std::string count_line = extra.substr(extra.find("tensors"), pos - extra.find("tensors"));
  const std::size_t count = std::stoul(count_line.substr(8));
  extra.replace(extra.find(count_line), count_line.size(), "tensors " + std::to_string(count + 1));
  extra += "bogus.fc.weight 1 2\n1 2\n";
  {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os << extra;
  }
  EXPECT_THROW(load_checkpoint(path, m.arch), std::runtime_error);
  {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os << text.substr(0, text.size() / 2);
  }
  EXPECT_THROW(load_checkpoint(path, m.arch), std::runtime_error);
}

TEST(Checkpoint, LoadZeroesVelocity) {
  Model m = make_model();
  m.params[GroupId::feature].velocity[0].weight[0] = 5.0;
  const auto path = temp_file("velocity.txt");
  save_checkpoint(path, m.params);
  const ParamGroups back = load_checkpoint(path, m.arch);
  EXPECT_EQ(back[GroupId::feature].velocity[0].weight[0], 0.0);
}
