#include "cada/gradcheck_suite.hpp"

#include <algorithm>
#include <random>

#include "cada/gradcheck.hpp"
#include "cada/trainer.hpp"

namespace cada {

namespace {

Tensor uniform(Shape shape, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = dist(rng);
  return t;
}

// Magnitudes in [lo, hi] with random sign; keeps relu inputs off the kink.
Tensor signed_away_from_zero(Shape shape, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mag(lo, hi);
  std::bernoulli_distribution sign(0.5);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = sign(rng) ? mag(rng) : -mag(rng);
  return t;
}

// Weighted sum of an op's output, so every output coordinate contributes a
// distinct slope.
Var contract(Tape& tape, Var y, const Tensor& weights) {
  return tape.sum(tape.mul(y, tape.constant(weights)));
}

}  // namespace

std::vector<GradCheckEntry> op_gradchecks(std::uint64_t seed, double h) {
  std::mt19937_64 rng(seed);
  std::vector<GradCheckEntry> out;
  auto record = [&](std::string name, const ScalarFunction& f, const Tensor& x) {
    const GradCheckResult r = finite_diff_check(f, x, h);
    out.push_back({std::move(name), r.max_rel_error, x.size()});
  };

  const std::size_t n = 4, d = 3;
  const Tensor r_nd = uniform({n, d}, -1.0, 1.0, rng);
  const Tensor x = uniform({n, d}, -1.0, 1.0, rng);
  const Tensor b = uniform({n, d}, -1.0, 1.0, rng);
  const Tensor row = uniform({1, d}, -1.0, 1.0, rng);

  record("add", [&](Tape& t, Var v) { return contract(t, t.add(v, t.constant(b)), r_nd); }, x);
  record("add_broadcast",
         [&](Tape& t, Var v) { return contract(t, t.add(t.constant(b), v), r_nd); }, row);
  record("mul", [&](Tape& t, Var v) { return contract(t, t.mul(v, t.constant(b)), r_nd); }, x);
  record("mul_broadcast",
         [&](Tape& t, Var v) { return contract(t, t.mul(t.constant(b), v), r_nd); }, row);
  {
    const Tensor right = uniform({d, 2}, -1.0, 1.0, rng);
    const Tensor r_n2 = uniform({n, 2}, -1.0, 1.0, rng);
    record("matmul_left",
           [&](Tape& t, Var v) { return contract(t, t.matmul(v, t.constant(right)), r_n2); }, x);
    record("matmul_right",
           [&](Tape& t, Var v) { return contract(t, t.matmul(t.constant(x), v), r_n2); }, right);
  }
  record("relu", [&](Tape& t, Var v) { return contract(t, t.relu(v), r_nd); },
         signed_away_from_zero({n, d}, 0.05, 2.0, rng));
  record("sigmoid", [&](Tape& t, Var v) { return contract(t, t.sigmoid(v), r_nd); },
         uniform({n, d}, -4.0, 4.0, rng));
  record("exp", [&](Tape& t, Var v) { return contract(t, t.exp(v), r_nd); }, x);
  record("log", [&](Tape& t, Var v) { return contract(t, t.log(v), r_nd); },
         uniform({n, d}, 0.2, 3.0, rng));
  record("sum", [&](Tape& t, Var v) { return t.sum(t.mul(v, v)); }, x);
  {
    const Tensor r_d = uniform({d}, -1.0, 1.0, rng);
    const Tensor r_n = uniform({n}, -1.0, 1.0, rng);
    record("sum_axis0", [&](Tape& t, Var v) { return contract(t, t.sum(v, 0), r_d); }, x);
    record("sum_axis1", [&](Tape& t, Var v) { return contract(t, t.sum(v, 1), r_n); }, x);
  }
  record("mean", [&](Tape& t, Var v) { return t.mean(t.mul(v, t.constant(b))); }, x);
  record("softmax_axis1", [&](Tape& t, Var v) { return contract(t, t.softmax(v, 1), r_nd); },
         uniform({n, d}, -3.0, 3.0, rng));
  record("softmax_axis0", [&](Tape& t, Var v) { return contract(t, t.softmax(v, 0), r_nd); },
         uniform({n, d}, -3.0, 3.0, rng));
  {
    std::vector<int> labels(n);
    std::uniform_int_distribution<int> pick(0, static_cast<int>(d) - 1);
    for (int& y : labels) y = pick(rng);
    record("cross_entropy", [&](Tape& t, Var v) { return t.cross_entropy(v, labels); },
           uniform({n, d}, -3.0, 3.0, rng));
  }
  {
    const Tensor noise = uniform({n, d}, -2.0, 2.0, rng);
    const Tensor scale = uniform({n, 1}, 0.1, 1.0, rng);
    record("noise_inject_mean",
           [&](Tape& t, Var v) { return contract(t, t.noise_inject(v, t.constant(scale), noise), r_nd); },
           x);
    record("noise_inject_scale",
           [&](Tape& t, Var v) { return contract(t, t.noise_inject(t.constant(x), v, noise), r_nd); },
           scale);
  }
  {
    Tensor mask({n, d});
    std::bernoulli_distribution keep(0.5);
    for (double& m : mask.values()) m = keep(rng) ? 2.0 : 0.0;
    record("dropout", [&](Tape& t, Var v) { return contract(t, t.dropout(v, mask), r_nd); }, x);
  }
  {
    // The reversed backward is not the derivative of the identity forward;
    // compare against -strength times the numeric slope instead.
    const double strength = 0.7;
    Tape tape;
    Var v = tape.leaf(x);
    tape.backward(contract(tape, tape.gradient_reversal(v, strength), r_nd));
    const Tensor analytic = tape.grad(v);
    const Tensor numeric = numeric_gradient(
        [&](const Tensor& p) {
          Tape t;
          return t.value(contract(t, t.gradient_reversal(t.constant(p), strength), r_nd)).item();
        },
        x, h);
    double worst = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      worst = std::max(worst, relative_error(analytic[i], -strength * numeric[i]));
    }
    out.push_back({"gradient_reversal", worst, x.size()});
  }
  return out;
}

GradCheckEntry fused_gradcheck(Variant variant, std::uint64_t seed, double lambda, double h) {
  TrainConfig cfg;
  cfg.variant = variant;
  cfg.seed = seed;
  cfg.mc_samples = 4;
  cfg.dataset.n = 16;
  const DomainPair data = make_dataset(cfg.dataset, seed);
  const std::size_t ns = 6, nt = 6;
  const Tensor xs = slice_rows(data.source.features, 0, ns);
  const Tensor xt = slice_rows(data.target.features, 0, nt);
  const std::vector<int> ys(data.source.labels.begin(), data.source.labels.begin() + ns);

  Model model = initial_model(cfg, data);
  std::mt19937_64 step_rng = make_stream(seed, Stream::step);
  std::mt19937_64 attention_rng = make_stream(seed, Stream::attention);
  const StepNoise noise = sample_step_noise(model.arch, cfg, ns, nt, step_rng, attention_rng);

  // Attention evaluated once at the base point, then held fixed.
  Tensor w;
  {
    Tape tape;
    BoundParams bound = cada::bind(tape, model.params, kAllGroups, false);
    Var f = feature_extract(tape, model.arch, bound, tape.constant(xs), noise.feature_source);
    AttentionFn fn = attention_for(model, cfg, noise);
    if (fn) w = fn(tape.value(f));
  }
  AttentionFn frozen;
  if (!w.empty()) frozen = [&w](const Tensor&) { return w; };

  Tape tape;
  FusedForward fwd = fused_forward(tape, model, xs, ys, xt, noise, lambda, frozen);
  tape.backward(fwd.total);
  const Gradients grads = collect_gradients(tape, fwd.bound, model.params);

  auto objective = [&](const Model& m, bool classifier_side) {
    Tape t;
    FusedForward f = fused_forward(t, m, xs, ys, xt, noise, lambda, frozen);
    const double c = t.value(f.l_cy).item() + t.value(f.l_cv).item();
    const double dsum = t.value(f.l_dy).item() + t.value(f.l_dv).item();
    return classifier_side ? c - lambda * dsum : dsum;
  };

  GradCheckEntry entry{std::string("fused_") + std::string(to_string(variant)), 0.0, 0};
  Model probe = model;
  for (GroupId id : kAllGroups) {
    const bool cls = is_classifier_side(id);
    auto& layers = probe.params[id].layers;
    const auto& gg = grads[static_cast<std::size_t>(id)];
    for (std::size_t l = 0; l < layers.size(); ++l) {
      for (int which = 0; which < 2; ++which) {
        Tensor& param = which == 0 ? layers[l].weight : layers[l].bias;
        const Tensor& analytic = which == 0 ? gg[l].weight : gg[l].bias;
        for (std::size_t i = 0; i < param.size(); ++i) {
          const double orig = param[i];
          param[i] = orig + h;
          const double up = objective(probe, cls);
          param[i] = orig - h;
          const double down = objective(probe, cls);
          param[i] = orig;
          const double numeric = (up - down) / (2.0 * h);
          entry.max_rel_error = std::max(entry.max_rel_error, relative_error(analytic[i], numeric));
          ++entry.coordinates;
        }
      }
    }
  }
  return entry;
}

}  // namespace cada
