#include "cada/trainer.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>

#include "cada/attention.hpp"
#include "cada/evaluation.hpp"
#include "cada/uncertainty.hpp"

namespace cada {

double total_objective(double l_cy, double l_cv, double l_dy, double l_dv, double lambda) {
  return l_cy + l_cv - lambda * (l_dy + l_dv);
}

StepNoise sample_step_noise(const Architecture& arch, const TrainConfig& cfg, std::size_t n_source,
                            std::size_t n_target, std::mt19937_64& step_rng,
                            std::mt19937_64& attention_rng) {
  const double rate = arch.dropout;
  const std::size_t T = cfg.mc_samples;
  StepNoise s;
  s.feature_source = DropoutPlan::sample(rate, feature_mask_shapes(arch, n_source), step_rng());
  s.feature_target = DropoutPlan::sample(rate, feature_mask_shapes(arch, n_target), step_rng());
  s.classifier = DropoutPlan::sample(rate, classifier_mask_shapes(arch, n_source), step_rng());
  s.discriminator_source =
      DropoutPlan::sample(rate, discriminator_mask_shapes(arch, n_source), step_rng());
  s.discriminator_target =
      DropoutPlan::sample(rate, discriminator_mask_shapes(arch, n_target), step_rng());
  s.classifier_noise = sample_logit_noise(T, n_source, arch.num_classes, step_rng);
  s.discriminator_noise_source = sample_logit_noise(T, n_source, 2, step_rng);
  s.discriminator_noise_target = sample_logit_noise(T, n_target, 2, step_rng);
  if (cfg.variant == Variant::cada_p) {
    s.attention_plans =
        sample_dropout_plans(rate, discriminator_mask_shapes(arch, n_source), T, attention_rng);
  }
  return s;
}

AttentionFn attention_for(const Model& model, const TrainConfig& cfg, const StepNoise& noise) {
  switch (cfg.variant) {
    case Variant::cada_a:
      return [&model, &cfg, &noise](const Tensor& f) {
        return cada_a_attention(model, f, noise.discriminator_source, cfg.mask_constant).w;
      };
    case Variant::cada_p:
      return [&model, &cfg, &noise](const Tensor& f) {
        return cada_p_attention(model, f, noise.attention_plans, cfg.mask_constant,
                                cfg.predictive_mode)
            .w;
      };
    default:
      return {};
  }
}

FusedForward fused_forward(Tape& tape, const Model& model, const Tensor& source_x,
                           std::span<const int> source_y, const Tensor& target_x,
                           const StepNoise& noise, double lambda, const AttentionFn& attention) {
  const std::size_t ns = source_x.rows();
  const std::size_t nt = target_x.rows();
  if (source_x.rank() != 2 || target_x.rank() != 2 || ns == 0 || nt == 0) {
    throw std::invalid_argument("train_step: empty batch");
  }
  if (source_y.size() != ns) throw std::invalid_argument("train_step: label count mismatch");
  const Architecture& arch = model.arch;

  FusedForward out;
  out.bound = cada::bind(tape, model.params);
  out.source_features =
      feature_extract(tape, arch, out.bound, tape.constant(source_x), noise.feature_source);
  out.target_features =
      feature_extract(tape, arch, out.bound, tape.constant(target_x), noise.feature_target);

  out.classifier_input = out.source_features;
  if (attention) {
    out.attention = attention(tape.value(out.source_features));
    if (!out.attention.empty()) {
      out.classifier_input = apply_attention(tape, out.source_features, out.attention);
    }
  }

  HeadOutput cls = classifier_forward(tape, arch, out.bound, out.classifier_input, noise.classifier);
  out.l_cy = tape.cross_entropy(cls.logits, source_y);
  out.l_cv = aleatoric_loss(tape, cls.logits, cls.sigma, source_y, noise.classifier_noise);

  HeadOutput ds = discriminator_forward(tape, arch, out.bound, out.source_features,
                                        noise.discriminator_source, lambda);
  HeadOutput dt = discriminator_forward(tape, arch, out.bound, out.target_features,
                                        noise.discriminator_target, lambda);
  const std::vector<int> zeros(ns, kSourceDomain);
  const std::vector<int> ones(nt, kTargetDomain);
  const double ws = static_cast<double>(ns) / static_cast<double>(ns + nt);
  const double wt = static_cast<double>(nt) / static_cast<double>(ns + nt);
  out.l_dy = tape.add(tape.scale(tape.cross_entropy(ds.logits, zeros), ws),
                      tape.scale(tape.cross_entropy(dt.logits, ones), wt));
  out.l_dv = tape.add(
      tape.scale(aleatoric_loss(tape, ds.logits, ds.sigma, zeros, noise.discriminator_noise_source), ws),
      tape.scale(aleatoric_loss(tape, dt.logits, dt.sigma, ones, noise.discriminator_noise_target), wt));

  out.total = tape.add(tape.add(out.l_cy, out.l_cv), tape.add(out.l_dy, out.l_dv));
  return out;
}

namespace {

void sgd_update(Tensor& param, Tensor& velocity, const Tensor& grad, double lr, double momentum) {
  for (std::size_t i = 0; i < param.size(); ++i) {
    velocity[i] = momentum * velocity[i] + grad[i];
    param[i] -= lr * velocity[i];
  }
}

}  // namespace

StepRecord train_step(Model& model, const Tensor& source_x, std::span<const int> source_y,
                      const Tensor& target_x, const TrainConfig& cfg, double lambda,
                      const StepNoise& noise) {
  const double strength = cfg.variant == Variant::source_only ? 0.0 : lambda;
  Tape tape;
  FusedForward fwd = fused_forward(tape, model, source_x, source_y, target_x, noise, strength,
                                   attention_for(model, cfg, noise));
  tape.backward(fwd.total);
  const Gradients grads = collect_gradients(tape, fwd.bound, model.params);

  for (GroupId id : kAllGroups) {
    if (cfg.variant == Variant::source_only && !is_classifier_side(id)) continue;
    ParamGroup& g = model.params[id];
    const auto& gg = grads[static_cast<std::size_t>(id)];
    for (std::size_t l = 0; l < g.layers.size(); ++l) {
      sgd_update(g.layers[l].weight, g.velocity[l].weight, gg[l].weight, cfg.learning_rate,
                 cfg.momentum);
      sgd_update(g.layers[l].bias, g.velocity[l].bias, gg[l].bias, cfg.learning_rate, cfg.momentum);
    }
  }

  StepRecord r;
  r.l_cy = tape.value(fwd.l_cy).item();
  r.l_cv = tape.value(fwd.l_cv).item();
  r.l_dy = tape.value(fwd.l_dy).item();
  r.l_dv = tape.value(fwd.l_dv).item();
  r.lambda = strength;
  r.objective = total_objective(r.l_cy, r.l_cv, r.l_dy, r.l_dv, r.lambda);
  return r;
}

Model initial_model(const TrainConfig& cfg, const DomainPair& data) {
  Model m;
  m.arch = architecture_for(cfg, data);
  std::mt19937_64 rng = make_stream(cfg.seed, Stream::init);
  m.params = ParamGroups(m.arch, rng);
  return m;
}

namespace {

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const DomainPair& data) {
  cfg.validate();
  const Batch& source = data.source;
  const Batch& target = data.target;
  if (source.size() == 0 || target.size() == 0) throw std::invalid_argument("train: empty dataset");
  if (!source.fully_labeled()) throw std::invalid_argument("train: source samples must be labeled");

  TrainResult result;
  result.model = initial_model(cfg, data);
  Model& model = result.model;
  for (int y : source.labels) {
    if (static_cast<std::size_t>(y) >= model.arch.num_classes) {
      throw std::invalid_argument("train: source label exceeds class count");
    }
  }

  std::mt19937_64 shuffle_rng = make_stream(cfg.seed, Stream::shuffle);
  std::mt19937_64 step_rng = make_stream(cfg.seed, Stream::step);
  std::mt19937_64 attention_rng = make_stream(cfg.seed, Stream::attention);
  std::mt19937_64 eval_rng = make_stream(cfg.seed, Stream::eval);

  const std::size_t ns = source.size(), nt = target.size();
  const std::size_t steps_per_epoch = (ns + cfg.batch_size - 1) / cfg.batch_size;
  const double total_steps = static_cast<double>(steps_per_epoch * cfg.epochs);
  std::vector<std::size_t> perm_s(ns), perm_t(nt);
  std::iota(perm_s.begin(), perm_s.end(), 0);
  std::iota(perm_t.begin(), perm_t.end(), 0);

  std::size_t global_step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(perm_s.begin(), perm_s.end(), shuffle_rng);
    std::shuffle(perm_t.begin(), perm_t.end(), shuffle_rng);
    EpochRecord rec;
    rec.epoch = epoch + 1;
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      const std::size_t begin = s * cfg.batch_size;
      const std::size_t end = std::min(ns, begin + cfg.batch_size);
      std::vector<std::size_t> idx_s(perm_s.begin() + static_cast<std::ptrdiff_t>(begin),
                                     perm_s.begin() + static_cast<std::ptrdiff_t>(end));
      std::vector<std::size_t> idx_t(idx_s.size());
      for (std::size_t k = 0; k < idx_t.size(); ++k) idx_t[k] = perm_t[(begin + k) % nt];
      std::vector<int> ys;
      for (std::size_t i : idx_s) ys.push_back(source.labels[i]);
      const Tensor xs = gather_rows(source.features, idx_s);
      const Tensor xt = gather_rows(target.features, idx_t);

      const double lambda = lambda_schedule(static_cast<double>(global_step) / total_steps, cfg.lambda);
      const StepNoise noise =
          sample_step_noise(model.arch, cfg, xs.rows(), xt.rows(), step_rng, attention_rng);
      StepRecord r;
      try {
        r = train_step(model, xs, ys, xt, cfg, lambda, noise);
      } catch (const std::domain_error& e) {
        throw std::runtime_error("epoch " + std::to_string(epoch + 1) + " step " +
                                 std::to_string(s + 1) + ": " + e.what());
      }
      rec.lambda += r.lambda;
      rec.l_cy += r.l_cy;
      rec.l_cv += r.l_cv;
      rec.l_dy += r.l_dy;
      rec.l_dv += r.l_dv;
      ++global_step;
    }
    const double k = static_cast<double>(steps_per_epoch);
    rec.lambda /= k;
    rec.l_cy /= k;
    rec.l_cv /= k;
    rec.l_dy /= k;
    rec.l_dv /= k;
    rec.objective = total_objective(rec.l_cy, rec.l_cv, rec.l_dy, rec.l_dv, rec.lambda);

    rec.source_accuracy = accuracy(model, source.features, source.labels);
    if (!data.target_labels.empty()) {
      rec.target_accuracy = accuracy(model, target.features, data.target_labels.for_evaluation());
    }
    rec.domain_accuracy = domain_accuracy(model, source.features, target.features);
    const Tensor f_all = concat_rows(extract_features(model, source.features),
                                     extract_features(model, target.features));
    const UncertaintyEstimate u =
        predictive_uncertainty(model, f_all, cfg.mc_samples, eval_rng, cfg.predictive_mode);
    rec.mean_aleatoric = mean_of(u.aleatoric);
    rec.mean_predictive = mean_of(u.predictive);
    result.history.epochs.push_back(rec);
  }
  return result;
}

TrainResult train(const TrainConfig& cfg, const Batch& source, const Batch& target,
                  const HiddenLabels& target_labels) {
  DomainPair data{source, target, target_labels};
  return train(cfg, data);
}

void write_history_csv(const TrainHistory& history, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "epoch,lambda,L_cy,L_cv,L_dy,L_dv,J,source_accuracy,target_accuracy,domain_accuracy,"
        "mean_aleatoric,mean_predictive\n";
  char buf[32];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    os << ',' << buf;
  };
  for (const EpochRecord& r : history.epochs) {
    os << r.epoch;
    for (double v : {r.lambda, r.l_cy, r.l_cv, r.l_dy, r.l_dv, r.objective, r.source_accuracy,
                     r.target_accuracy, r.domain_accuracy, r.mean_aleatoric, r.mean_predictive}) {
      put(v);
    }
    os << '\n';
  }
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace cada
