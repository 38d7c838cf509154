#include "cada/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "cada/evaluation.hpp"
#include "cada/gradcheck_suite.hpp"
#include "cada/trainer.hpp"

namespace cada {

namespace {

constexpr double kGradcheckTolerance = 1e-4;

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
  std::string checkpoint;
  std::string source_csv;
  std::string target_csv;
  std::string prefix;
};

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

std::filesystem::path prepare_out(const Options& o) {
  std::filesystem::path dir = o.out;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
  return dir;
}

TrainConfig resolve_config(const Options& o) {
  TrainConfig cfg = o.config.empty() ? TrainConfig{} : load_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  cfg.validate();
  return cfg;
}

void write_resolved(const std::filesystem::path& dir, const TrainConfig& cfg) {
  write_text(dir / "config.json", config_to_json(cfg).dump(2) + "\n");
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

Model load_model(const TrainConfig& cfg, const DomainPair& data, const std::string& checkpoint) {
  Model m;
  m.arch = architecture_for(cfg, data);
  m.params = load_checkpoint(checkpoint, m.arch);
  return m;
}

int cmd_train(const Options& o, std::ostream& out) {
  const TrainConfig cfg = resolve_config(o);
  const auto dir = prepare_out(o);
  write_resolved(dir, cfg);
  const DomainPair data = make_dataset(cfg.dataset, cfg.seed);
  const TrainResult result = train(cfg, data);
  write_history_csv(result.history, dir / "history.csv");
  save_checkpoint(dir / "checkpoint.txt", result.model.params);
  const MetricsReport report = evaluate(result.model, data, cfg);
  write_metrics(report, dir / "metrics.json");
  if (!o.quiet) {
    out << to_string(cfg.variant) << " seed " << cfg.seed << ": source " << fmt(report.source_accuracy)
        << " target " << fmt(report.target_accuracy) << " d_A " << fmt(report.proxy_a_distance)
        << "\n";
  }
  return 0;
}

int cmd_eval(const Options& o, std::ostream& out) {
  const TrainConfig cfg = resolve_config(o);
  const DomainPair data = make_dataset(cfg.dataset, cfg.seed);
  const Model model = load_model(cfg, data, o.checkpoint);
  const auto dir = prepare_out(o);
  write_resolved(dir, cfg);
  const MetricsReport report = evaluate(model, data, cfg);
  write_metrics(report, dir / "metrics.json");
  if (!o.quiet) out << report.to_json().dump(2) << "\n";
  return 0;
}

int cmd_export(const Options& o, std::ostream& out) {
  const TrainConfig cfg = resolve_config(o);
  const DomainPair data = make_dataset(cfg.dataset, cfg.seed);
  const Model model = load_model(cfg, data, o.checkpoint);
  const auto dir = prepare_out(o);
  write_resolved(dir, cfg);
  export_reports(model, data, cfg, dir);
  if (!o.quiet) out << "wrote reports to " << dir.string() << "\n";
  return 0;
}

int cmd_gen_data(const Options& o, std::ostream& out) {
  const TrainConfig cfg = resolve_config(o);
  if (cfg.dataset.kind == DatasetSpec::Kind::csv) {
    throw std::invalid_argument("gen-data needs a synthetic dataset kind");
  }
  const auto dir = prepare_out(o);
  write_resolved(dir, cfg);
  const DomainPair data = make_dataset(cfg.dataset, cfg.seed);
  save_csv(data.source, dir / "source.csv");
  // Target labels are written for evaluation; loading moves them aside again.
  save_csv(with_labels(data.target, data.target_labels), dir / "target.csv");
  if (!o.quiet) out << "wrote " << data.source.size() << " + " << data.target.size() << " samples\n";
  return 0;
}

Tensor select_columns(const Batch& b, const std::string& prefix) {
  if (prefix.empty()) return b.features;
  std::vector<std::size_t> cols;
  for (std::size_t j = 0; j < b.feature_names.size(); ++j) {
    if (b.feature_names[j].rfind(prefix, 0) == 0) cols.push_back(j);
  }
  if (cols.empty()) throw std::invalid_argument("no feature columns start with '" + prefix + "'");
  Tensor t(Shape{b.size(), cols.size()});
  for (std::size_t i = 0; i < b.size(); ++i)
    for (std::size_t k = 0; k < cols.size(); ++k) t.at(i, k) = b.features.at(i, cols[k]);
  return t;
}

int cmd_adistance(const Options& o, std::ostream& out) {
  const TrainConfig cfg = resolve_config(o);
  const Tensor s = select_columns(load_csv(o.source_csv), o.prefix);
  const Tensor t = select_columns(load_csv(o.target_csv), o.prefix);
  std::mt19937_64 rng = make_stream(cfg.seed, Stream::eval);
  const ProxyADistance pad = proxy_a_distance(s, t, rng);
  nlohmann::json j{{"probe_error", pad.error}, {"proxy_a_distance", pad.distance}, {"seed", cfg.seed}};
  if (!o.out.empty()) {
    const auto dir = prepare_out(o);
    write_resolved(dir, cfg);
    write_text(dir / "adistance.json", j.dump(2) + "\n");
  }
  if (!o.quiet) out << "d_A " << fmt(pad.distance) << " (probe error " << fmt(pad.error) << ")\n";
  return 0;
}

int cmd_gradcheck(const Options& o, std::ostream& out) {
  const std::uint64_t seed = o.seed.value_or(0);
  std::vector<GradCheckEntry> entries = op_gradchecks(seed);
  entries.push_back(fused_gradcheck(Variant::cada_a, seed));
  entries.push_back(fused_gradcheck(Variant::cada_p, seed));
  bool ok = true;
  for (const auto& e : entries) {
    const bool pass = e.max_rel_error < kGradcheckTolerance;
    ok = ok && pass;
    char line[128];
    std::snprintf(line, sizeof line, "%-22s %6zu coords  max rel err %.3e  %s\n", e.name.c_str(),
                  e.coordinates, e.max_rel_error, pass ? "ok" : "FAIL");
    if (!o.quiet || !pass) out << line;
  }
  if (!o.out.empty()) {
    const auto dir = prepare_out(o);
    write_resolved(dir, resolve_config(o));
    nlohmann::json j = nlohmann::json::array();
    for (const auto& e : entries) {
      j.push_back({{"name", e.name}, {"max_rel_error", e.max_rel_error}, {"coordinates", e.coordinates}});
    }
    write_text(dir / "gradcheck.json", j.dump(2) + "\n");
  }
  return ok ? 0 : 1;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"certainty-attention domain adaptation", "cada"};
  app.require_subcommand(1);
  Options o;

  auto common = [&o](CLI::App* sub, bool needs_config, bool needs_out) {
    auto* c = sub->add_option("--config", o.config, "training config (JSON)");
    if (needs_config) c->required()->check(CLI::ExistingFile);
    auto* d = sub->add_option("--out", o.out, "output directory");
    if (needs_out) d->required();
    sub->add_option("--seed", o.seed, "seed override");
    sub->add_flag("--quiet", o.quiet, "suppress stdout");
  };

  CLI::App* train_cmd = app.add_subcommand("train", "train a model and write history, metrics, checkpoint");
  common(train_cmd, true, true);
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  common(eval_cmd, true, true);
  eval_cmd->add_option("--checkpoint", o.checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  CLI::App* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  common(grad_cmd, false, false);
  CLI::App* export_cmd = app.add_subcommand("export-attention", "write attention, uncertainty and embedding reports");
  common(export_cmd, true, true);
  export_cmd->add_option("--checkpoint", o.checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  CLI::App* ad_cmd = app.add_subcommand("adistance", "proxy A-distance between two embedding CSVs");
  common(ad_cmd, false, false);
  ad_cmd->add_option("source", o.source_csv, "source embeddings CSV")->required()->check(CLI::ExistingFile);
  ad_cmd->add_option("target", o.target_csv, "target embeddings CSV")->required()->check(CLI::ExistingFile);
  ad_cmd->add_option("--columns", o.prefix, "use only feature columns with this name prefix");
  CLI::App* gen_cmd = app.add_subcommand("gen-data", "write a synthetic dataset as CSV");
  common(gen_cmd, false, true);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "cada: " << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(o, out);
    if (eval_cmd->parsed()) return cmd_eval(o, out);
    if (grad_cmd->parsed()) return cmd_gradcheck(o, out);
    if (export_cmd->parsed()) return cmd_export(o, out);
    if (ad_cmd->parsed()) return cmd_adistance(o, out);
    if (gen_cmd->parsed()) return cmd_gen_data(o, out);
  } catch (const std::exception& e) {
    err << "cada: " << e.what() << "\n";
    return 1;
  }
  err << app.help();
  return 2;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace cada
