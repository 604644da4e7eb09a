// spngp command-line front end: train / predict / eval / sweep / validate.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "spngp/spngp.hpp"

namespace fs = std::filesystem;

namespace {

struct GlobalOpts {
  std::string config_path;
  std::optional<std::uint64_t> seed_override;
  int jobs = 1;
  bool verbose = false;
};

spngp::ExperimentConfig load(const GlobalOpts& g) {
  spngp::ExperimentConfig cfg = spngp::load_config(g.config_path);
  if (g.seed_override) cfg.seed = *g.seed_override;
  return cfg;
}

void write_file(const fs::path& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw spngp::ParseError("cannot write " + path.string());
  out << contents;
}

void print_timings(const spngp::PhaseTimings& t) {
  for (const auto& [phase, s] : t.seconds)
    std::cout << "  " << phase << ": " << s << " s\n";
  std::cout << "  total: " << t.total() << " s\n";
}

int cmd_train(const GlobalOpts& g) {
  const spngp::ExperimentConfig cfg = load(g);
  const spngp::Dataset data = spngp::load_dataset(cfg);
  spngp::TrainResult res = spngp::train_model(cfg, data, cfg.seed, g.jobs,
                                              g.verbose ? &std::cerr : nullptr);
  fs::create_directories(cfg.output_dir);
  const fs::path model_path = fs::path(cfg.output_dir) / "model.json";
  const fs::path report_path = fs::path(cfg.output_dir) / "train_report.json";
  spngp::save_model(res.model, model_path.string(), cfg.fingerprint);
  write_file(report_path, res.report.dump(1) + "\n");
  std::cout << "model: " << model_path.string() << "\n"
            << "report: " << report_path.string() << "\n"
            << "log_evidence: " << res.report["log_evidence"].get<double>() << "\n"
            << "phase wall time:\n";
  print_timings(res.timings);
  return 0;
}

int cmd_predict(const GlobalOpts& g, const std::string& model_path,
                const std::string& query_path, const std::string& out_path) {
  spngp::SpnGp model = spngp::load_model(model_path, g.jobs);
  const Eigen::MatrixXd X = spngp::load_query_csv(query_path);
  if (X.rows() > 0 && X.cols() != model.meta.input_dim)
    throw spngp::ArgumentError("predict: query has " + std::to_string(X.cols()) +
                               " columns, model expects " +
                               std::to_string(model.meta.input_dim));
  if (out_path.empty() || out_path == "-") {
    spngp::write_predictions_csv(model, X, std::cout);
  } else {
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw spngp::ParseError("cannot write " + out_path);
    spngp::write_predictions_csv(model, X, out);
    std::cout << "predictions: " << out_path << " (" << X.rows() << " rows)\n";
  }
  return 0;
}

int cmd_eval(const GlobalOpts& g) {
  const spngp::ExperimentConfig cfg = load(g);
  spngp::EvalReport rep = spngp::run_eval(cfg, g.jobs, g.verbose ? &std::cerr : nullptr);
  fs::create_directories(cfg.output_dir);
  const std::string header = "config_fingerprint: " + cfg.fingerprint +
                             "\nlibrary_version: " + spngp::kLibraryVersion + "\n";
  write_file(fs::path(cfg.output_dir) / "eval_report.txt", header + rep.to_text());
  write_file(fs::path(cfg.output_dir) / "eval_report.tsv",
             "# config_fingerprint=" + cfg.fingerprint +
                 " library_version=" + spngp::kLibraryVersion + "\n" + rep.to_tsv());
  std::cout << rep.to_text() << "phase wall time:\n";
  print_timings(rep.timings);
  return 0;
}

int cmd_sweep(const GlobalOpts& g) {
  const spngp::ExperimentConfig cfg = load(g);
  const std::vector<spngp::SweepRow> rows = spngp::run_sweep(cfg, g.jobs);
  fs::create_directories(cfg.output_dir);
  const std::string csv = "# config_fingerprint=" + cfg.fingerprint +
                          " library_version=" + spngp::kLibraryVersion + "\n" +
                          spngp::sweep_to_csv(rows);
  write_file(fs::path(cfg.output_dir) / "sweep.csv", csv);
  std::cout << csv;
  return 0;
}

int cmd_validate(const GlobalOpts& g, const std::string& model_path) {
  const spngp::SpnGp model = spngp::load_model(model_path, g.jobs);
  const std::vector<spngp::Violation> violations = spngp::validate(model);
  if (violations.empty()) {
    std::cout << "valid: " << model.nodes.size() << " nodes, "
              << model.leaves.size() << " leaves\n";
    return 0;
  }
  for (const auto& v : violations)
    std::cout << "node " << v.node_id << " [" << v.rule << "] " << v.detail << "\n";
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sum-product networks with Gaussian-process leaves"};
  app.require_subcommand(1);

  GlobalOpts g;
  std::uint64_t seed_val = 0;
  auto add_common = [&](CLI::App* sub, bool needs_config) {
    if (needs_config)
      sub->add_option("--config", g.config_path, "experiment config (JSON)")
          ->required();
    sub->add_option("--jobs", g.jobs, "parallel leaf fits/optimizations");
    sub->add_flag("--verbose", g.verbose, "verbose progress and optimizer trace");
    sub->add_option("--seed", seed_val, "override the config seed")
        ->each([&](const std::string&) { g.seed_override = seed_val; });
  };

  CLI::App* train = app.add_subcommand("train", "build, fit and persist a model");
  add_common(train, true);

  CLI::App* predict = app.add_subcommand("predict", "predict from a model file");
  std::string model_path, query_path, out_path;
  predict->add_option("--model", model_path, "model file")->required();
  predict->add_option("--query", query_path, "feature CSV")->required();
  predict->add_option("--out", out_path, "output CSV (default stdout)");
  add_common(predict, false);

  CLI::App* eval = app.add_subcommand("eval", "run the benchmark protocol");
  add_common(eval, true);

  CLI::App* sweep = app.add_subcommand("sweep", "RMSE vs points-per-expert curve");
  add_common(sweep, true);

  CLI::App* validate = app.add_subcommand("validate", "check a model file");
  std::string validate_path;
  validate->add_option("--model", validate_path, "model file")->required();
  add_common(validate, false);

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(g);
    if (predict->parsed()) return cmd_predict(g, model_path, query_path, out_path);
    if (eval->parsed()) return cmd_eval(g);
    if (sweep->parsed()) return cmd_sweep(g);
    if (validate->parsed()) return cmd_validate(g, validate_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
