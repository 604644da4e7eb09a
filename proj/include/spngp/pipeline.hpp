#pragma once

#include <Eigen/Dense>
#include <chrono>
#include <cstdlib>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "spngp/baselines.hpp"
#include "spngp/config.hpp"
#include "spngp/data.hpp"
#include "spngp/graph.hpp"
#include "spngp/hyperopt.hpp"
#include "spngp/model_io.hpp"
#include "spngp/structure.hpp"

namespace spngp {

struct PhaseTimings {
  std::vector<std::pair<std::string, double>> seconds;

  void add(const std::string& phase, double s) { seconds.emplace_back(phase, s); }
  double total() const {
    double t = 0.0;
    for (const auto& [name, s] : seconds) t += s;
    return t;
  }
};

namespace detail {

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double lap() {
    const auto now = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(now - start_).count();
    start_ = now;
    return s;
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

inline std::string fmt(double v, int precision = 6) {
  std::ostringstream ss;
  ss << std::setprecision(precision) << v;
  return ss.str();
}

inline std::string fmt_full(double v) {
  std::ostringstream ss;
  ss << std::setprecision(17) << v;
  return ss.str();
}

}  // namespace detail

struct TrainResult {
  SpnGp model;
  nlohmann::json report;  // deterministic; wall times live in `timings`
  PhaseTimings timings;
};

// The full training pipeline: region graph -> SPN construction -> optional
// overlap -> leaf fits -> optional hyperparameter optimization -> posterior
// update. The report captures evidence, complexity and per-leaf parameters.
inline TrainResult train_model(const ExperimentConfig& cfg, const Dataset& data,
                               std::uint64_t seed, int jobs = 1,
                               std::ostream* trace = nullptr) {
  TrainResult res;
  detail::Stopwatch watch;

  StructureConfig scfg = cfg.structure;
  scfg.rng_seed = seed;
  const RegionGraph graph = build_region_graph(data.X, scfg);
  res.timings.add("region_graph", watch.lap());

  res.model = build_spn(graph, data, scfg);
  res.timings.add("build_spn", watch.lap());

  if (scfg.overlap != OverlapMode::None) {
    assign_overlap(res.model, data, scfg);
    res.timings.add("assign_overlap", watch.lap());
  }

  res.model.fit_all_leaves(jobs);
  res.timings.add("fit_leaves", watch.lap());

  nlohmann::json opt_report;
  if (cfg.optimizer) {
    OptimizerConfig ocfg = *cfg.optimizer;
    ocfg.rng_seed = seed;
    ocfg.trace = trace;
    if (scfg.fixed_noise_std) ocfg.fix_noise = true;
    const OptResult r = optimize_model(res.model, ocfg, jobs);
    opt_report["initial_log_evidence"] = r.initial_objective;
    opt_report["final_log_evidence"] = r.final_objective;
    res.timings.add("optimize", watch.lap());
  }

  const double evidence = log_evidence(res.model);
  posterior_update(res.model);
  res.timings.add("posterior_update", watch.lap());

  const ComplexityReport comp = complexity_report(res.model);
  nlohmann::json rep;
  rep["library_version"] = kLibraryVersion;
  rep["config_fingerprint"] = cfg.fingerprint;
  rep["seed"] = seed;
  rep["n_rows"] = static_cast<int>(data.n());
  rep["input_dim"] = data.dx();
  rep["output_dim"] = data.dy();
  rep["dataset_fingerprint"] = to_hex(data.fingerprint);
  rep["log_evidence"] = evidence;
  if (!opt_report.is_null()) rep["optimizer"] = opt_report;
  rep["violations"] = static_cast<int>(validate(res.model).size());
  nlohmann::json jc;
  jc["actual_cost"] = comp.actual_cost;
  jc["uniform_cost"] = comp.uniform_cost;
  jc["paper_bound"] = comp.paper_bound;
  jc["depth_exponent"] = comp.depth_exponent;
  jc["max_block"] = static_cast<int>(comp.max_block);
  jc["total_rows"] = static_cast<int>(comp.total_rows);
  jc["bound_met"] = comp.bound_met;
  jc["leaf_sizes"] = comp.leaf_sizes;
  rep["complexity"] = std::move(jc);
  nlohmann::json leaves = nlohmann::json::array();
  for (const Node& nd : res.model.nodes) {
    if (nd.kind != NodeKind::Leaf) continue;
    const GpLeaf& leaf = res.model.leaves[static_cast<std::size_t>(nd.leaf)];
    nlohmann::json lj;
    lj["node"] = nd.id;
    lj["region_id"] = leaf.region_id;
    lj["output"] = nd.out_scope[0];
    lj["kernel"] = family_name(leaf.kernel.family);
    lj["rows"] = static_cast<int>(leaf.rows());
    lj["overlap_rows"] = leaf.overlap_count;
    lj["sigma_e"] = leaf.noise_std();
    lj["log_evidence"] = leaf.log_evidence();
    leaves.push_back(std::move(lj));
  }
  rep["leaves"] = std::move(leaves);
  res.report = std::move(rep);
  return res;
}

// Stacks the per-output predictive means into an N x D_Y matrix.
inline Eigen::MatrixXd predicted_means(const std::vector<PredictiveMoments>& pm) {
  Eigen::MatrixXd out(pm.empty() ? 0 : pm[0].mean.size(),
                      static_cast<Eigen::Index>(pm.size()));
  for (std::size_t j = 0; j < pm.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = pm[j].mean;
  return out;
}

// Leaf node chosen by following the maximum-weight child at every sum node
// and the region containing x at every split; one per output variable.
inline std::vector<int> max_posterior_leaves(const SpnGp& m, const Eigen::VectorXd& x) {
  const Node& root = m.node(m.root);
  Eigen::VectorXd xr = x;
  for (Eigen::Index d = 0; d < xr.size(); ++d)
    xr[d] = std::clamp(xr[d], root.region.lower[d], root.region.upper[d]);
  std::vector<int> out(root.out_scope.size(), -1);
  auto walk = [&](auto&& self, int id) -> void {
    const Node& nd = m.node(id);
    switch (nd.kind) {
      case NodeKind::Leaf: {
        const auto pos = std::lower_bound(root.out_scope.begin(), root.out_scope.end(),
                                          nd.out_scope[0]) -
                         root.out_scope.begin();
        out[static_cast<std::size_t>(pos)] = nd.id;
        break;
      }
      case NodeKind::Sum: {
        std::size_t best = 0;
        for (std::size_t i = 1; i < nd.log_weights.size(); ++i)
          if (nd.log_weights[i] > nd.log_weights[best]) best = i;
        self(self, nd.children[best]);
        break;
      }
      case NodeKind::Split:
        self(self, nd.children[static_cast<std::size_t>(
                       detail::split_child_index(nd.thresholds, xr[nd.axis]))]);
        break;
      case NodeKind::Product:
        for (int ch : nd.children) self(self, ch);
        break;
    }
  };
  walk(walk, m.root);
  return out;
}

// Prediction dump: features, then per output mean / var_f / var_y / 95% band
// / diagnostic leaf id of the maximum-posterior induced path.
inline void write_predictions_csv(const SpnGp& m, const Eigen::MatrixXd& X,
                                  std::ostream& out) {
  const int dy = m.meta.output_dim;
  for (int d = 0; d < m.meta.input_dim; ++d) out << (d ? "," : "") << "x" << d;
  for (int j = 0; j < dy; ++j)
    out << ",mean_y" << j << ",var_f_y" << j << ",var_y_y" << j << ",lo95_y" << j
        << ",hi95_y" << j << ",leaf_y" << j;
  out << "\n";
  if (X.rows() == 0) return;
  const std::vector<PredictiveMoments> pm = predict(m, X);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const std::vector<int> leaves = max_posterior_leaves(m, X.row(i));
    for (int d = 0; d < m.meta.input_dim; ++d)
      out << (d ? "," : "") << detail::fmt_full(X(i, d));
    for (int j = 0; j < dy; ++j) {
      const double mean = pm[static_cast<std::size_t>(j)].mean[i];
      const double vf = pm[static_cast<std::size_t>(j)].var_f[i];
      const double vy = pm[static_cast<std::size_t>(j)].var_y[i];
      const double band = 1.96 * std::sqrt(vy);
      out << ',' << detail::fmt_full(mean) << ',' << detail::fmt_full(vf) << ','
          << detail::fmt_full(vy) << ',' << detail::fmt_full(mean - band) << ','
          << detail::fmt_full(mean + band) << ',' << leaves[static_cast<std::size_t>(j)];
    }
    out << "\n";
  }
}

// Feature-only query CSV (header row required, strict numeric cells).
inline Eigen::MatrixXd load_query_csv(const std::string& path, char delimiter = ',') {
  std::ifstream in(path);
  if (!in) throw ParseError("query: cannot open " + path);
  std::string header;
  if (!std::getline(in, header)) throw ParseError("query: empty file " + path);
  const std::size_t dim = detail::split_line(header, delimiter).size();
  std::vector<std::vector<double>> rows;
  std::string line;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const std::vector<std::string> cells = detail::split_line(line, delimiter);
    if (cells.size() != dim)
      throw ParseError("query: row " + std::to_string(lineno) + " has " +
                       std::to_string(cells.size()) + " cells, expected " +
                       std::to_string(dim));
    std::vector<double> r(dim);
    for (std::size_t j = 0; j < dim; ++j)
      if (!detail::parse_cell(cells[j], lineno, "col" + std::to_string(j), r[j]))
        throw ParseError("query: missing value at row " + std::to_string(lineno));
    rows.push_back(std::move(r));
  }
  Eigen::MatrixXd X(static_cast<Eigen::Index>(rows.size()),
                    static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < dim; ++j)
      X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return X;
}

// ---------------------------------------------------------------------------
// Evaluation protocol: Mean / LLS / Ridge / optional full GP / SPN-GP /
// SPN-GP* over R seeded splits.

struct MethodStats {
  std::string name;
  bool ran = true;
  std::string note;
  std::vector<double> per_run;          // pooled RMSE per run
  Eigen::VectorXd per_output_mean;      // mean per-output RMSE over runs
  double rmse_mean = 0.0;
  double rmse_se = 0.0;

  void finalize() {
    if (per_run.empty()) return;
    double s = 0.0;
    for (double v : per_run) s += v;
    rmse_mean = s / static_cast<double>(per_run.size());
    double ss = 0.0;
    for (double v : per_run) ss += (v - rmse_mean) * (v - rmse_mean);
    const double n = static_cast<double>(per_run.size());
    rmse_se = per_run.size() > 1 ? std::sqrt(ss / (n - 1.0)) / std::sqrt(n) : 0.0;
  }
};

struct EvalReport {
  std::vector<MethodStats> methods;
  std::vector<std::uint64_t> run_seeds;
  std::string preprocessing =
      "targets centered by the training mean; GP methods see raw features; "
      "Ridge standardizes features internally";
  PhaseTimings timings;  // volatile; not part of the persisted report

  const MethodStats* find(const std::string& name) const {
    for (const auto& ms : methods)
      if (ms.name == name) return &ms;
    return nullptr;
  }

  std::string to_text() const {
    std::ostringstream out;
    out << std::left << std::setw(10) << "method" << std::right << std::setw(12)
        << "rmse" << std::setw(12) << "se" << "  note\n";
    for (const auto& ms : methods) {
      out << std::left << std::setw(10) << ms.name << std::right;
      if (ms.ran)
        out << std::setw(12) << detail::fmt(ms.rmse_mean) << std::setw(12)
            << detail::fmt(ms.rmse_se);
      else
        out << std::setw(12) << "-" << std::setw(12) << "-";
      out << "  " << ms.note << "\n";
    }
    out << "runs: " << run_seeds.size() << "; seeds:";
    for (auto s : run_seeds) out << ' ' << s;
    out << "\npreprocessing: " << preprocessing << "\n";
    return out.str();
  }

  // Machine-readable TSV: one row per method, then per-run columns.
  std::string to_tsv() const {
    std::ostringstream out;
    out << "method\tran\trmse_mean\trmse_se\tper_output\tper_run\tnote\n";
    for (const auto& ms : methods) {
      out << ms.name << '\t' << (ms.ran ? 1 : 0) << '\t';
      if (ms.ran) {
        out << detail::fmt_full(ms.rmse_mean) << '\t' << detail::fmt_full(ms.rmse_se)
            << '\t';
        for (Eigen::Index j = 0; j < ms.per_output_mean.size(); ++j)
          out << (j ? ";" : "") << detail::fmt_full(ms.per_output_mean[j]);
        out << '\t';
        for (std::size_t r = 0; r < ms.per_run.size(); ++r)
          out << (r ? ";" : "") << detail::fmt_full(ms.per_run[r]);
      } else {
        out << "-\t-\t-\t-";
      }
      out << '\t' << ms.note << '\n';
    }
    return out.str();
  }
};

inline int gp_feasibility_cap(const ExperimentConfig& cfg) {
  if (const char* env = std::getenv("SPNGP_GP_CAP")) {
    try {
      return std::stoi(env);
    } catch (...) {
      throw ParseError("SPNGP_GP_CAP must be an integer");
    }
  }
  return cfg.gp_feasibility_cap;
}

inline EvalReport run_eval(const ExperimentConfig& cfg, int jobs = 1,
                           std::ostream* log = nullptr) {
  const Dataset full = load_dataset(cfg);
  EvalReport rep;
  MethodStats mean_m{.name = "Mean"}, lls_m{.name = "LLS"}, ridge_m{.name = "Ridge"},
      gp_m{.name = "GP"}, spn_m{.name = "SPN-GP"}, spn_star_m{.name = "SPN-GP*"};
  const int cap = gp_feasibility_cap(cfg);

  Eigen::MatrixXd per_output_acc[6];
  auto accumulate = [&](MethodStats& ms, int slot, const Eigen::MatrixXd& pred,
                        const Eigen::MatrixXd& truth) {
    ms.per_run.push_back(pooled_rmse(pred, truth));
    const Eigen::VectorXd po = rmse(pred, truth);
    auto& acc = per_output_acc[slot];
    if (acc.size() == 0) acc = Eigen::MatrixXd::Zero(po.size(), 1);
    acc.col(0) += po;
  };

  detail::Stopwatch watch;
  for (int run = 0; run < cfg.runs; ++run) {
    const std::uint64_t run_seed = cfg.seed + static_cast<std::uint64_t>(run);
    rep.run_seeds.push_back(run_seed);
    auto [train, test] = train_test_split(full, cfg.train_fraction, run_seed);

    accumulate(mean_m, 0, predict_mean_baseline(train, test.n()), test.Y);
    accumulate(lls_m, 1, fit_lls(train).predict(test.X), test.Y);
    accumulate(ridge_m, 2, fit_ridge(train, 0.01).predict(test.X), test.Y);
    rep.timings.add("baselines", watch.lap());

    if (static_cast<int>(train.n()) <= cap) {
      // Full-GP baseline: a single region holding every training point, so
      // the model is an evidence-weighted mixture of one full GP per menu
      // kernel. No hyperparameter optimization, mirroring the fixed-kernel
      // protocol.
      ExperimentConfig gp_cfg = cfg;
      gp_cfg.structure.min_points = static_cast<int>(train.n()) + 1;
      gp_cfg.structure.overlap = OverlapMode::None;
      gp_cfg.optimizer.reset();
      const TrainResult r = train_model(gp_cfg, train, run_seed, jobs);
      accumulate(gp_m, 3, predicted_means(predict(r.model, test.X)), test.Y);
      rep.timings.add("gp", watch.lap());
    } else {
      gp_m.ran = false;
      gp_m.note = "skipped: " + std::to_string(train.n()) +
                  " training rows exceed the feasibility cap " + std::to_string(cap);
    }

    {
      ExperimentConfig plain = cfg;
      plain.structure.overlap = OverlapMode::None;
      const TrainResult r = train_model(plain, train, run_seed, jobs);
      accumulate(spn_m, 4, predicted_means(predict(r.model, test.X)), test.Y);
      rep.timings.add("spn_gp", watch.lap());
    }
    {
      ExperimentConfig star = cfg;
      if (star.structure.overlap == OverlapMode::None) {
        star.structure.overlap = OverlapMode::Count;
        star.structure.overlap_value = 3.0;
      }
      const TrainResult r = train_model(star, train, run_seed, jobs);
      accumulate(spn_star_m, 5, predicted_means(predict(r.model, test.X)), test.Y);
      rep.timings.add("spn_gp_star", watch.lap());
    }
    if (log) (*log) << "run " << run << " done\n";
  }

  MethodStats* all[6] = {&mean_m, &lls_m, &ridge_m, &gp_m, &spn_m, &spn_star_m};
  for (int i = 0; i < 6; ++i) {
    all[i]->finalize();
    if (all[i]->ran && per_output_acc[i].size() > 0)
      all[i]->per_output_mean = per_output_acc[i].col(0) / static_cast<double>(cfg.runs);
    rep.methods.push_back(*all[i]);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Expert-size sweep: one model per min_points value on a fixed split.

struct SweepRow {
  int min_points = 0;
  int experts = 0;
  double avg_points_per_expert = 0.0;
  double rmse = 0.0;
};

inline std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, int jobs = 1) {
  if (cfg.sweep_min_points.empty())
    throw ArgumentError("sweep: config lists no sweep_min_points");
  const Dataset full = load_dataset(cfg);
  auto [train, test] = train_test_split(full, cfg.train_fraction, cfg.seed);
  std::vector<SweepRow> rows;
  for (int o : cfg.sweep_min_points) {
    ExperimentConfig c = cfg;
    c.structure.min_points = o;
    const TrainResult r = train_model(c, train, cfg.seed, jobs);
    SweepRow row;
    row.min_points = o;
    row.experts = static_cast<int>(r.model.leaves.size());
    double pts = 0.0;
    for (const GpLeaf& leaf : r.model.leaves)
      pts += static_cast<double>(leaf.evidence_rows());
    row.avg_points_per_expert = r.model.leaves.empty()
                                    ? 0.0
                                    : pts / static_cast<double>(r.model.leaves.size());
    row.rmse = pooled_rmse(predicted_means(predict(r.model, test.X)), test.Y);
    rows.push_back(row);
  }
  return rows;
}

inline std::string sweep_to_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << "min_points,experts,avg_points_per_expert,rmse\n";
  for (const SweepRow& r : rows)
    out << r.min_points << ',' << r.experts << ','
        << detail::fmt_full(r.avg_points_per_expert) << ',' << detail::fmt_full(r.rmse)
        << '\n';
  return out.str();
}

}  // namespace spngp
