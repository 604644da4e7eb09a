#pragma once

#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "spngp/common.hpp"
#include "spngp/data.hpp"
#include "spngp/hyperopt.hpp"
#include "spngp/structure.hpp"

namespace spngp {

inline constexpr int kConfigVersion = 1;

struct DatasetSource {
  // csv mode
  std::string csv_path;
  std::vector<std::string> targets;
  char delimiter = ',';
  // synthetic mode
  std::string synthetic;  // piecewise | heteroscedastic | smooth1d | energy_like | ccpp_like
  int n = 0;

  bool is_csv() const { return !csv_path.empty(); }
};

struct ExperimentConfig {
  DatasetSource dataset;
  StructureConfig structure;
  std::optional<OptimizerConfig> optimizer;  // absent = fixed hyperparameters
  int runs = 5;
  double train_fraction = 0.8;
  std::string output_dir = ".";
  std::uint64_t seed = 0;
  int gp_feasibility_cap = 2000;  // full-GP baseline skipped above this
  std::vector<int> sweep_min_points;

  std::string fingerprint;  // hex digest of the canonical config document
};

namespace detail {

using json = nlohmann::json;

// Unknown keys are configuration errors: a typo must not silently change an
// experiment.
inline void check_keys(const json& j, const std::set<std::string>& allowed,
                       const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      throw ParseError("config: unknown key \"" + it.key() + "\" in " + where);
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  return j.at(key).get<T>();
}

inline KernelMenuEntry parse_kernel_entry(const json& j) {
  check_keys(j, {"family", "nu", "sigma_f", "lengthscale", "period"}, "kernels[]");
  KernelMenuEntry e;
  e.family = family_from_name(j.at("family").get<std::string>());
  e.nu = get_or(j, "nu", 1.5);
  if (j.contains("sigma_f")) e.sigma_f = j.at("sigma_f").get<double>();
  if (j.contains("lengthscale")) e.lengthscale = j.at("lengthscale").get<double>();
  if (j.contains("period")) e.period = j.at("period").get<double>();
  return e;
}

inline StructureConfig parse_structure(const json& j) {
  check_keys(j,
             {"min_points", "children_per_split", "min_width", "sum_nodes_per_region",
              "kernels", "overlap", "partition_schemes", "max_splits_per_partition",
              "fixed_noise_std", "noise_init_factor", "domain"},
             "structure");
  StructureConfig s;
  s.min_points = get_or(j, "min_points", 500);
  s.children_per_split = get_or(j, "children_per_split", 2);
  if (j.contains("min_width")) {
    const auto v = j.at("min_width").get<std::vector<double>>();
    Eigen::VectorXd w(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) w[static_cast<Eigen::Index>(i)] = v[i];
    s.min_width = w;
  }
  if (j.contains("min_width") && j.contains("children_per_split"))
    throw ParseError("config: structure.min_width and structure.children_per_split "
                     "are mutually exclusive");
  s.sum_nodes_per_region = get_or(j, "sum_nodes_per_region", 1);
  if (!j.contains("kernels")) throw ParseError("config: structure.kernels is required");
  for (const json& k : j.at("kernels")) s.kernel_menu.push_back(parse_kernel_entry(k));
  if (j.contains("overlap")) {
    const json& o = j.at("overlap");
    check_keys(o, {"mode", "value"}, "structure.overlap");
    const std::string mode = o.at("mode").get<std::string>();
    if (mode == "none")
      s.overlap = OverlapMode::None;
    else if (mode == "count")
      s.overlap = OverlapMode::Count;
    else if (mode == "radius")
      s.overlap = OverlapMode::Radius;
    else
      throw ParseError("config: unknown overlap mode \"" + mode + "\"");
    s.overlap_value = get_or(o, "value", 3.0);
  }
  s.partition_schemes = get_or(j, "partition_schemes", 1);
  s.max_splits_per_partition = get_or(j, "max_splits_per_partition", 16);
  if (j.contains("fixed_noise_std"))
    s.fixed_noise_std = j.at("fixed_noise_std").get<double>();
  s.noise_init_factor = get_or(j, "noise_init_factor", 0.1);
  if (j.contains("domain")) {
    const json& d = j.at("domain");
    check_keys(d, {"lower", "upper"}, "structure.domain");
    const auto lo = d.at("lower").get<std::vector<double>>();
    const auto hi = d.at("upper").get<std::vector<double>>();
    Eigen::VectorXd l(static_cast<Eigen::Index>(lo.size())),
        u(static_cast<Eigen::Index>(hi.size()));
    for (std::size_t i = 0; i < lo.size(); ++i) l[static_cast<Eigen::Index>(i)] = lo[i];
    for (std::size_t i = 0; i < hi.size(); ++i) u[static_cast<Eigen::Index>(i)] = hi[i];
    s.domain_lower = l;
    s.domain_upper = u;
  }
  return s;
}

inline OptimizerConfig parse_optimizer(const json& j) {
  check_keys(j,
             {"mode", "max_iters", "grad_tol", "init_step", "backtrack_ratio",
              "min_step", "restarts", "fix_noise"},
             "optimizer");
  OptimizerConfig o;
  const std::string mode = get_or<std::string>(j, "mode", "independent");
  if (mode == "independent")
    o.tie_mode = TieMode::Independent;
  else if (mode == "tied")
    o.tie_mode = TieMode::TiedPerKernelFamily;
  else
    throw ParseError("config: unknown optimizer mode \"" + mode + "\"");
  o.max_iters = get_or(j, "max_iters", 100);
  o.grad_tol = get_or(j, "grad_tol", 1e-5);
  o.init_step = get_or(j, "init_step", 0.5);
  o.backtrack_ratio = get_or(j, "backtrack_ratio", 0.5);
  o.min_step = get_or(j, "min_step", 1e-7);
  o.restarts = get_or(j, "restarts", 0);
  o.fix_noise = get_or(j, "fix_noise", false);
  o.check();
  return o;
}

}  // namespace detail

inline ExperimentConfig config_from_json(const nlohmann::json& doc) {
  using detail::json;
  detail::check_keys(doc,
                     {"version", "seed", "dataset", "structure", "optimizer", "runs",
                      "train_fraction", "output_dir", "gp_feasibility_cap",
                      "sweep_min_points"},
                     "config root");
  if (!doc.contains("version") || doc.at("version").get<int>() != kConfigVersion)
    throw ParseError("config: missing or unsupported version (expected " +
                     std::to_string(kConfigVersion) + ")");
  if (!doc.contains("seed"))
    throw ParseError("config: seed is required (no entropy-source defaults)");

  ExperimentConfig cfg;
  cfg.seed = doc.at("seed").get<std::uint64_t>();

  const json& ds = doc.at("dataset");
  detail::check_keys(ds, {"csv", "synthetic"}, "dataset");
  if (ds.contains("csv") == ds.contains("synthetic"))
    throw ParseError("config: dataset needs exactly one of csv / synthetic");
  if (ds.contains("csv")) {
    const json& c = ds.at("csv");
    detail::check_keys(c, {"path", "targets", "delimiter"}, "dataset.csv");
    cfg.dataset.csv_path = c.at("path").get<std::string>();
    cfg.dataset.targets = c.at("targets").get<std::vector<std::string>>();
    const std::string d = detail::get_or<std::string>(c, "delimiter", ",");
    if (d.size() != 1) throw ParseError("config: delimiter must be one character");
    cfg.dataset.delimiter = d[0];
  } else {
    const json& s = ds.at("synthetic");
    detail::check_keys(s, {"name", "n"}, "dataset.synthetic");
    cfg.dataset.synthetic = s.at("name").get<std::string>();
    cfg.dataset.n = detail::get_or(s, "n", 0);
  }

  cfg.structure = detail::parse_structure(doc.at("structure"));
  if (doc.contains("optimizer"))
    cfg.optimizer = detail::parse_optimizer(doc.at("optimizer"));
  cfg.runs = detail::get_or(doc, "runs", 5);
  if (cfg.runs < 1) throw ParseError("config: runs must be >= 1");
  cfg.train_fraction = detail::get_or(doc, "train_fraction", 0.8);
  cfg.output_dir = detail::get_or<std::string>(doc, "output_dir", ".");
  cfg.gp_feasibility_cap = detail::get_or(doc, "gp_feasibility_cap", 2000);
  cfg.sweep_min_points = detail::get_or(doc, "sweep_min_points", std::vector<int>{});

  Fnv1a h;
  h.update_string(doc.dump());
  cfg.fingerprint = to_hex(h.digest());
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("config: cannot open " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("config: malformed JSON in " + path + ": " + e.what());
  }
  return config_from_json(doc);
}

// Materializes the configured dataset. Synthetic sources derive their draws
// from the experiment seed.
inline Dataset load_dataset(const ExperimentConfig& cfg) {
  const DatasetSource& src = cfg.dataset;
  if (src.is_csv()) return load_csv(src.csv_path, src.targets, src.delimiter);
  if (src.synthetic == "piecewise") return gen_piecewise(cfg.seed, src.n > 0 ? src.n : 400);
  if (src.synthetic == "heteroscedastic")
    return gen_heteroscedastic(cfg.seed, src.n > 0 ? src.n : 2000).data;
  if (src.synthetic == "smooth1d") return gen_smooth1d(cfg.seed, src.n > 0 ? src.n : 2000);
  if (src.synthetic == "energy_like") return make_energy_like(cfg.seed);
  if (src.synthetic == "ccpp_like") return make_ccpp_like(cfg.seed);
  throw ParseError("config: unknown synthetic dataset \"" + src.synthetic + "\"");
}

}  // namespace spngp
