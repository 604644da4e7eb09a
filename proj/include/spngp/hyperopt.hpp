#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "spngp/common.hpp"
#include "spngp/gp.hpp"
#include "spngp/graph.hpp"

namespace spngp {

enum class TieMode { Independent, TiedPerKernelFamily };

struct OptimizerConfig {
  int max_iters = 100;
  double grad_tol = 1e-5;
  double init_step = 0.5;        // first trial step per iteration
  double backtrack_ratio = 0.5;  // step shrink factor
  double min_step = 1e-7;        // give up below this
  int restarts = 0;
  TieMode tie_mode = TieMode::Independent;
  std::uint64_t rng_seed = 0;
  bool fix_noise = false;        // hold log_noise at its initial value
  std::ostream* trace = nullptr; // optimizer trace sink (tab-delimited)

  void check() const {
    if (max_iters < 1) throw ArgumentError("optimizer: max_iters must be >= 1");
    if (!(grad_tol > 0.0) || !(init_step > 0.0) || !(min_step > 0.0))
      throw ArgumentError("optimizer: tolerances and steps must be positive");
    if (!(backtrack_ratio > 0.0 && backtrack_ratio < 1.0))
      throw ArgumentError("optimizer: backtrack_ratio must be in (0, 1)");
    if (restarts < 0) throw ArgumentError("optimizer: restarts must be >= 0");
  }
};

struct OptResult {
  double initial_objective = 0.0;
  double final_objective = 0.0;
  int iterations = 0;
  bool converged = false;  // stopped on grad_tol
};

namespace detail {

constexpr double kArmijo = 1e-4;

// Generic backtracking gradient ascent over theta. objective() must return
// -inf (not throw) for infeasible points; project() clamps theta in place.
template <typename Objective, typename Gradient, typename Project>
OptResult ascend(Eigen::VectorXd& theta, double f0, Objective&& objective,
                 Gradient&& gradient, Project&& project,
                 const OptimizerConfig& cfg, const std::string& trace_tag) {
  OptResult res;
  res.initial_objective = f0;
  double fcur = f0;
  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    const Eigen::VectorXd grad = gradient(theta);
    const double gn = grad.norm();
    if (cfg.trace)
      (*cfg.trace) << trace_tag << '\t' << iter << '\t' << fcur << '\t' << gn
                   << '\n';
    if (gn < cfg.grad_tol) {
      res.converged = true;
      break;
    }
    double step = cfg.init_step;
    bool accepted = false;
    while (step >= cfg.min_step) {
      Eigen::VectorXd trial = theta + step * grad;
      project(trial);
      const double ft = objective(trial);
      if (std::isfinite(ft) && ft >= fcur + kArmijo * step * gn * gn) {
        theta = trial;
        fcur = ft;
        accepted = true;
        break;
      }
      step *= cfg.backtrack_ratio;
    }
    ++res.iterations;
    if (!accepted) break;
  }
  res.final_objective = fcur;
  return res;
}

inline double noise_floor(const Eigen::VectorXd& y) {
  const double sd = sample_std(y);
  return std::log(std::max(1e-4 * sd, 1e-10));
}

}  // namespace detail

// Maximizes the leaf's log evidence (over its non-overlap rows) by gradient
// ascent with backtracking. Leaves with fewer than two evidence rows are
// returned unchanged. Restarts perturb the log-parameters by seeded noise of
// scale 0.5 and the best run wins. `salt` decorrelates restart noise across
// leaves.
inline OptResult optimize_leaf(GpLeaf& leaf, const OptimizerConfig& cfg,
                               std::uint64_t salt = 0) {
  cfg.check();
  const Eigen::Index ne = leaf.evidence_rows();
  if (ne < 2) {
    if (!leaf.fitted()) leaf.fit();
    const double z = leaf.log_evidence();
    return {z, z, 0, true};
  }
  GpLeaf ev;  // evidence-only view of the leaf
  ev.kernel = leaf.kernel;
  ev.log_noise = leaf.log_noise;
  ev.X = leaf.X.topRows(ne);
  ev.y = leaf.y.head(ne);
  ev.region_id = leaf.region_id;

  const double floor = detail::noise_floor(ev.y);
  const int np = static_cast<int>(ev.parameters().size());
  const double fixed_noise = leaf.log_noise;
  auto project = [&](Eigen::VectorXd& t) {
    if (cfg.fix_noise)
      t[np - 1] = fixed_noise;
    else
      t[np - 1] = std::max(t[np - 1], floor);
  };
  auto objective = [&](const Eigen::VectorXd& t) -> double {
    try {
      ev.set_parameters(t);
      ev.fit();
      const double z = ev.log_evidence();
      return std::isfinite(z) ? z : -std::numeric_limits<double>::infinity();
    } catch (const NumericError&) {
      return -std::numeric_limits<double>::infinity();
    } catch (const ArgumentError&) {
      // e.g. a trial step large enough to overflow exp(log_param)
      return -std::numeric_limits<double>::infinity();
    }
  };
  auto gradient = [&](const Eigen::VectorXd& t) {
    ev.set_parameters(t);
    ev.fit();
    Eigen::VectorXd g = ev.log_marginal_likelihood_grad();
    if (cfg.fix_noise) g[np - 1] = 0.0;
    return g;
  };

  Eigen::VectorXd theta0 = leaf.parameters();
  project(theta0);
  const double f0 = objective(theta0);
  if (!std::isfinite(f0))
    throw NumericError("optimize_leaf: non-finite objective at start (leaf region " +
                       std::to_string(leaf.region_id) + ")");

  Eigen::VectorXd best = theta0;
  OptResult best_res{f0, f0, 0, false};
  Rng rng(cfg.rng_seed ^ (salt * 0x9e3779b97f4a7c15ull + 0x2545f4914f6cdd1dull));
  for (int run = 0; run <= cfg.restarts; ++run) {
    Eigen::VectorXd theta = theta0;
    if (run > 0) {
      for (int p = 0; p < np; ++p) theta[p] += 0.5 * rng.normal();
      project(theta);
    }
    const double fstart = objective(theta);
    if (!std::isfinite(fstart)) continue;
    OptResult res = detail::ascend(theta, fstart, objective, gradient, project,
                                   cfg, "leaf:" + std::to_string(leaf.region_id));
    if (res.final_objective > best_res.final_objective) {
      best_res.final_objective = res.final_objective;
      best_res.iterations = res.iterations;
      best_res.converged = res.converged;
      best = theta;
    }
  }
  best_res.initial_objective = f0;
  leaf.set_parameters(best);
  leaf.fit();
  return best_res;
}

// Marginal-likelihood maximization for a whole model. Independent mode
// optimizes each leaf on its own (fanning out over `jobs` threads); tied mode
// shares one parameter vector per kernel family and ascends the model's total
// log evidence, mixing per-leaf gradients by their responsibilities.
inline OptResult optimize_model(SpnGp& m, const OptimizerConfig& cfg, int jobs = 1) {
  cfg.check();
  if (m.posterior_applied)
    throw StateError("optimize_model: must run before posterior_update");
  for (GpLeaf& leaf : m.leaves)
    if (!leaf.fitted()) leaf.fit();
  const double z0 = log_evidence(m);

  if (cfg.tie_mode == TieMode::Independent) {
    parallel_for(jobs, static_cast<int>(m.leaves.size()), [&](int i) {
      optimize_leaf(m.leaves[static_cast<std::size_t>(i)], cfg,
                    static_cast<std::uint64_t>(i));
    });
    return {z0, log_evidence(m), 0, false};
  }

  // Tied mode: group by (family, nu, parameter count).
  std::map<std::string, std::vector<int>> groups;
  for (int i = 0; i < static_cast<int>(m.leaves.size()); ++i) {
    const GpLeaf& leaf = m.leaves[static_cast<std::size_t>(i)];
    groups[family_name(leaf.kernel.family) + "/" + std::to_string(leaf.kernel.nu) +
           "/" + std::to_string(leaf.kernel.num_params())]
        .push_back(i);
  }
  std::vector<std::vector<int>> members;
  std::vector<int> widths;   // parameter count per group (incl. noise)
  std::vector<double> floors;
  Eigen::VectorXd theta0;
  {
    std::vector<double> init;
    for (const auto& [key, idx] : groups) {
      members.push_back(idx);
      const GpLeaf& first = m.leaves[static_cast<std::size_t>(idx.front())];
      const Eigen::VectorXd p = first.parameters();
      widths.push_back(static_cast<int>(p.size()));
      for (Eigen::Index k = 0; k < p.size(); ++k) init.push_back(p[k]);
      double floor = std::log(1e-10);
      for (int li : idx) {
        const GpLeaf& leaf = m.leaves[static_cast<std::size_t>(li)];
        if (leaf.evidence_rows() >= 2)
          floor = std::max(floor, detail::noise_floor(
                                      leaf.y.head(leaf.evidence_rows())));
      }
      floors.push_back(floor);
    }
    theta0 = Eigen::Map<Eigen::VectorXd>(init.data(),
                                         static_cast<Eigen::Index>(init.size()));
  }

  // Leaf node id per leaf index, for responsibilities.
  std::vector<int> leaf_node(m.leaves.size(), -1);
  for (const Node& nd : m.nodes)
    if (nd.kind == NodeKind::Leaf) leaf_node[static_cast<std::size_t>(nd.leaf)] = nd.id;

  auto apply = [&](const Eigen::VectorXd& theta) {
    Eigen::Index off = 0;
    for (std::size_t gidx = 0; gidx < members.size(); ++gidx) {
      const Eigen::VectorXd part = theta.segment(off, widths[gidx]);
      for (int li : members[gidx])
        m.leaves[static_cast<std::size_t>(li)].set_parameters(part);
      off += widths[gidx];
    }
    parallel_for(jobs, static_cast<int>(m.leaves.size()),
                 [&](int i) { m.leaves[static_cast<std::size_t>(i)].fit(); });
  };
  auto project = [&](Eigen::VectorXd& theta) {
    Eigen::Index off = 0;
    for (std::size_t gidx = 0; gidx < members.size(); ++gidx) {
      double& ln = theta[off + widths[gidx] - 1];
      if (cfg.fix_noise)
        ln = m.leaves[static_cast<std::size_t>(members[gidx].front())].log_noise;
      else
        ln = std::max(ln, floors[gidx]);
      off += widths[gidx];
    }
  };
  auto objective = [&](const Eigen::VectorXd& theta) -> double {
    try {
      apply(theta);
      const double z = log_evidence(m);
      return std::isfinite(z) ? z : -std::numeric_limits<double>::infinity();
    } catch (const NumericError&) {
      return -std::numeric_limits<double>::infinity();
    } catch (const ArgumentError&) {
      return -std::numeric_limits<double>::infinity();
    }
  };
  auto gradient = [&](const Eigen::VectorXd& theta) {
    apply(theta);
    const std::vector<double> z = node_log_evidences(m);
    const std::vector<double> logr = log_responsibilities(m, z);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(theta.size());
    Eigen::Index off = 0;
    for (std::size_t gidx = 0; gidx < members.size(); ++gidx) {
      for (int li : members[gidx]) {
        const GpLeaf& leaf = m.leaves[static_cast<std::size_t>(li)];
        if (leaf.evidence_rows() < 1) continue;
        const double r =
            std::exp(logr[static_cast<std::size_t>(leaf_node[static_cast<std::size_t>(li)])]);
        if (r == 0.0) continue;
        g.segment(off, widths[gidx]) += r * leaf.log_marginal_likelihood_grad();
      }
      if (cfg.fix_noise) g[off + widths[gidx] - 1] = 0.0;
      off += widths[gidx];
    }
    return g;
  };

  Eigen::VectorXd theta = theta0;
  project(theta);
  const double f0 = objective(theta);
  if (!std::isfinite(f0))
    throw NumericError("optimize_model: non-finite objective at start");

  Eigen::VectorXd best = theta;
  OptResult best_res{f0, f0, 0, false};
  Rng rng(cfg.rng_seed);
  for (int run = 0; run <= cfg.restarts; ++run) {
    Eigen::VectorXd t = theta;
    if (run > 0) {
      for (Eigen::Index p = 0; p < t.size(); ++p) t[p] += 0.5 * rng.normal();
      project(t);
    }
    const double fstart = objective(t);
    if (!std::isfinite(fstart)) continue;
    OptResult res =
        detail::ascend(t, fstart, objective, gradient, project, cfg, "tied");
    if (res.final_objective > best_res.final_objective) {
      best_res.final_objective = res.final_objective;
      best_res.iterations = res.iterations;
      best_res.converged = res.converged;
      best = t;
    }
  }
  best_res.initial_objective = f0;
  apply(best);
  return best_res;
}

}  // namespace spngp
