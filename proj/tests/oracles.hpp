#pragma once

// Test-side oracles, independent of the library's computation paths:
//   - dense GP moments/evidence via explicit matrix inversion
//   - central finite differences for gradients
//   - explicit induced-tree mixture evaluation
//   - a generator of random valid SPN-GP models

#include <Eigen/Dense>
#include <cmath>
#include <map>
#include <vector>

#include "spngp/data.hpp"
#include "spngp/graph.hpp"
#include "spngp/kernel.hpp"

namespace oracles {

struct DenseGp {
  Eigen::VectorXd mean;
  Eigen::VectorXd var_f;
  double log_evidence = 0.0;
};

// Explicit-inverse GP: no Cholesky, no shared code with GpLeaf.
inline DenseGp dense_gp(const spngp::KernelSpec& kernel, double log_noise,
                        const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                        const Eigen::MatrixXd& Xstar) {
  const Eigen::Index n = X.rows();
  const double s2 = std::exp(2.0 * log_noise);
  Eigen::MatrixXd C = spngp::kernel_matrix(kernel, X);
  C.diagonal().array() += s2;
  const Eigen::MatrixXd Cinv = C.inverse();

  DenseGp out;
  out.log_evidence = -0.5 * y.dot(Cinv * y) - 0.5 * std::log(C.determinant()) -
                     0.5 * static_cast<double>(n) * std::log(2.0 * M_PI);
  out.mean.resize(Xstar.rows());
  out.var_f.resize(Xstar.rows());
  for (Eigen::Index i = 0; i < Xstar.rows(); ++i) {
    Eigen::VectorXd ks(n);
    for (Eigen::Index j = 0; j < n; ++j)
      ks[j] = spngp::kernel_eval(kernel, X.row(j), Xstar.row(i));
    out.mean[i] = ks.dot(Cinv * y);
    out.var_f[i] =
        spngp::kernel_eval(kernel, Xstar.row(i), Xstar.row(i)) - ks.dot(Cinv * ks);
  }
  return out;
}

// Central finite differences of a scalar function of a parameter vector.
template <typename F>
Eigen::VectorXd fd_gradient(F&& f, const Eigen::VectorXd& theta, double h = 1e-5) {
  Eigen::VectorXd g(theta.size());
  for (Eigen::Index p = 0; p < theta.size(); ++p) {
    Eigen::VectorXd tp = theta, tm = theta;
    tp[p] += h;
    tm[p] -= h;
    g[p] = (f(tp) - f(tm)) / (2.0 * h);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Explicit induced-tree mixture: evidence, per-edge posterior weights and
// predictive moments evaluated tree by tree.

struct TreeMixture {
  std::vector<spngp::InducedTree> trees;
  std::vector<double> log_joint;      // log p(T) + sum of leaf evidences
  std::vector<double> posterior;      // normalized tree weights
  double log_evidence = 0.0;
};

inline TreeMixture tree_mixture(const spngp::SpnGp& m, double cap = 1e5) {
  TreeMixture mix;
  mix.trees = spngp::enumerate_induced_trees(m, cap);
  for (const spngp::InducedTree& t : mix.trees) {
    double lj = t.log_prior;
    for (int leaf_node : t.leaves)
      lj += m.leaves[static_cast<std::size_t>(m.node(leaf_node).leaf)].log_evidence();
    mix.log_joint.push_back(lj);
  }
  mix.log_evidence = spngp::logsumexp(mix.log_joint);
  for (double lj : mix.log_joint)
    mix.posterior.push_back(std::exp(lj - mix.log_evidence));
  return mix;
}

// Posterior weight of edge (sum, child): mass of posterior trees containing
// the edge, normalized over the trees containing the sum node at all.
inline double edge_posterior(const TreeMixture& mix, int sum_id, int child_id) {
  double with_edge = 0.0, with_sum = 0.0;
  for (std::size_t t = 0; t < mix.trees.size(); ++t) {
    if (mix.trees[t].has_sum(sum_id)) with_sum += mix.posterior[t];
    if (mix.trees[t].has_edge(sum_id, child_id)) with_edge += mix.posterior[t];
  }
  return with_sum > 0.0 ? with_edge / with_sum : 0.0;
}

// Moments of the tree mixture at a single query point, for one output
// variable. Uses route() to pick each tree's responsible leaf.
struct MixMoments {
  double mean = 0.0;
  double var_f = 0.0;
  double var_y = 0.0;
};

inline MixMoments mixture_moments(const spngp::SpnGp& m, const TreeMixture& mix,
                                  const Eigen::VectorXd& x, int out_var,
                                  const std::vector<double>& tree_weights) {
  const std::vector<std::vector<int>> hits = spngp::route(m, x, 1e9);
  std::vector<double> means(mix.trees.size()), vfs(mix.trees.size()),
      vys(mix.trees.size());
  for (std::size_t t = 0; t < mix.trees.size(); ++t) {
    int leaf_node = -1;
    for (int cand : hits[t])
      if (m.node(cand).out_scope[0] == out_var) leaf_node = cand;
    if (leaf_node < 0)
      throw std::logic_error("oracle: no routed leaf covers the output variable");
    const spngp::GpLeaf& leaf =
        m.leaves[static_cast<std::size_t>(m.node(leaf_node).leaf)];
    const spngp::PredictiveMoments pm = leaf.predict(Eigen::MatrixXd(x.transpose()));
    means[t] = pm.mean[0];
    vfs[t] = pm.var_f[0];
    vys[t] = pm.var_y[0];
  }
  MixMoments out;
  for (std::size_t t = 0; t < mix.trees.size(); ++t)
    out.mean += tree_weights[t] * means[t];
  for (std::size_t t = 0; t < mix.trees.size(); ++t) {
    const double dm = means[t] - out.mean;
    out.var_f += tree_weights[t] * (vfs[t] + dm * dm);
    out.var_y += tree_weights[t] * (vys[t] + dm * dm);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Random valid model generator: recursive region subdivision with sum /
// split / leaf nodes (and optionally a multi-output product root). Data rows
// are partitioned consistently with the split regions.

struct RandomModelOptions {
  int max_depth = 4;
  int max_fanout = 3;
  int n_rows = 24;
  int input_dim = 1;
  int output_dim = 1;
  double leaf_prob = 0.35;
};

class RandomModelBuilder {
 public:
  RandomModelBuilder(spngp::Rng& rng, RandomModelOptions opts)
      : rng_(rng), opts_(opts) {}

  spngp::SpnGp build() {
    spngp::SpnGp m;
    m.meta.input_dim = opts_.input_dim;
    m.meta.output_dim = opts_.output_dim;

    const Eigen::Index n = opts_.n_rows;
    m.meta.train_x.resize(n, opts_.input_dim);
    m.meta.train_y.resize(n, opts_.output_dim);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int d = 0; d < opts_.input_dim; ++d)
        m.meta.train_x(i, d) = rng_.uniform(0.0, 1.0);
      for (int j = 0; j < opts_.output_dim; ++j)
        m.meta.train_y(i, j) = std::sin(3.0 * m.meta.train_x(i, 0) + j) +
                               0.3 * rng_.normal();
    }
    m.meta.y_center.setZero(opts_.output_dim);

    spngp::Region root_box;
    root_box.lower = Eigen::VectorXd::Zero(opts_.input_dim);
    root_box.upper = Eigen::VectorXd::Ones(opts_.input_dim);
    std::vector<int> all_rows;
    for (int i = 0; i < opts_.n_rows; ++i) all_rows.push_back(i);

    if (opts_.output_dim == 1) {
      m.root = grow(m, root_box, all_rows, 0, 0);
    } else {
      spngp::Node prod;
      prod.kind = spngp::NodeKind::Product;
      prod.region = root_box;
      prod.region.data_idx = all_rows;
      std::vector<int> kids;
      for (int j = 0; j < opts_.output_dim; ++j) {
        kids.push_back(grow(m, root_box, all_rows, j, 0));
        prod.out_scope.push_back(j);
      }
      prod.children = kids;
      m.root = m.add_node(std::move(prod));
    }
    m.fit_all_leaves();
    return m;
  }

 private:
  int make_leaf(spngp::SpnGp& m, const spngp::Region& box,
                const std::vector<int>& rows, int out_var) {
    spngp::GpLeaf leaf;
    const bool use_linear = rng_.uniform() < 0.3;
    leaf.kernel = use_linear
                      ? spngp::KernelSpec::linear(opts_.input_dim, 1.0)
                      : spngp::KernelSpec::se_ard(opts_.input_dim, 1.0, 0.5);
    leaf.log_noise = std::log(0.3);
    leaf.X.resize(static_cast<Eigen::Index>(rows.size()), opts_.input_dim);
    leaf.y.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      leaf.X.row(static_cast<Eigen::Index>(i)) = m.meta.train_x.row(rows[i]);
      leaf.y[static_cast<Eigen::Index>(i)] = m.meta.train_y(rows[i], out_var);
    }
    spngp::Region region = box;
    region.data_idx = rows;
    return m.add_leaf_node(std::move(leaf), out_var, std::move(region));
  }

  int grow(spngp::SpnGp& m, const spngp::Region& box, const std::vector<int>& rows,
           int out_var, int depth) {
    if (depth >= opts_.max_depth || rng_.uniform() < opts_.leaf_prob)
      return make_leaf(m, box, rows, out_var);

    if (rng_.uniform() < 0.5) {  // sum node
      const int fanout = 1 + rng_.uniform_int(opts_.max_fanout);
      spngp::Node sum;
      sum.kind = spngp::NodeKind::Sum;
      sum.out_scope = {out_var};
      sum.region = box;
      sum.region.data_idx = rows;
      std::vector<double> w(static_cast<std::size_t>(fanout));
      double tot = 0.0;
      for (double& wi : w) {
        wi = 0.1 + rng_.uniform();
        tot += wi;
      }
      for (int k = 0; k < fanout; ++k) {
        sum.children.push_back(grow(m, box, rows, out_var, depth + 1));
        sum.log_weights.push_back(std::log(w[static_cast<std::size_t>(k)] / tot));
      }
      return m.add_node(std::move(sum));
    }

    // split node along a random axis
    const int axis = rng_.uniform_int(opts_.input_dim);
    const double lo = box.lower[axis], hi = box.upper[axis];
    const int cuts = 1 + rng_.uniform_int(2);
    std::vector<double> ts;
    for (int c = 0; c < cuts; ++c) ts.push_back(rng_.uniform(lo + 0.1 * (hi - lo), hi - 0.1 * (hi - lo)));
    std::sort(ts.begin(), ts.end());
    ts.erase(std::unique(ts.begin(), ts.end()), ts.end());

    spngp::Node split;
    split.kind = spngp::NodeKind::Split;
    split.axis = axis;
    split.thresholds = ts;
    split.out_scope = {out_var};
    split.region = box;
    split.region.data_idx = rows;
    for (std::size_t k = 0; k <= ts.size(); ++k) {
      spngp::Region child = box;
      child.lower[axis] = k == 0 ? lo : ts[k - 1];
      child.upper[axis] = k == ts.size() ? hi : ts[k];
      std::vector<int> child_rows;
      for (int r : rows) {
        const double v = m.meta.train_x(r, axis);
        const int idx = static_cast<int>(
            std::upper_bound(ts.begin(), ts.end(), v) - ts.begin());
        if (idx == static_cast<int>(k)) child_rows.push_back(r);
      }
      split.children.push_back(grow(m, child, child_rows, out_var, depth + 1));
    }
    return m.add_node(std::move(split));
  }

  spngp::Rng& rng_;
  RandomModelOptions opts_;
};

inline spngp::SpnGp random_model(spngp::Rng& rng, RandomModelOptions opts = {}) {
  return RandomModelBuilder(rng, opts).build();
}

}  // namespace oracles
