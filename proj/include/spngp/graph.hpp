#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "spngp/common.hpp"
#include "spngp/gp.hpp"

namespace spngp {

// Axis-aligned box over the input space. Boxes are half-open [lower, upper)
// except on the global maximum edge, where the upper face is closed.
struct Region {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
  std::vector<int> data_idx;     // training rows inside the box
  std::vector<int> overlap_idx;  // borrowed boundary rows

  bool same_box(const Region& o) const {
    return lower.size() == o.lower.size() && lower == o.lower && upper == o.upper;
  }

  bool contains(const Eigen::VectorXd& x, const Eigen::VectorXd& global_upper) const {
    for (Eigen::Index d = 0; d < lower.size(); ++d) {
      if (x[d] < lower[d]) return false;
      if (x[d] > upper[d]) return false;
      if (x[d] == upper[d] && upper[d] != global_upper[d]) return false;
    }
    return true;
  }
};

enum class NodeKind { Sum, Product, Split, Leaf };

inline std::string node_kind_name(NodeKind k) {
  switch (k) {
    case NodeKind::Sum: return "sum";
    case NodeKind::Product: return "product";
    case NodeKind::Split: return "split";
    case NodeKind::Leaf: return "leaf";
  }
  return "unknown";
}

struct Node {
  int id = -1;
  NodeKind kind = NodeKind::Leaf;
  std::vector<int> children;
  std::vector<double> log_weights;  // Sum only; logsumexp == 0
  int axis = -1;                    // Split only
  std::vector<double> thresholds;   // Split only, ascending
  int leaf = -1;                    // Leaf only: index into SpnGp::leaves
  std::vector<int> out_scope;       // sorted output-variable indices
  Region region;
};

struct TrainMeta {
  Eigen::VectorXd y_center;  // per-output training mean, added back on predict
  int input_dim = 0;
  int output_dim = 1;
  std::uint64_t data_fingerprint = 0;
  // Raw training data (y uncentered). Kept so model files are self-contained;
  // may be empty for hand-built models.
  Eigen::MatrixXd train_x;
  Eigen::MatrixXd train_y;
};

class SpnGp {
 public:
  std::vector<Node> nodes;
  std::vector<GpLeaf> leaves;
  int root = -1;
  TrainMeta meta;
  bool posterior_applied = false;

  const Node& node(int id) const { return nodes[static_cast<std::size_t>(id)]; }
  Node& node(int id) { return nodes[static_cast<std::size_t>(id)]; }

  int add_node(Node n) {
    n.id = static_cast<int>(nodes.size());
    nodes.push_back(std::move(n));
    return nodes.back().id;
  }

  int add_leaf_node(GpLeaf leaf, int out_var, Region region) {
    Node n;
    n.kind = NodeKind::Leaf;
    n.leaf = static_cast<int>(leaves.size());
    n.out_scope = {out_var};
    n.region = std::move(region);
    leaves.push_back(std::move(leaf));
    return add_node(std::move(n));
  }

  void fit_all_leaves(int jobs = 1) {
    parallel_for(jobs, static_cast<int>(leaves.size()),
                 [&](int i) { leaves[static_cast<std::size_t>(i)].fit(); });
  }

  Eigen::VectorXd centered_y(int out_var) const {
    Eigen::VectorXd c = meta.train_y.col(out_var);
    c.array() -= meta.y_center.size() > out_var ? meta.y_center[out_var] : 0.0;
    return c;
  }
};

struct Violation {
  int node_id = -1;
  std::string rule;
  std::string detail;
};

namespace detail {

inline bool same_scope(const std::vector<int>& a, const std::vector<int>& b) {
  return a == b;
}

// Index of the split child whose slab contains v: count of thresholds <= v.
inline int split_child_index(const std::vector<double>& thresholds, double v) {
  return static_cast<int>(
      std::upper_bound(thresholds.begin(), thresholds.end(), v) -
      thresholds.begin());
}

}  // namespace detail

inline std::vector<Violation> validate(const SpnGp& m) {
  std::vector<Violation> out;
  auto flag = [&](int id, const std::string& rule, const std::string& detail) {
    out.push_back({id, rule, detail});
  };
  const int n = static_cast<int>(m.nodes.size());
  if (m.root < 0 || m.root >= n) {
    flag(-1, "root", "root id out of range");
    return out;
  }
  for (int i = 0; i < n; ++i) {
    if (m.nodes[static_cast<std::size_t>(i)].id != i)
      flag(i, "node-id", "node id does not match its index");
  }

  // Reachability and cycle check from the root.
  std::vector<int> color(static_cast<std::size_t>(n), 0);  // 0 new, 1 open, 2 done
  bool cyclic = false;
  auto dfs = [&](auto&& self, int id) -> void {
    auto& c = color[static_cast<std::size_t>(id)];
    if (c == 1) {
      if (!cyclic) flag(id, "acyclic", "cycle through this node");
      cyclic = true;
      return;
    }
    if (c == 2) return;
    c = 1;
    for (int ch : m.node(id).children) {
      if (ch < 0 || ch >= n) continue;  // flagged below
      self(self, ch);
    }
    c = 2;
  };
  dfs(dfs, m.root);
  for (int i = 0; i < n; ++i)
    if (color[static_cast<std::size_t>(i)] == 0)
      flag(i, "reachable", "node not reachable from root");

  for (const Node& nd : m.nodes) {
    for (int ch : nd.children)
      if (ch < 0 || ch >= n) flag(nd.id, "child-id", "child id out of range");
    const bool children_ok = std::all_of(
        nd.children.begin(), nd.children.end(),
        [&](int ch) { return ch >= 0 && ch < n; });

    switch (nd.kind) {
      case NodeKind::Sum: {
        if (nd.children.empty()) flag(nd.id, "sum-arity", "sum node without children");
        if (nd.children.size() != nd.log_weights.size())
          flag(nd.id, "sum-weights", "children/log_weights size mismatch");
        bool finite = std::all_of(nd.log_weights.begin(), nd.log_weights.end(),
                                  [](double w) { return std::isfinite(w); });
        if (!finite) flag(nd.id, "sum-weights", "non-finite log weight");
        if (finite && !nd.log_weights.empty() &&
            std::abs(logsumexp(nd.log_weights)) > 1e-12)
          flag(nd.id, "sum-normalized", "logsumexp(log_weights) != 0");
        if (children_ok) {
          for (int ch : nd.children) {
            const Node& c = m.node(ch);
            if (!detail::same_scope(c.out_scope, nd.out_scope))
              flag(nd.id, "completeness", "child " + std::to_string(ch) +
                                              " has a different out_scope");
            if (!c.region.same_box(nd.region))
              flag(nd.id, "completeness", "child " + std::to_string(ch) +
                                              " has a different region");
          }
        }
        break;
      }
      case NodeKind::Product: {
        if (nd.children.empty())
          flag(nd.id, "product-arity", "product node without children");
        if (children_ok) {
          std::vector<int> merged;
          bool disjoint = true;
          for (int ch : nd.children) {
            const Node& c = m.node(ch);
            for (int v : c.out_scope) {
              if (std::find(merged.begin(), merged.end(), v) != merged.end())
                disjoint = false;
              merged.push_back(v);
            }
            if (!c.region.same_box(nd.region))
              flag(nd.id, "product-region", "child " + std::to_string(ch) +
                                                " has a different region");
          }
          if (!disjoint)
            flag(nd.id, "decomposability", "children scopes overlap");
          std::sort(merged.begin(), merged.end());
          if (!detail::same_scope(merged, nd.out_scope))
            flag(nd.id, "decomposability",
                 "children scopes do not union to node scope");
        }
        break;
      }
      case NodeKind::Split: {
        if (nd.axis < 0 || nd.axis >= nd.region.lower.size())
          flag(nd.id, "split-axis", "axis out of range");
        if (!std::is_sorted(nd.thresholds.begin(), nd.thresholds.end()))
          flag(nd.id, "split-thresholds", "thresholds not ascending");
        if (nd.children.size() != nd.thresholds.size() + 1)
          flag(nd.id, "split-arity",
               "needs |thresholds|+1 children, got " +
                   std::to_string(nd.children.size()));
        else if (children_ok && nd.axis >= 0 &&
                 nd.axis < nd.region.lower.size()) {
          // Children must tile the parent along `axis` at the thresholds.
          for (std::size_t k = 0; k < nd.children.size(); ++k) {
            const Node& c = m.node(nd.children[k]);
            const double lo = k == 0 ? nd.region.lower[nd.axis]
                                     : nd.thresholds[k - 1];
            const double hi = k == nd.thresholds.size()
                                  ? nd.region.upper[nd.axis]
                                  : nd.thresholds[k];
            bool box_ok = c.region.lower.size() == nd.region.lower.size();
            if (box_ok) {
              for (Eigen::Index d = 0; d < nd.region.lower.size(); ++d) {
                const double exp_lo = d == nd.axis ? lo : nd.region.lower[d];
                const double exp_hi = d == nd.axis ? hi : nd.region.upper[d];
                if (c.region.lower[d] != exp_lo || c.region.upper[d] != exp_hi)
                  box_ok = false;
              }
            }
            if (!box_ok)
              flag(nd.id, "split-disjoint",
                   "child " + std::to_string(nd.children[k]) +
                       " does not tile its slab of the parent region");
            if (!detail::same_scope(c.out_scope, nd.out_scope))
              flag(nd.id, "split-scope", "child " + std::to_string(nd.children[k]) +
                                             " has a different out_scope");
          }
        }
        break;
      }
      case NodeKind::Leaf: {
        if (nd.leaf < 0 || nd.leaf >= static_cast<int>(m.leaves.size()))
          flag(nd.id, "leaf-payload", "leaf index out of range");
        if (nd.out_scope.size() != 1)
          flag(nd.id, "leaf-scope", "leaf must cover exactly one output");
        if (!nd.children.empty())
          flag(nd.id, "leaf-arity", "leaf node with children");
        break;
      }
    }
  }
  return out;
}

// Bottom-up log evidence per node: Leaf -> p(y_L|X_L); Product/Split -> sum
// of children; Sum -> logsumexp(log_weights + children).
inline std::vector<double> node_log_evidences(const SpnGp& m) {
  std::vector<double> z(m.nodes.size(),
                        std::numeric_limits<double>::quiet_NaN());
  auto rec = [&](auto&& self, int id) -> double {
    double& zi = z[static_cast<std::size_t>(id)];
    if (!std::isnan(zi)) return zi;
    const Node& nd = m.node(id);
    switch (nd.kind) {
      case NodeKind::Leaf:
        zi = m.leaves[static_cast<std::size_t>(nd.leaf)].log_evidence();
        break;
      case NodeKind::Product:
      case NodeKind::Split: {
        double s = 0.0;
        for (int ch : nd.children) s += self(self, ch);
        zi = s;
        break;
      }
      case NodeKind::Sum: {
        std::vector<double> terms(nd.children.size());
        for (std::size_t i = 0; i < nd.children.size(); ++i)
          terms[i] = nd.log_weights[i] + self(self, nd.children[i]);
        zi = logsumexp(terms);
        break;
      }
    }
    return zi;
  };
  rec(rec, m.root);
  return z;
}

inline double log_evidence(const SpnGp& m) {
  return node_log_evidences(m)[static_cast<std::size_t>(m.root)];
}

// Bayes update of all sum weights: new log w_{S,C} = log w + Z_C - Z_S.
// One-shot; a second application would silently mix posteriors, so it is
// refused via the posterior_applied flag.
inline void posterior_update(SpnGp& m) {
  if (m.posterior_applied)
    throw StateError("posterior_update: already applied to this model");
  const std::vector<double> z = node_log_evidences(m);
  for (Node& nd : m.nodes) {
    if (nd.kind != NodeKind::Sum) continue;
    for (std::size_t i = 0; i < nd.children.size(); ++i)
      nd.log_weights[i] += z[static_cast<std::size_t>(nd.children[i])];
    const double zs = logsumexp(nd.log_weights);
    for (double& w : nd.log_weights) w -= zs;
  }
  m.posterior_applied = true;
}

// Top-down responsibilities log(dZ_root / dZ_node) given bottom-up values z.
inline std::vector<double> log_responsibilities(const SpnGp& m,
                                                const std::vector<double>& z) {
  const double neg_inf = -std::numeric_limits<double>::infinity();
  std::vector<double> r(m.nodes.size(), neg_inf);
  // Topological order, parents before children.
  std::vector<int> order;
  order.reserve(m.nodes.size());
  std::vector<char> seen(m.nodes.size(), 0);
  auto dfs = [&](auto&& self, int id) -> void {
    if (seen[static_cast<std::size_t>(id)]) return;
    seen[static_cast<std::size_t>(id)] = 1;
    for (int ch : m.node(id).children) self(self, ch);
    order.push_back(id);
  };
  dfs(dfs, m.root);
  std::reverse(order.begin(), order.end());

  r[static_cast<std::size_t>(m.root)] = 0.0;
  for (int id : order) {
    const Node& nd = m.node(id);
    const double ri = r[static_cast<std::size_t>(id)];
    if (ri == neg_inf) continue;
    for (std::size_t i = 0; i < nd.children.size(); ++i) {
      const int ch = nd.children[i];
      double contrib = ri;
      if (nd.kind == NodeKind::Sum)
        contrib += nd.log_weights[i] + z[static_cast<std::size_t>(ch)] -
                   z[static_cast<std::size_t>(id)];
      auto& rc = r[static_cast<std::size_t>(ch)];
      rc = log_add_exp(rc, contrib);
    }
  }
  return r;
}

enum class OutOfDomain { Clamp, Error };

namespace detail {

struct NodeMoments {
  // Aligned with the node's out_scope.
  std::vector<double> mean, var_f, var_y;
};

inline NodeMoments predict_node(const SpnGp& m, int id,
                                const Eigen::VectorXd& x_raw,
                                const Eigen::VectorXd& x_route,
                                std::unordered_map<int, NodeMoments>& memo) {
  auto it = memo.find(id);
  if (it != memo.end()) return it->second;
  const Node& nd = m.node(id);
  NodeMoments out;
  switch (nd.kind) {
    case NodeKind::Leaf: {
      const GpLeaf& leaf = m.leaves[static_cast<std::size_t>(nd.leaf)];
      // Kernel evaluation uses the raw query; only routing is clamped.
      const PredictiveMoments pm =
          leaf.predict(Eigen::MatrixXd(x_raw.transpose()));
      out.mean = {pm.mean[0]};
      out.var_f = {pm.var_f[0]};
      out.var_y = {pm.var_y[0]};
      break;
    }
    case NodeKind::Split: {
      const int k = split_child_index(nd.thresholds, x_route[nd.axis]);
      out = predict_node(m, nd.children[static_cast<std::size_t>(k)], x_raw,
                         x_route, memo);
      break;
    }
    case NodeKind::Product: {
      const std::size_t width = nd.out_scope.size();
      out.mean.assign(width, 0.0);
      out.var_f.assign(width, 0.0);
      out.var_y.assign(width, 0.0);
      for (int ch : nd.children) {
        const Node& c = m.node(ch);
        const NodeMoments cm = predict_node(m, ch, x_raw, x_route, memo);
        for (std::size_t i = 0; i < c.out_scope.size(); ++i) {
          const auto pos = std::lower_bound(nd.out_scope.begin(),
                                            nd.out_scope.end(), c.out_scope[i]) -
                           nd.out_scope.begin();
          out.mean[static_cast<std::size_t>(pos)] = cm.mean[i];
          out.var_f[static_cast<std::size_t>(pos)] = cm.var_f[i];
          out.var_y[static_cast<std::size_t>(pos)] = cm.var_y[i];
        }
      }
      break;
    }
    case NodeKind::Sum: {
      const std::size_t width = nd.out_scope.size();
      std::vector<NodeMoments> parts(nd.children.size());
      std::vector<double> w(nd.children.size());
      for (std::size_t i = 0; i < nd.children.size(); ++i) {
        parts[i] = predict_node(m, nd.children[i], x_raw, x_route, memo);
        w[i] = std::exp(nd.log_weights[i]);
      }
      out.mean.assign(width, 0.0);
      out.var_f.assign(width, 0.0);
      out.var_y.assign(width, 0.0);
      for (std::size_t i = 0; i < parts.size(); ++i)
        for (std::size_t j = 0; j < width; ++j)
          out.mean[j] += w[i] * parts[i].mean[j];
      // Law of total variance in the spread form, which cannot go negative.
      for (std::size_t i = 0; i < parts.size(); ++i)
        for (std::size_t j = 0; j < width; ++j) {
          const double dm = parts[i].mean[j] - out.mean[j];
          out.var_f[j] += w[i] * (parts[i].var_f[j] + dm * dm);
          out.var_y[j] += w[i] * (parts[i].var_y[j] + dm * dm);
        }
      break;
    }
  }
  memo.emplace(id, out);
  return out;
}

}  // namespace detail

// Predictive moments of the mixture at each query row, one entry per output
// variable. Means include the training y-center. Queries outside the trained
// root region are clamped to the nearest box face for routing (the kernel
// still sees the raw query); OutOfDomain::Error raises instead.
inline std::vector<PredictiveMoments> predict(
    const SpnGp& m, const Eigen::MatrixXd& Xstar,
    OutOfDomain policy = OutOfDomain::Clamp) {
  if (!m.posterior_applied)
    throw StateError("predict: posterior_update has not been applied");
  const Node& root = m.node(m.root);
  if (Xstar.cols() != root.region.lower.size())
    throw ArgumentError("predict: query dimension mismatch");
  const std::size_t dy = root.out_scope.size();
  std::vector<PredictiveMoments> out(dy);
  for (auto& pm : out) {
    pm.mean.resize(Xstar.rows());
    pm.var_f.resize(Xstar.rows());
    pm.var_y.resize(Xstar.rows());
  }
  for (Eigen::Index r = 0; r < Xstar.rows(); ++r) {
    const Eigen::VectorXd x = Xstar.row(r);
    Eigen::VectorXd x_route = x;
    bool outside = false;
    for (Eigen::Index d = 0; d < x.size(); ++d) {
      if (x[d] < root.region.lower[d] || x[d] > root.region.upper[d]) outside = true;
      x_route[d] = std::clamp(x[d], root.region.lower[d], root.region.upper[d]);
    }
    if (outside && policy == OutOfDomain::Error)
      throw QueryDomainError("predict: query row " + std::to_string(r) +
                             " lies outside the trained root region");
    std::unordered_map<int, detail::NodeMoments> memo;
    const detail::NodeMoments nm = detail::predict_node(m, m.root, x, x_route, memo);
    for (std::size_t j = 0; j < dy; ++j) {
      const double center =
          m.meta.y_center.size() > root.out_scope[j] ? m.meta.y_center[root.out_scope[j]] : 0.0;
      out[j].mean[r] = nm.mean[j] + center;
      out[j].var_f[r] = nm.var_f[j];
      out[j].var_y[r] = nm.var_y[j];
    }
  }
  return out;
}

// One selection of a single child at every sum node reachable under the
// selection; the SPN is the mixture over all of them.
struct InducedTree {
  std::vector<std::pair<int, int>> edges;  // (sum node id, chosen child id)
  std::vector<int> leaves;                 // leaf node ids
  double log_prior = 0.0;

  bool has_edge(int sum_id, int child_id) const {
    return std::find(edges.begin(), edges.end(),
                     std::make_pair(sum_id, child_id)) != edges.end();
  }
  bool has_sum(int sum_id) const {
    return std::any_of(edges.begin(), edges.end(),
                       [&](const auto& e) { return e.first == sum_id; });
  }
};

inline double count_induced_trees(const SpnGp& m) {
  std::vector<double> memo(m.nodes.size(), -1.0);
  auto rec = [&](auto&& self, int id) -> double {
    double& c = memo[static_cast<std::size_t>(id)];
    if (c >= 0.0) return c;
    const Node& nd = m.node(id);
    double v = 1.0;
    if (nd.kind == NodeKind::Sum) {
      v = 0.0;
      for (int ch : nd.children) v += self(self, ch);
    } else if (nd.kind != NodeKind::Leaf) {
      for (int ch : nd.children) v *= self(self, ch);
    }
    c = v;
    return v;
  };
  return rec(rec, m.root);
}

inline std::vector<InducedTree> enumerate_induced_trees(const SpnGp& m,
                                                        double cap = 1e5) {
  const double count = count_induced_trees(m);
  if (count > cap)
    throw CapacityError("enumerate_induced_trees: " + std::to_string(count) +
                        " trees exceeds cap " + std::to_string(cap));
  std::vector<std::optional<std::vector<InducedTree>>> memo(m.nodes.size());
  auto rec = [&](auto&& self, int id) -> const std::vector<InducedTree>& {
    auto& slot = memo[static_cast<std::size_t>(id)];
    if (slot) return *slot;
    const Node& nd = m.node(id);
    std::vector<InducedTree> result;
    switch (nd.kind) {
      case NodeKind::Leaf: {
        InducedTree t;
        t.leaves.push_back(id);
        result.push_back(std::move(t));
        break;
      }
      case NodeKind::Sum: {
        for (std::size_t i = 0; i < nd.children.size(); ++i) {
          for (InducedTree t : self(self, nd.children[i])) {
            t.edges.emplace_back(id, nd.children[i]);
            t.log_prior += nd.log_weights[i];
            result.push_back(std::move(t));
          }
        }
        break;
      }
      case NodeKind::Product:
      case NodeKind::Split: {
        result.push_back(InducedTree{});
        for (int ch : nd.children) {
          const auto& sub = self(self, ch);
          std::vector<InducedTree> next;
          next.reserve(result.size() * sub.size());
          for (const InducedTree& a : result)
            for (const InducedTree& b : sub) {
              InducedTree t = a;
              t.edges.insert(t.edges.end(), b.edges.begin(), b.edges.end());
              t.leaves.insert(t.leaves.end(), b.leaves.begin(), b.leaves.end());
              t.log_prior += b.log_prior;
              next.push_back(std::move(t));
            }
          result = std::move(next);
        }
        break;
      }
    }
    slot = std::move(result);
    return *slot;
  };
  return rec(rec, m.root);
}

// For each induced tree, the leaves responsible for x (one per output
// variable). Strict domain check: x must lie inside the root region.
inline std::vector<std::vector<int>> route(const SpnGp& m,
                                           const Eigen::VectorXd& x,
                                           double cap = 1e5) {
  const Node& root = m.node(m.root);
  if (x.size() != root.region.lower.size())
    throw ArgumentError("route: query dimension mismatch");
  if (!root.region.contains(x, root.region.upper))
    throw QueryDomainError("route: query outside the root region");
  const std::vector<InducedTree> trees = enumerate_induced_trees(m, cap);
  std::vector<std::vector<int>> out;
  out.reserve(trees.size());
  for (const InducedTree& t : trees) {
    std::unordered_map<int, int> choice;
    for (const auto& [s, c] : t.edges) choice[s] = c;
    std::vector<int> hit;
    auto walk = [&](auto&& self, int id) -> void {
      const Node& nd = m.node(id);
      switch (nd.kind) {
        case NodeKind::Leaf:
          hit.push_back(id);
          break;
        case NodeKind::Sum:
          self(self, choice.at(id));
          break;
        case NodeKind::Split:
          self(self, nd.children[static_cast<std::size_t>(
                         detail::split_child_index(nd.thresholds, x[nd.axis]))]);
          break;
        case NodeKind::Product:
          for (int ch : nd.children) self(self, ch);
          break;
      }
    };
    walk(walk, m.root);
    std::sort(hit.begin(), hit.end(), [&](int a, int b) {
      return m.node(a).out_scope < m.node(b).out_scope;
    });
    out.push_back(std::move(hit));
  }
  return out;
}

}  // namespace spngp
