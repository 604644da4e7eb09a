#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "spngp/common.hpp"
#include "spngp/data.hpp"
#include "spngp/graph.hpp"
#include "spngp/kernel.hpp"

namespace spngp {

enum class OverlapMode { None, Count, Radius };

// One entry of the kernel menu. Hyperparameters left unset are initialized
// from data scales at build time (sigma_f = std(y), lengthscale = width/2,
// period = width/2).
struct KernelMenuEntry {
  KernelFamily family = KernelFamily::SquaredExponentialARD;
  double nu = 1.5;
  std::optional<double> sigma_f;
  std::optional<double> lengthscale;
  std::optional<double> period;
};

struct StructureConfig {
  int min_points = 500;  // O: regions with fewer points are not split further

  // Split rule: equal-width V-way by default; a min-width vector switches to
  // fixed subinterval sizes. Exactly one mode is active.
  int children_per_split = 2;  // V
  std::optional<Eigen::VectorXd> min_width;  // delta, one entry per dimension

  int sum_nodes_per_region = 1;  // S
  std::vector<KernelMenuEntry> kernel_menu;
  std::optional<double> fixed_noise_std;  // sigma_e for every leaf when set
  double noise_init_factor = 0.1;         // sigma_e = factor * std(y) otherwise

  OverlapMode overlap = OverlapMode::None;
  double overlap_value = 3.0;  // count c, or radius r

  std::uint64_t rng_seed = 0;
  int partition_schemes = 1;          // random axes drawn per region
  int max_splits_per_partition = 16;  // cap on the S^V cross product

  // Optional explicit input domain; defaults to the data bounding box.
  std::optional<Eigen::VectorXd> domain_lower;
  std::optional<Eigen::VectorXd> domain_upper;

  void check(int input_dim) const {
    if (min_points < 1) throw ArgumentError("structure: min_points must be >= 1");
    if (kernel_menu.empty()) throw ArgumentError("structure: kernel_menu is empty");
    if (min_width) {
      if (min_width->size() != input_dim)
        throw ArgumentError("structure: min_width must have one entry per dimension");
      if ((min_width->array() <= 0.0).any())
        throw ArgumentError("structure: min_width entries must be positive");
    } else if (children_per_split < 2) {
      throw ArgumentError("structure: children_per_split must be >= 2");
    }
    if (sum_nodes_per_region < 1)
      throw ArgumentError("structure: sum_nodes_per_region must be >= 1");
    if (partition_schemes < 1)
      throw ArgumentError("structure: partition_schemes must be >= 1");
  }
};

struct RegionGraph {
  struct RegionNode {
    Region box;                   // data_idx holds the rows inside
    std::vector<int> partitions;  // indices into `partitions`; empty = leaf region
  };
  struct PartitionNode {
    int parent = -1;
    int axis = -1;
    std::vector<double> positions;  // ascending split positions
    std::vector<int> children;      // region indices, slab order
  };

  std::vector<RegionNode> regions;
  std::vector<PartitionNode> partitions;
  int root = 0;
  std::uint64_t data_fingerprint = 0;

  std::vector<int> leaf_regions() const {
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(regions.size()); ++i)
      if (regions[static_cast<std::size_t>(i)].partitions.empty()) out.push_back(i);
    return out;
  }
};

namespace detail {

inline std::string box_key(const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
  std::string key;
  key.reserve(static_cast<std::size_t>(lo.size()) * 16);
  auto push = [&](double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    for (int b = 0; b < 8; ++b) key.push_back(static_cast<char>(bits >> (8 * b)));
  };
  for (Eigen::Index d = 0; d < lo.size(); ++d) {
    push(lo[d]);
    push(hi[d]);
  }
  return key;
}

}  // namespace detail

// Region-graph construction: queue-driven recursive splitting. Each region
// with at least min_points rows gets partitioned along a randomly selected
// axis; duplicate sub-region boxes are merged. A region is left unsplit when
// no axis is wide enough or when a proposed split fails to separate points.
inline RegionGraph build_region_graph(const Eigen::MatrixXd& X,
                                      const StructureConfig& cfg) {
  const Eigen::Index n = X.rows();
  const int dim = static_cast<int>(X.cols());
  if (n < 1 || dim < 1) throw ArgumentError("build_region_graph: empty dataset");
  cfg.check(dim);

  RegionGraph g;
  {
    Fnv1a h;
    h.update_u64(static_cast<std::uint64_t>(n));
    h.update_u64(static_cast<std::uint64_t>(dim));
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < dim; ++j) h.update_double(X(i, j));
    g.data_fingerprint = h.digest();
  }

  Eigen::VectorXd root_lo = cfg.domain_lower ? *cfg.domain_lower
                                             : X.colwise().minCoeff().transpose();
  Eigen::VectorXd root_hi = cfg.domain_upper ? *cfg.domain_upper
                                             : X.colwise().maxCoeff().transpose();
  if (root_lo.size() != dim || root_hi.size() != dim ||
      (root_lo.array() > root_hi.array()).any())
    throw ArgumentError("build_region_graph: invalid domain box");
  const Eigen::VectorXd global_range = root_hi - root_lo;

  RegionGraph::RegionNode root;
  root.box.lower = root_lo;
  root.box.upper = root_hi;
  root.box.data_idx.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) root.box.data_idx[static_cast<std::size_t>(i)] = static_cast<int>(i);
  g.regions.push_back(std::move(root));

  std::map<std::string, int> box_to_region;
  box_to_region[detail::box_key(root_lo, root_hi)] = 0;

  Rng rng(cfg.rng_seed);
  std::deque<int> queue{0};
  while (!queue.empty()) {
    const int rid = queue.front();
    queue.pop_front();
    // Snapshot: g.regions may reallocate while children are appended.
    const Eigen::VectorXd lo = g.regions[static_cast<std::size_t>(rid)].box.lower;
    const Eigen::VectorXd hi = g.regions[static_cast<std::size_t>(rid)].box.upper;
    const std::vector<int> rows = g.regions[static_cast<std::size_t>(rid)].box.data_idx;
    if (static_cast<int>(rows.size()) < cfg.min_points) continue;

    std::vector<int> splittable;
    for (int d = 0; d < dim; ++d) {
      const double width = hi[d] - lo[d];
      const double resolution = std::max(
          cfg.min_width ? (*cfg.min_width)[d] : 0.0, 1e-9 * global_range[d]);
      if (width > resolution && global_range[d] > 0.0) splittable.push_back(d);
    }
    if (splittable.empty()) continue;  // indivisible

    std::vector<int> axes;
    for (int s = 0; s < cfg.partition_schemes; ++s) {
      const int d = splittable[static_cast<std::size_t>(
          rng.uniform_int(static_cast<int>(splittable.size())))];
      if (std::find(axes.begin(), axes.end(), d) == axes.end()) axes.push_back(d);
    }

    for (int axis : axes) {
      std::vector<double> positions;
      if (cfg.min_width) {
        const double delta = (*cfg.min_width)[axis];
        for (double p = lo[axis] + delta; p < hi[axis]; p += delta)
          positions.push_back(p);
      } else {
        const double width = hi[axis] - lo[axis];
        for (int k = 1; k < cfg.children_per_split; ++k) {
          const double p = lo[axis] + width * static_cast<double>(k) /
                                          static_cast<double>(cfg.children_per_split);
          if (p > lo[axis] && p < hi[axis]) positions.push_back(p);
        }
      }
      if (positions.empty()) continue;

      const int v = static_cast<int>(positions.size()) + 1;
      std::vector<std::vector<int>> child_rows(static_cast<std::size_t>(v));
      for (int r : rows) {
        const int k = detail::split_child_index(positions, X(r, axis));
        child_rows[static_cast<std::size_t>(k)].push_back(r);
      }
      // A split that leaves some child with the parent's whole point set
      // cannot make progress; treat the region as unsplittable this way.
      const bool degenerate = std::any_of(
          child_rows.begin(), child_rows.end(),
          [&](const std::vector<int>& cr) { return cr.size() == rows.size(); });
      if (degenerate) continue;

      RegionGraph::PartitionNode part;
      part.parent = rid;
      part.axis = axis;
      part.positions = positions;
      for (int k = 0; k < v; ++k) {
        Eigen::VectorXd clo = lo, chi = hi;
        clo[axis] = k == 0 ? lo[axis] : positions[static_cast<std::size_t>(k - 1)];
        chi[axis] = k == v - 1 ? hi[axis] : positions[static_cast<std::size_t>(k)];
        const std::string key = detail::box_key(clo, chi);
        auto it = box_to_region.find(key);
        int child_id;
        if (it != box_to_region.end()) {
          child_id = it->second;
        } else {
          RegionGraph::RegionNode child;
          child.box.lower = std::move(clo);
          child.box.upper = std::move(chi);
          child.box.data_idx = std::move(child_rows[static_cast<std::size_t>(k)]);
          child_id = static_cast<int>(g.regions.size());
          g.regions.push_back(std::move(child));
          box_to_region[key] = child_id;
          queue.push_back(child_id);
        }
        part.children.push_back(child_id);
      }
      const int pid = static_cast<int>(g.partitions.size());
      g.partitions.push_back(std::move(part));
      g.regions[static_cast<std::size_t>(rid)].partitions.push_back(pid);
    }
  }
  return g;
}

namespace detail {

inline KernelSpec instantiate_kernel(const KernelMenuEntry& entry, int input_dim,
                                     const Eigen::VectorXd& widths,
                                     double y_std) {
  const double sf = entry.sigma_f.value_or(y_std > 0.0 ? y_std : 1.0);
  auto width_or_one = [&](int d) {
    const double w = widths[d] / 2.0;
    return w > 0.0 ? w : 1.0;
  };
  switch (entry.family) {
    case KernelFamily::Linear:
      return KernelSpec::linear(input_dim, sf);
    case KernelFamily::SquaredExponentialARD: {
      KernelSpec s = KernelSpec::se_ard(input_dim, sf);
      for (int d = 0; d < input_dim; ++d)
        s.log_params[1 + d] = std::log(entry.lengthscale.value_or(width_or_one(d)));
      s.check();
      return s;
    }
    case KernelFamily::Matern: {
      KernelSpec s = KernelSpec::matern(input_dim, entry.nu, sf);
      for (int d = 0; d < input_dim; ++d)
        s.log_params[1 + d] = std::log(entry.lengthscale.value_or(width_or_one(d)));
      s.check();
      return s;
    }
    case KernelFamily::Periodic:
      return KernelSpec::periodic(sf, entry.lengthscale.value_or(width_or_one(0)),
                                  entry.period.value_or(width_or_one(0)));
  }
  throw ArgumentError("instantiate_kernel: unknown family");
}

}  // namespace detail

// SPN-GP assembly from a region graph: leaf regions carry one GP leaf per
// menu kernel under that region's sum node(s); partitions become split nodes
// built as cross products of one sum node per sub-region; every parent-region
// sum connects to every split node of its partitions. Weights start uniform.
inline SpnGp build_spn(const RegionGraph& graph, const Dataset& dataset,
                       const StructureConfig& cfg) {
  const int dim = dataset.dx();
  const int dy = dataset.dy();
  cfg.check(dim);
  {
    Fnv1a h;
    h.update_u64(static_cast<std::uint64_t>(dataset.n()));
    h.update_u64(static_cast<std::uint64_t>(dim));
    for (Eigen::Index i = 0; i < dataset.n(); ++i)
      for (Eigen::Index j = 0; j < dim; ++j) h.update_double(dataset.X(i, j));
    if (h.digest() != graph.data_fingerprint)
      throw ArgumentError("build_spn: region graph was built from different data");
  }

  SpnGp m;
  m.meta.input_dim = dim;
  m.meta.output_dim = dy;
  m.meta.data_fingerprint = dataset.fingerprint;
  m.meta.train_x = dataset.X;
  m.meta.train_y = dataset.Y;
  m.meta.y_center = dataset.Y.colwise().mean().transpose();

  const int n_kernels = static_cast<int>(cfg.kernel_menu.size());
  std::vector<int> sub_roots;

  for (int out = 0; out < dy; ++out) {
    const Eigen::VectorXd yc = m.centered_y(out);
    const double global_std = detail::sample_std(yc);

    // Sum node ids per region, in region order.
    std::vector<std::vector<int>> region_sums(graph.regions.size());

    for (int rid = 0; rid < static_cast<int>(graph.regions.size()); ++rid) {
      const auto& rnode = graph.regions[static_cast<std::size_t>(rid)];
      const bool is_root = rid == graph.root;
      const bool is_leaf_region = rnode.partitions.empty();
      const int n_sums = is_root ? 1 : cfg.sum_nodes_per_region;

      std::vector<int> leaf_ids;
      if (is_leaf_region) {
        const std::vector<int>& rows = rnode.box.data_idx;
        Eigen::MatrixXd bx(rows.size(), dim);
        Eigen::VectorXd by(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
          bx.row(static_cast<Eigen::Index>(i)) = dataset.X.row(rows[i]);
          by[static_cast<Eigen::Index>(i)] = yc[rows[i]];
        }
        double y_std = detail::sample_std(by);
        if (!(y_std > 0.0)) y_std = global_std > 0.0 ? global_std : 1.0;
        const Eigen::VectorXd widths = rnode.box.upper - rnode.box.lower;
        for (const KernelMenuEntry& entry : cfg.kernel_menu) {
          GpLeaf leaf;
          leaf.kernel = detail::instantiate_kernel(entry, dim, widths, y_std);
          leaf.log_noise = std::log(cfg.fixed_noise_std.value_or(
              std::max(cfg.noise_init_factor * y_std, 1e-8)));
          leaf.X = bx;
          leaf.y = by;
          leaf.region_id = rid;
          Region lr = rnode.box;
          leaf_ids.push_back(m.add_leaf_node(std::move(leaf), out, std::move(lr)));
        }
      }

      for (int s = 0; s < n_sums; ++s) {
        Node sum;
        sum.kind = NodeKind::Sum;
        sum.out_scope = {out};
        sum.region = rnode.box;
        if (is_leaf_region) {
          sum.children = leaf_ids;
          sum.log_weights.assign(leaf_ids.size(),
                                 -std::log(static_cast<double>(n_kernels)));
        }
        region_sums[static_cast<std::size_t>(rid)].push_back(m.add_node(std::move(sum)));
      }
    }

    // Split nodes per partition: cross products of child-region sum nodes.
    for (int rid = 0; rid < static_cast<int>(graph.regions.size()); ++rid) {
      const auto& rnode = graph.regions[static_cast<std::size_t>(rid)];
      if (rnode.partitions.empty()) continue;
      std::vector<int> split_ids;
      for (int pid : rnode.partitions) {
        const auto& part = graph.partitions[static_cast<std::size_t>(pid)];
        double combos = 1.0;
        for (int child : part.children)
          combos *= static_cast<double>(
              region_sums[static_cast<std::size_t>(child)].size());
        if (combos > cfg.max_splits_per_partition)
          throw CapacityError(
              "build_spn: partition would create " + std::to_string(combos) +
              " split nodes, cap is " + std::to_string(cfg.max_splits_per_partition));

        std::vector<std::size_t> pick(part.children.size(), 0);
        for (;;) {
          Node split;
          split.kind = NodeKind::Split;
          split.axis = part.axis;
          split.thresholds = part.positions;
          split.out_scope = {out};
          split.region = rnode.box;
          for (std::size_t k = 0; k < part.children.size(); ++k)
            split.children.push_back(
                region_sums[static_cast<std::size_t>(part.children[k])][pick[k]]);
          split_ids.push_back(m.add_node(std::move(split)));
          // Advance the mixed-radix counter over sum-node choices.
          std::size_t k = 0;
          for (; k < pick.size(); ++k) {
            const std::size_t radix =
                region_sums[static_cast<std::size_t>(part.children[k])].size();
            if (++pick[k] < radix) break;
            pick[k] = 0;
          }
          if (k == pick.size()) break;
        }
      }
      for (int sum_id : region_sums[static_cast<std::size_t>(rid)]) {
        Node& sum = m.node(sum_id);
        sum.children = split_ids;
        sum.log_weights.assign(split_ids.size(),
                               -std::log(static_cast<double>(split_ids.size())));
      }
    }
    sub_roots.push_back(region_sums[static_cast<std::size_t>(graph.root)][0]);
  }

  if (dy == 1) {
    m.root = sub_roots[0];
  } else {
    Node prod;
    prod.kind = NodeKind::Product;
    prod.children = sub_roots;
    for (int j = 0; j < dy; ++j) prod.out_scope.push_back(j);
    prod.region = graph.regions[static_cast<std::size_t>(graph.root)].box;
    m.root = m.add_node(std::move(prod));
  }
  return m;
}

// Appends, for every leaf region face shared with a sibling, the nearest
// points from the far side of the face (count or radius rule) as overlap
// rows. Overlap rows extend each leaf's conditioning set; the leaf evidence
// excludes them, so sum-weight updates are unaffected.
inline void assign_overlap(SpnGp& m, const Dataset& dataset,
                           const StructureConfig& cfg) {
  if (cfg.overlap == OverlapMode::None)
    throw ArgumentError("assign_overlap: overlap mode is none");
  for (const GpLeaf& leaf : m.leaves)
    if (leaf.fitted())
      throw StateError("assign_overlap: leaves must not be fitted yet");

  const Node& root = m.node(m.root);
  const Eigen::VectorXd& root_lo = root.region.lower;
  const Eigen::VectorXd& root_hi = root.region.upper;
  const int dim = m.meta.input_dim;

  // Overlap rows depend only on the region box, so cache per box.
  std::map<std::string, std::vector<int>> cache;
  for (Node& nd : m.nodes) {
    if (nd.kind != NodeKind::Leaf) continue;
    const std::string key = detail::box_key(nd.region.lower, nd.region.upper);
    auto it = cache.find(key);
    if (it == cache.end()) {
      std::vector<std::pair<double, int>> picked;  // (distance, row)
      std::vector<char> taken(static_cast<std::size_t>(dataset.n()), 0);
      for (int r : nd.region.data_idx) taken[static_cast<std::size_t>(r)] = 1;
      for (int axis = 0; axis < dim; ++axis) {
        for (int side = 0; side < 2; ++side) {
          const double face = side == 0 ? nd.region.lower[axis] : nd.region.upper[axis];
          if (face == root_lo[axis] || face == root_hi[axis]) continue;  // outer wall
          std::vector<std::pair<double, int>> cand;
          for (Eigen::Index r = 0; r < dataset.n(); ++r) {
            if (taken[static_cast<std::size_t>(r)]) continue;
            const double v = dataset.X(r, axis);
            const bool far_side = side == 0 ? v < face : v >= face;
            if (!far_side) continue;
            bool in_slab = true;
            for (int e = 0; e < dim && in_slab; ++e) {
              if (e == axis) continue;
              const double w = dataset.X(r, e);
              if (w < nd.region.lower[e] || w > nd.region.upper[e]) in_slab = false;
            }
            if (!in_slab) continue;
            cand.emplace_back(std::abs(v - face), static_cast<int>(r));
          }
          std::sort(cand.begin(), cand.end());
          std::size_t take = cand.size();
          if (cfg.overlap == OverlapMode::Count)
            take = std::min<std::size_t>(take, static_cast<std::size_t>(
                                                   std::max(0.0, cfg.overlap_value)));
          else
            take = static_cast<std::size_t>(
                std::count_if(cand.begin(), cand.end(), [&](const auto& c) {
                  return c.first <= cfg.overlap_value;
                }));
          for (std::size_t i = 0; i < take; ++i) {
            if (!taken[static_cast<std::size_t>(cand[i].second)]) {
              taken[static_cast<std::size_t>(cand[i].second)] = 1;
              picked.push_back(cand[i]);
            }
          }
        }
      }
      std::vector<int> rows;
      rows.reserve(picked.size());
      for (const auto& [dist, r] : picked) rows.push_back(r);
      std::sort(rows.begin(), rows.end());
      it = cache.emplace(key, std::move(rows)).first;
    }
    const std::vector<int>& extra = it->second;
    if (extra.empty()) continue;
    nd.region.overlap_idx = extra;
    GpLeaf& leaf = m.leaves[static_cast<std::size_t>(nd.leaf)];
    const int out = nd.out_scope[0];
    const Eigen::VectorXd yc = m.centered_y(out);
    const Eigen::Index n0 = leaf.X.rows();
    leaf.X.conservativeResize(n0 + static_cast<Eigen::Index>(extra.size()), Eigen::NoChange);
    leaf.y.conservativeResize(n0 + static_cast<Eigen::Index>(extra.size()));
    for (std::size_t i = 0; i < extra.size(); ++i) {
      leaf.X.row(n0 + static_cast<Eigen::Index>(i)) = dataset.X.row(extra[i]);
      leaf.y[n0 + static_cast<Eigen::Index>(i)] = yc[extra[i]];
    }
    leaf.overlap_count = static_cast<int>(extra.size());
  }
}

// Diagnostic: actual cubic fit cost of the leaf blocks against the uniform
// data bound S*K*N^3/2^E. Convention: E = 2*log2(prod of split fan-outs on
// the deepest root-to-leaf path), which makes the bound exact for balanced
// splits of uniform data; S is taken as 1 (one splitting scheme).
struct ComplexityReport {
  std::vector<Eigen::Index> leaf_sizes;
  double actual_cost = 0.0;
  double uniform_cost = 0.0;
  double paper_bound = 0.0;
  double depth_exponent = 0.0;
  Eigen::Index max_block = 0;
  Eigen::Index total_rows = 0;
  bool bound_met = false;
};

inline ComplexityReport complexity_report(const SpnGp& m) {
  ComplexityReport rep;
  const double n = static_cast<double>(m.node(m.root).region.data_idx.size());
  rep.total_rows = static_cast<Eigen::Index>(n);

  for (const GpLeaf& leaf : m.leaves) {
    rep.leaf_sizes.push_back(leaf.rows());
    rep.actual_cost += std::pow(static_cast<double>(leaf.rows()), 3.0);
    rep.max_block = std::max(rep.max_block, leaf.rows());
  }

  // Uniform-data fraction reaching each node: split children divide their
  // parent's share by the fan-out; sums and products pass it through.
  std::vector<double> frac(m.nodes.size(), 0.0);
  frac[static_cast<std::size_t>(m.root)] = 1.0;
  std::vector<int> order;
  std::vector<char> seen(m.nodes.size(), 0);
  auto dfs = [&](auto&& self, int id) -> void {
    if (seen[static_cast<std::size_t>(id)]) return;
    seen[static_cast<std::size_t>(id)] = 1;
    for (int ch : m.node(id).children) self(self, ch);
    order.push_back(id);
  };
  dfs(dfs, m.root);
  std::reverse(order.begin(), order.end());
  for (int id : order) {
    const Node& nd = m.node(id);
    const double f = frac[static_cast<std::size_t>(id)];
    for (int ch : nd.children) {
      const double share =
          nd.kind == NodeKind::Split
              ? f / static_cast<double>(nd.children.size())
              : f;
      auto& fc = frac[static_cast<std::size_t>(ch)];
      fc = std::max(fc, share);
    }
  }

  double min_frac = 1.0;
  int kernels_per_region = 0;
  std::map<std::string, int> leaves_per_box;
  for (const Node& nd : m.nodes) {
    if (nd.kind != NodeKind::Leaf) continue;
    const double f = frac[static_cast<std::size_t>(nd.id)];
    rep.uniform_cost += std::pow(n * f, 3.0);
    min_frac = std::min(min_frac, f);
    const int c = ++leaves_per_box[detail::box_key(nd.region.lower, nd.region.upper) +
                                   std::to_string(nd.out_scope[0])];
    kernels_per_region = std::max(kernels_per_region, c);
  }
  rep.depth_exponent = min_frac > 0.0 ? 2.0 * std::log2(1.0 / min_frac) : 0.0;
  const int dy = std::max(1, m.meta.output_dim);
  rep.paper_bound = static_cast<double>(dy) *
                    static_cast<double>(std::max(1, kernels_per_region)) *
                    std::pow(n, 3.0) / std::pow(2.0, rep.depth_exponent);
  rep.bound_met = rep.actual_cost <= rep.paper_bound * (1.0 + 1e-9);
  return rep;
}

}  // namespace spngp
