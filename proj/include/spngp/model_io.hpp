#pragma once

#include <Eigen/Dense>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "spngp/common.hpp"
#include "spngp/graph.hpp"

namespace spngp {

inline constexpr int kModelFormatVersion = 1;
inline constexpr const char* kModelFormatName = "spngp-model";

namespace detail {

using json = nlohmann::json;

// Region bounds may be +-inf, which JSON numbers cannot carry; encode those
// as tagged strings. Finite doubles round-trip exactly through nlohmann.
inline json bound_to_json(double v) {
  if (std::isfinite(v)) return v;
  return v > 0 ? "inf" : "-inf";
}

inline double bound_from_json(const json& j) {
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw ParseError("model: bad region bound \"" + s + "\"");
  }
  return j.get<double>();
}

inline json vec_to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline Eigen::VectorXd vec_from_json(const json& a) {
  Eigen::VectorXd v(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
  return v;
}

inline json mat_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

inline Eigen::MatrixXd mat_from_json(const json& a, Eigen::Index cols_hint) {
  const Eigen::Index rows = static_cast<Eigen::Index>(a.size());
  Eigen::Index cols = cols_hint;
  if (rows > 0) cols = static_cast<Eigen::Index>(a[0].size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j)
      m(i, j) = a[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)].get<double>();
  return m;
}

inline json region_to_json(const Region& r) {
  json j;
  json lo = json::array(), hi = json::array();
  for (Eigen::Index d = 0; d < r.lower.size(); ++d) {
    lo.push_back(bound_to_json(r.lower[d]));
    hi.push_back(bound_to_json(r.upper[d]));
  }
  j["lower"] = std::move(lo);
  j["upper"] = std::move(hi);
  j["rows"] = r.data_idx;
  j["overlap"] = r.overlap_idx;
  return j;
}

inline Region region_from_json(const json& j) {
  Region r;
  const auto& lo = j.at("lower");
  const auto& hi = j.at("upper");
  r.lower.resize(static_cast<Eigen::Index>(lo.size()));
  r.upper.resize(static_cast<Eigen::Index>(hi.size()));
  for (std::size_t d = 0; d < lo.size(); ++d) {
    r.lower[static_cast<Eigen::Index>(d)] = bound_from_json(lo[d]);
    r.upper[static_cast<Eigen::Index>(d)] = bound_from_json(hi[d]);
  }
  r.data_idx = j.at("rows").get<std::vector<int>>();
  r.overlap_idx = j.at("overlap").get<std::vector<int>>();
  return r;
}

}  // namespace detail

inline nlohmann::json model_to_json(const SpnGp& m,
                                    const std::string& config_fingerprint = "") {
  using detail::json;
  json doc;
  doc["format"] = kModelFormatName;
  doc["format_version"] = kModelFormatVersion;
  doc["library_version"] = kLibraryVersion;
  doc["config_fingerprint"] = config_fingerprint;
  doc["posterior_applied"] = m.posterior_applied;
  doc["root"] = m.root;

  json meta;
  meta["input_dim"] = m.meta.input_dim;
  meta["output_dim"] = m.meta.output_dim;
  meta["y_center"] = detail::vec_to_json(m.meta.y_center);
  meta["data_fingerprint"] = to_hex(m.meta.data_fingerprint);
  meta["x"] = detail::mat_to_json(m.meta.train_x);
  meta["y"] = detail::mat_to_json(m.meta.train_y);
  doc["train_meta"] = std::move(meta);

  json nodes = json::array();
  for (const Node& nd : m.nodes) {
    json n;
    n["id"] = nd.id;
    n["kind"] = node_kind_name(nd.kind);
    n["scope"] = nd.out_scope;
    n["region"] = detail::region_to_json(nd.region);
    switch (nd.kind) {
      case NodeKind::Sum:
        n["children"] = nd.children;
        n["log_weights"] = nd.log_weights;
        break;
      case NodeKind::Product:
        n["children"] = nd.children;
        break;
      case NodeKind::Split:
        n["children"] = nd.children;
        n["axis"] = nd.axis;
        n["thresholds"] = nd.thresholds;
        break;
      case NodeKind::Leaf: {
        const GpLeaf& leaf = m.leaves[static_cast<std::size_t>(nd.leaf)];
        json k;
        k["family"] = family_name(leaf.kernel.family);
        k["nu"] = leaf.kernel.nu;
        k["log_params"] = detail::vec_to_json(leaf.kernel.log_params);
        n["kernel"] = std::move(k);
        n["log_noise"] = leaf.log_noise;
        n["region_id"] = leaf.region_id;
        break;
      }
    }
    nodes.push_back(std::move(n));
  }
  doc["nodes"] = std::move(nodes);
  return doc;
}

// Rebuilds the model, reconstructing each leaf's data block from the stored
// training arrays and the leaf's row indices, then refits every leaf (caches
// are never persisted).
inline SpnGp model_from_json(const nlohmann::json& doc, int jobs = 1) {
  using detail::json;
  if (!doc.contains("format") || doc.at("format") != kModelFormatName)
    throw ParseError("model: not a " + std::string(kModelFormatName) + " file");
  if (doc.at("format_version").get<int>() != kModelFormatVersion)
    throw ParseError("model: format version " +
                     doc.at("format_version").dump() + " is not supported (" +
                     "expected " + std::to_string(kModelFormatVersion) + ")");

  SpnGp m;
  m.root = doc.at("root").get<int>();
  m.posterior_applied = doc.at("posterior_applied").get<bool>();
  const json& meta = doc.at("train_meta");
  m.meta.input_dim = meta.at("input_dim").get<int>();
  m.meta.output_dim = meta.at("output_dim").get<int>();
  m.meta.y_center = detail::vec_from_json(meta.at("y_center"));
  m.meta.data_fingerprint = std::stoull(meta.at("data_fingerprint").get<std::string>(),
                                        nullptr, 16);
  m.meta.train_x = detail::mat_from_json(meta.at("x"), m.meta.input_dim);
  m.meta.train_y = detail::mat_from_json(meta.at("y"), m.meta.output_dim);

  for (const json& n : doc.at("nodes")) {
    Node nd;
    nd.id = n.at("id").get<int>();
    const std::string kind = n.at("kind").get<std::string>();
    nd.out_scope = n.at("scope").get<std::vector<int>>();
    nd.region = detail::region_from_json(n.at("region"));
    if (kind == "sum") {
      nd.kind = NodeKind::Sum;
      nd.children = n.at("children").get<std::vector<int>>();
      nd.log_weights = n.at("log_weights").get<std::vector<double>>();
    } else if (kind == "product") {
      nd.kind = NodeKind::Product;
      nd.children = n.at("children").get<std::vector<int>>();
    } else if (kind == "split") {
      nd.kind = NodeKind::Split;
      nd.children = n.at("children").get<std::vector<int>>();
      nd.axis = n.at("axis").get<int>();
      nd.thresholds = n.at("thresholds").get<std::vector<double>>();
    } else if (kind == "leaf") {
      nd.kind = NodeKind::Leaf;
      GpLeaf leaf;
      const json& k = n.at("kernel");
      leaf.kernel.family = family_from_name(k.at("family").get<std::string>());
      leaf.kernel.nu = k.at("nu").get<double>();
      leaf.kernel.log_params = detail::vec_from_json(k.at("log_params"));
      leaf.kernel.input_dim = m.meta.input_dim;
      leaf.log_noise = n.at("log_noise").get<double>();
      leaf.region_id = n.at("region_id").get<int>();
      if (nd.out_scope.size() != 1)
        throw ParseError("model: leaf node " + std::to_string(nd.id) +
                         " must have a single-output scope");
      const int out = nd.out_scope[0];
      if (out < 0 || out >= m.meta.output_dim)
        throw ParseError("model: leaf node " + std::to_string(nd.id) +
                         " scope out of range");
      std::vector<int> rows = nd.region.data_idx;
      rows.insert(rows.end(), nd.region.overlap_idx.begin(),
                  nd.region.overlap_idx.end());
      leaf.X.resize(static_cast<Eigen::Index>(rows.size()), m.meta.input_dim);
      leaf.y.resize(static_cast<Eigen::Index>(rows.size()));
      const double center = m.meta.y_center.size() > out ? m.meta.y_center[out] : 0.0;
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= m.meta.train_x.rows())
          throw ParseError("model: leaf node " + std::to_string(nd.id) +
                           " references row " + std::to_string(rows[i]) +
                           " outside the stored training data");
        leaf.X.row(static_cast<Eigen::Index>(i)) = m.meta.train_x.row(rows[i]);
        leaf.y[static_cast<Eigen::Index>(i)] = m.meta.train_y(rows[i], out) - center;
      }
      leaf.overlap_count = static_cast<int>(nd.region.overlap_idx.size());
      nd.leaf = static_cast<int>(m.leaves.size());
      m.leaves.push_back(std::move(leaf));
    } else {
      throw ParseError("model: unknown node kind \"" + kind + "\"");
    }
    if (nd.id != static_cast<int>(m.nodes.size()))
      throw ParseError("model: node ids must be dense and ordered");
    m.nodes.push_back(std::move(nd));
  }
  m.fit_all_leaves(jobs);
  return m;
}

inline void save_model(const SpnGp& m, const std::string& path,
                       const std::string& config_fingerprint = "") {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("model: cannot write " + path);
  out << model_to_json(m, config_fingerprint).dump(1) << '\n';
}

inline SpnGp load_model(const std::string& path, int jobs = 1) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("model: cannot open " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("model: malformed JSON in " + path + ": " + e.what());
  }
  return model_from_json(doc, jobs);
}

}  // namespace spngp
