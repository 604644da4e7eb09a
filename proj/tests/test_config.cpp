#include <catch2/catch_amalgamated.hpp>

#include "spngp/config.hpp"

using namespace spngp;
using nlohmann::json;

namespace {

json minimal_config() {
  return json::parse(R"({
    "version": 1,
    "seed": 42,
    "dataset": {"synthetic": {"name": "piecewise", "n": 100}},
    "structure": {
      "min_points": 20,
      "children_per_split": 2,
      "kernels": [{"family": "linear"}, {"family": "se_ard"}]
    }
  })");
}

}  // namespace

TEST_CASE("minimal config parses with defaults", "[config]") {
  const ExperimentConfig cfg = config_from_json(minimal_config());
  REQUIRE(cfg.seed == 42);
  REQUIRE(cfg.dataset.synthetic == "piecewise");
  REQUIRE(cfg.structure.min_points == 20);
  REQUIRE(cfg.structure.kernel_menu.size() == 2);
  REQUIRE(cfg.structure.kernel_menu[0].family == KernelFamily::Linear);
  REQUIRE_FALSE(cfg.optimizer.has_value());
  REQUIRE(cfg.runs == 5);
  REQUIRE(cfg.train_fraction == 0.8);
  REQUIRE_FALSE(cfg.fingerprint.empty());
}

TEST_CASE("full config parses every section", "[config]") {
  json doc = minimal_config();
  doc["optimizer"] = {{"mode", "tied"}, {"max_iters", 50}, {"restarts", 1}};
  doc["structure"]["overlap"] = {{"mode", "count"}, {"value", 3}};
  doc["structure"]["fixed_noise_std"] = 0.37;
  doc["structure"]["sum_nodes_per_region"] = 2;
  doc["runs"] = 3;
  doc["gp_feasibility_cap"] = 500;
  doc["sweep_min_points"] = {100, 50};
  const ExperimentConfig cfg = config_from_json(doc);
  REQUIRE(cfg.optimizer->tie_mode == TieMode::TiedPerKernelFamily);
  REQUIRE(cfg.optimizer->max_iters == 50);
  REQUIRE(cfg.structure.overlap == OverlapMode::Count);
  REQUIRE(cfg.structure.fixed_noise_std.has_value());
  REQUIRE(*cfg.structure.fixed_noise_std == 0.37);
  REQUIRE(cfg.gp_feasibility_cap == 500);
  REQUIRE(cfg.sweep_min_points == std::vector<int>{100, 50});
}

TEST_CASE("unknown keys are rejected at every level", "[config]") {
  {
    json doc = minimal_config();
    doc["tyop"] = 1;
    REQUIRE_THROWS_AS(config_from_json(doc), ParseError);
  }
  {
    json doc = minimal_config();
    doc["structure"]["min_pionts"] = 10;
    REQUIRE_THROWS_AS(config_from_json(doc), ParseError);
  }
  {
    json doc = minimal_config();
    doc["structure"]["kernels"][0]["sigmaf"] = 1.0;
    REQUIRE_THROWS_AS(config_from_json(doc), ParseError);
  }
  {
    json doc = minimal_config();
    doc["optimizer"] = {{"mod", "tied"}};
    REQUIRE_THROWS_AS(config_from_json(doc), ParseError);
  }
}

TEST_CASE("seed and version are mandatory", "[config]") {
  {
    json doc = minimal_config();
    doc.erase("seed");
    REQUIRE_THROWS_AS(config_from_json(doc), ParseError);
  }
  {
    json doc = minimal_config();
    doc.erase("version");
    REQUIRE_THROWS_AS(config_from_json(doc), ParseError);
  }
  {
    json doc = minimal_config();
    doc["version"] = 2;
    REQUIRE_THROWS_AS(config_from_json(doc), ParseError);
  }
}

TEST_CASE("dataset source must be exactly one of csv/synthetic", "[config]") {
  {
    json doc = minimal_config();
    doc["dataset"] = json::object();
    REQUIRE_THROWS_AS(config_from_json(doc), ParseError);
  }
  {
    json doc = minimal_config();
    doc["dataset"]["csv"] = {{"path", "x.csv"}, {"targets", {"y"}}};
    REQUIRE_THROWS_AS(config_from_json(doc), ParseError);
  }
  {
    json doc = minimal_config();
    doc["dataset"] = {{"csv", {{"path", "x.csv"}, {"targets", {"y"}}, {"delimiter", ";;"}}}};
    REQUIRE_THROWS_AS(config_from_json(doc), ParseError);
  }
}

TEST_CASE("split mode exclusivity is enforced", "[config]") {
  json doc = minimal_config();
  doc["structure"]["min_width"] = {0.5};
  REQUIRE_THROWS_AS(config_from_json(doc), ParseError);  // both modes present
  doc["structure"].erase("children_per_split");
  const ExperimentConfig cfg = config_from_json(doc);
  REQUIRE(cfg.structure.min_width.has_value());
}

TEST_CASE("synthetic datasets dispatch by name", "[config]") {
  for (const std::string name :
       {"piecewise", "heteroscedastic", "smooth1d"}) {
    json doc = minimal_config();
    doc["dataset"]["synthetic"]["name"] = name;
    doc["dataset"]["synthetic"]["n"] = 64;
    const Dataset ds = load_dataset(config_from_json(doc));
    REQUIRE(ds.n() == 64);
  }
  json doc = minimal_config();
  doc["dataset"]["synthetic"]["name"] = "nope";
  REQUIRE_THROWS_AS(load_dataset(config_from_json(doc)), ParseError);
}

TEST_CASE("config fingerprints distinguish documents", "[config]") {
  const ExperimentConfig a = config_from_json(minimal_config());
  json doc = minimal_config();
  doc["seed"] = 43;
  const ExperimentConfig b = config_from_json(doc);
  REQUIRE(a.fingerprint != b.fingerprint);
  const ExperimentConfig c = config_from_json(minimal_config());
  REQUIRE(a.fingerprint == c.fingerprint);
}
