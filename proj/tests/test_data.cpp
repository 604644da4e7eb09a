#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "spngp/data.hpp"

using namespace spngp;
using Catch::Approx;

namespace {

struct TempCsv {
  std::string path;
  explicit TempCsv(const std::string& contents) {
    path = std::string(std::tmpnam(nullptr)) + ".csv";
    std::ofstream out(path);
    out << contents;
  }
  ~TempCsv() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("csv ingestion shapes and column routing", "[data]") {
  TempCsv f("x1,x2,y\n1,2,3\n4,5,6\n7,8,9\n");
  const Dataset ds = load_csv(f.path, {"y"});
  REQUIRE(ds.X.rows() == 3);
  REQUIRE(ds.X.cols() == 2);
  REQUIRE(ds.Y.cols() == 1);
  REQUIRE(ds.X(1, 0) == 4.0);
  REQUIRE(ds.Y(2, 0) == 9.0);
  REQUIRE(ds.feature_names == std::vector<std::string>{"x1", "x2"});
  REQUIRE(ds.rejected_rows == 0);
}

TEST_CASE("csv errors name the offending cell", "[data]") {
  TempCsv f("x1,y\n1,2\nfoo,4\n");
  try {
    load_csv(f.path, {"y"});
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    REQUIRE(msg.find("row 3") != std::string::npos);
    REQUIRE(msg.find("x1") != std::string::npos);
  }
  TempCsv missing_target("a,b\n1,2\n");
  REQUIRE_THROWS_AS(load_csv(missing_target.path, {"y"}), ArgumentError);
  TempCsv empty("");
  REQUIRE_THROWS_AS(load_csv(empty.path, {"y"}), ParseError);
}

TEST_CASE("rows with missing values are rejected and counted", "[data]") {
  TempCsv f("x1,y\n1,2\n,3\n4,NaN\n5,6\n");
  const Dataset ds = load_csv(f.path, {"y"});
  REQUIRE(ds.n() == 2);
  REQUIRE(ds.rejected_rows == 2);
  REQUIRE(ds.X(0, 0) == 1.0);
  REQUIRE(ds.X(1, 0) == 5.0);
}

TEST_CASE("energy-shaped file loads with the table dimensions", "[data]") {
  const Dataset gen = make_energy_like(1);
  std::ostringstream csv;
  csv << "x1,x2,x3,x4,x5,x6,x7,x8,heating,cooling\n";
  csv << std::setprecision(17);
  for (Eigen::Index i = 0; i < gen.n(); ++i) {
    for (int j = 0; j < 8; ++j) csv << gen.X(i, j) << ',';
    csv << gen.Y(i, 0) << ',' << gen.Y(i, 1) << '\n';
  }
  TempCsv f(csv.str());
  const Dataset ds = load_csv(f.path, {"heating", "cooling"});
  REQUIRE(ds.n() == 768);
  REQUIRE(ds.dx() == 8);
  REQUIRE(ds.dy() == 2);
  // 17 significant digits round-trip doubles exactly
  REQUIRE(ds.fingerprint == gen.fingerprint);
}

TEST_CASE("train/test split is seeded, disjoint and exhaustive", "[data]") {
  Rng rng(3);
  Dataset ds;
  ds.X.resize(10, 1);
  ds.Y.resize(10, 1);
  for (int i = 0; i < 10; ++i) {
    ds.X(i, 0) = i;
    ds.Y(i, 0) = rng.normal();
  }
  ds.refresh_fingerprint();
  auto [train, test] = train_test_split(ds, 0.8, 7);
  REQUIRE(train.n() == 8);
  REQUIRE(test.n() == 2);
  double sum = train.X.col(0).sum() + test.X.col(0).sum();
  REQUIRE(sum == Approx(45.0));  // exhaustive: 0+..+9

  auto [train2, test2] = train_test_split(ds, 0.8, 7);
  REQUIRE(train2.fingerprint == train.fingerprint);  // same seed, same split

  Dataset big;
  big.X.resize(100, 1);
  big.Y.resize(100, 1);
  for (int i = 0; i < 100; ++i) {
    big.X(i, 0) = i;
    big.Y(i, 0) = i;
  }
  big.refresh_fingerprint();
  auto [a1, b1] = train_test_split(big, 0.8, 1);
  auto [a2, b2] = train_test_split(big, 0.8, 2);
  REQUIRE(a1.fingerprint != a2.fingerprint);  // different permutations

  REQUIRE_THROWS_AS(train_test_split(ds, 0.0, 1), ArgumentError);
}

TEST_CASE("piecewise generator is regression-pinned", "[data]") {
  const Dataset ds = gen_piecewise(42, 400);
  REQUIRE(to_hex(ds.fingerprint) == "11570b145a84624d");
  REQUIRE(ds.n() == 400);
  REQUIRE((ds.X.array() >= 0.0).all());
  REQUIRE((ds.X.array() <= 60.0).all());
  REQUIRE_THROWS_AS(gen_piecewise(1, 5), ArgumentError);
}

TEST_CASE("noise functions match their closed forms at the extremes", "[data]") {
  REQUIRE(piecewise_noise_std(0.0) == Approx(0.37));
  REQUIRE(piecewise_noise_std(59.0) == Approx(0.555));
  REQUIRE(hetero_noise_std(0.0) == Approx(0.05));
  REQUIRE(hetero_noise_std(10.0) == Approx(0.5));
  // latent continuity at the regime boundary
  REQUIRE(piecewise_latent(30.0 - 1e-9) == Approx(piecewise_latent(30.0)).margin(1e-6));
}

TEST_CASE("windowed residual std approximates the true noise", "[data][slow]") {
  const HeteroscedasticData gen = gen_heteroscedastic(11, 2000);
  for (double x0 : {2.0, 8.0}) {
    std::vector<double> res;
    for (Eigen::Index i = 0; i < gen.data.n(); ++i) {
      const double x = gen.data.X(i, 0);
      if (std::abs(x - x0) < 0.25)
        res.push_back(gen.data.Y(i, 0) - hetero_latent(x));
    }
    REQUIRE(res.size() > 30);
    double ss = 0.0;
    for (double r : res) ss += r * r;
    const double sd = std::sqrt(ss / static_cast<double>(res.size()));
    const double truth = hetero_noise_std(x0);
    REQUIRE(std::abs(sd - truth) / truth < 0.30);
  }
  // the generator also reports sigma(x_i) alongside the data
  for (Eigen::Index i = 0; i < 50; ++i)
    REQUIRE(gen.true_noise_std[i] == Approx(hetero_noise_std(gen.data.X(i, 0))));
}

TEST_CASE("benchmark stand-ins have the published shapes", "[data]") {
  const Dataset energy = make_energy_like(5);
  REQUIRE(energy.n() == 768);
  REQUIRE(energy.dx() == 8);
  REQUIRE(energy.dy() == 2);
  const Dataset ccpp = make_ccpp_like(5);
  REQUIRE(ccpp.n() == 9568);
  REQUIRE(ccpp.dx() == 4);
  REQUIRE(ccpp.dy() == 1);
}
