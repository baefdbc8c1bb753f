#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ffsm/error.hpp"
#include "ffsm/factors.hpp"
#include "ffsm/random.hpp"
#include "oracles.hpp"

using namespace ffsm;

namespace {

FactorTable make_table(const std::vector<std::vector<double>>& columns) {
  FactorTable t;
  t.rows = columns.front().size();
  for (std::size_t c = 0; c < columns.size(); ++c) t.names.push_back("x" + std::to_string(c + 1));
  t.values.resize(t.rows * columns.size());
  for (std::size_t r = 0; r < t.rows; ++r) {
    for (std::size_t c = 0; c < columns.size(); ++c) t.values[r * columns.size() + c] = columns[c][r];
  }
  return t;
}

// Walsh columns on n = 16 rows: centred and mutually orthogonal.
std::vector<double> walsh(std::size_t k) {
  std::vector<double> v(16);
  for (std::size_t i = 0; i < 16; ++i) v[i] = (__builtin_popcountll(i & k) % 2 == 0) ? 1.0 : -1.0;
  return v;
}

// Two columns with sample correlation exactly r (up to rounding).
FactorTable correlated_pair(double r) {
  const auto u = walsh(1);
  const auto v = walsh(2);
  std::vector<double> y(16);
  for (std::size_t i = 0; i < 16; ++i) y[i] = r * u[i] + std::sqrt(1.0 - r * r) * v[i];
  return make_table({u, y});
}

std::vector<std::vector<double>> gaussian_columns(std::size_t n, std::size_t f, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<double>> cols(f, std::vector<double>(n));
  for (auto& c : cols) {
    for (double& v : c) v = normal(rng);
  }
  return cols;
}

}  // namespace

// ---------------------------------------------------------------------------
// Pearson

TEST(Pearson, SelfAndNegation) {
  const auto cols = gaussian_columns(50, 1, 1);
  std::vector<double> neg(cols[0]);
  for (double& v : neg) v = -v;
  const auto m = pearson_matrix(make_table({cols[0], cols[0], neg}));
  EXPECT_NEAR(m.at(0, 1), 1.0, 1e-12);
  EXPECT_NEAR(m.at(0, 2), -1.0, 1e-12);
}

TEST(Pearson, HandValue) {
  const auto m = pearson_matrix(make_table({{1, 2, 3, 4}, {1, 2, 2, 4}}));
  // Centred cross product 4.5, sums of squares 5 and 4.75.
  EXPECT_NEAR(m.at(0, 1), 4.5 / std::sqrt(5.0 * 4.75), 1e-12);
  EXPECT_NEAR(m.at(0, 1), 0.92338, 5e-6);
}

TEST(Pearson, SymmetricUnitDiagonalAndMatchesNaive) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto cols = gaussian_columns(40, 6, seed);
    for (std::size_t i = 0; i < 40; ++i) cols[3][i] += 0.8 * cols[1][i];
    const auto m = pearson_matrix(make_table(cols));
    for (std::size_t i = 0; i < 6; ++i) {
      EXPECT_DOUBLE_EQ(m.at(i, i), 1.0);
      for (std::size_t j = 0; j < 6; ++j) {
        EXPECT_EQ(m.at(i, j), m.at(j, i));
        EXPECT_LE(std::abs(m.at(i, j)), 1.0);
        EXPECT_NEAR(m.at(i, j), ffsm::testing::naive_pearson(cols[i], cols[j]), 1e-12);
      }
    }
  }
}

TEST(Pearson, ZeroVarianceFactorIsUndefined) {
  const auto m = pearson_matrix(make_table({{1, 2, 3, 4}, {5, 5, 5, 5}}));
  EXPECT_TRUE(m.defined[0]);
  EXPECT_FALSE(m.defined[1]);
  EXPECT_EQ(m.at(0, 1), 0.0);
}

// ---------------------------------------------------------------------------
// VIF

TEST(Vif, OrthogonalFactorsAreOne) {
  const auto v = vif(make_table({walsh(1), walsh(2), walsh(4), walsh(8), walsh(3)}));
  for (const auto& x : v) EXPECT_NEAR(x.value, 1.0, 1e-9);
}

TEST(Vif, DuplicatedFactorIsInfinite) {
  auto cols = gaussian_columns(30, 3, 2);
  cols.push_back(cols[0]);
  const auto v = vif(make_table(cols));
  EXPECT_TRUE(v[0].infinite());
  EXPECT_TRUE(v[3].infinite());
  EXPECT_FALSE(v[1].infinite());
  EXPECT_FALSE(v[2].infinite());
}

TEST(Vif, NearCollinearMatchesQrOracle) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto cols = gaussian_columns(200, 3, 10 + seed);
    Rng rng(100 + seed);
    for (std::size_t i = 0; i < 200; ++i) cols[2][i] = cols[0][i] + cols[1][i] + 0.01 * normal(rng);
    const auto table = make_table(cols);
    const auto got = vif(table);
    const auto want = ffsm::testing::qr_vif(table);
    for (std::size_t j = 0; j < 3; ++j) {
      EXPECT_GT(got[j].value, 100.0);
      EXPECT_NEAR(got[j].value / want[j], 1.0, 1e-6) << "seed " << seed << " factor " << j;
    }
  }
}

TEST(Vif, RandomTablesMatchQrOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const std::size_t f = 2 + seed % 7;
    auto cols = gaussian_columns(200, f, 50 + seed);
    for (std::size_t i = 0; i < 200; ++i) cols[f - 1][i] += 0.5 * cols[0][i];
    const auto table = make_table(cols);
    const auto got = vif(table);
    const auto want = ffsm::testing::qr_vif(table);
    for (std::size_t j = 0; j < f; ++j) {
      EXPECT_GE(got[j].value, 1.0);
      EXPECT_NEAR(got[j].value / want[j], 1.0, 1e-6);
    }
  }
}

TEST(Vif, AffineRescalingLeavesVifUnchanged) {
  auto cols = gaussian_columns(120, 4, 3);
  for (std::size_t i = 0; i < 120; ++i) cols[2][i] += 0.7 * cols[0][i] - 0.3 * cols[1][i];
  const auto base = vif(make_table(cols));
  for (std::size_t j = 0; j < 4; ++j) {
    auto scaled = cols;
    for (double& v : scaled[j]) v = 250.0 * v - 1234.5;
    const auto v = vif(make_table(scaled));
    for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(v[k].value / base[k].value, 1.0, 1e-9);
  }
}

TEST(Vif, TooFewRowsIsValueError) {
  EXPECT_THROW(vif(make_table({{1, 2, 3}, {3, 1, 2}, {2, 2, 5}})), ValueError);
}

TEST(Vif, ZeroVarianceFactorIsUndefined) {
  auto cols = gaussian_columns(20, 2, 4);
  cols.push_back(std::vector<double>(20, 7.0));
  const auto v = vif(make_table(cols));
  EXPECT_FALSE(v[2].defined);
  EXPECT_TRUE(v[0].defined);
}

// ---------------------------------------------------------------------------
// Thresholds

TEST(Optimize, ThresholdRuleOnReportedValues) {
  // Two factors sharing correlation r have VIF 1 / (1 - r^2).
  for (double target : {4.7282, 1.0086}) {
    const double r = std::sqrt(1.0 - 1.0 / target);
    const auto report = optimize(correlated_pair(r));
    EXPECT_NEAR(report.vif[0].value, target, 1e-9);
    EXPECT_FALSE(report.flags[0].flagged_vif);
    EXPECT_FALSE(report.flags[1].flagged_vif);
  }
  const auto hi = optimize(correlated_pair(std::sqrt(1.0 - 1.0 / 5.01)));
  EXPECT_TRUE(hi.flags[0].flagged_vif);
  EXPECT_FALSE(hi.flags[0].retained());
}

TEST(Optimize, CorrelationFlagsAtThreshold) {
  const auto at = optimize(correlated_pair(0.75), 0.75, 1e9);
  ASSERT_EQ(at.pairs.size(), 1u);
  EXPECT_TRUE(at.flags[0].flagged_correlation);
  EXPECT_TRUE(at.flags[1].flagged_correlation);
  const auto below = optimize(correlated_pair(0.69));
  EXPECT_TRUE(below.pairs.empty());
  EXPECT_TRUE(below.flags[0].retained());
}

TEST(Optimize, SyntheticStackFlagsStructuredPairs) {
  const auto synth = synth_generate(SynthOptions{.seed = 3});
  const auto table = sample_table(synth.stack, synth.inventory);
  EXPECT_EQ(table.rows, 522u);
  EXPECT_EQ(table.cols(), 16u);
  const auto report = optimize(table);
  EXPECT_EQ(report.names, synth_factor_names());
  bool ndvi_landcover = false;
  for (const auto& p : report.pairs) {
    if ((p.a == "ndvi" && p.b == "landcover") || (p.a == "landcover" && p.b == "ndvi")) ndvi_landcover = true;
    EXPECT_GE(std::abs(p.r), 0.7);
  }
  EXPECT_TRUE(ndvi_landcover);
  const auto j = report.to_json();
  ASSERT_EQ(j["factors"].size(), 16u);
  EXPECT_EQ(j["factors"][10]["factor"], "convergence_index");
  EXPECT_TRUE(j["factors"][10]["retained"].get<bool>());
  EXPECT_EQ(j["vif_threshold"], 5.0);
}

TEST(Optimize, PearsonCsvHasHeaderAndRows) {
  const auto report = optimize(make_table(gaussian_columns(30, 3, 5)));
  const auto path = std::filesystem::temp_directory_path() / "ffsm_test_pearson.csv";
  report.write_pearson_csv(path);
  std::ifstream in(path);
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) ++lines;
  EXPECT_EQ(lines, 4u);
}

TEST(Tables, RasterTableSkipsMaskedCells) {
  FeatureStack s(3, 2, {"a", "b"});
  for (std::size_t i = 0; i < s.data.size(); ++i) s.data[i] = static_cast<float>(i);
  s.mask[4] = 1;
  const auto t = raster_table(s);
  EXPECT_EQ(t.rows, 5u);
  EXPECT_EQ(t.at(4, 0), 5.0);
  EXPECT_EQ(t.at(4, 1), 11.0);
}
