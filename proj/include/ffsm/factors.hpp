#pragma once

#include <cmath>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ffsm/data.hpp"

namespace ffsm {

// n samples x F factors, row-major.
struct FactorTable {
  std::vector<std::string> names;
  std::size_t rows = 0;
  std::vector<double> values;

  std::size_t cols() const { return names.size(); }
  double at(std::size_t r, std::size_t c) const { return values[r * names.size() + c]; }
  std::vector<double> column(std::size_t c) const;
  void validate() const;
};

// Factor values at the given cells.
FactorTable sample_table(const FeatureStack& stack, std::span<const InventoryPoint> points);
// Every unmasked cell.
FactorTable raster_table(const FeatureStack& stack);

struct PearsonMatrix {
  std::vector<double> r;      // F x F; 0 where undefined
  std::vector<bool> defined;  // per factor; false for zero variance
  std::size_t size = 0;

  double at(std::size_t i, std::size_t j) const { return r[i * size + j]; }
};

PearsonMatrix pearson_matrix(const FactorTable& table);

struct VifValue {
  double value = 1.0;     // +inf for exact collinearity
  bool defined = true;    // false for a zero-variance factor
  bool infinite() const { return std::isinf(value); }
};

// VIF_j = 1 / (1 - R^2_j) from regressing factor j on all others with an
// intercept. Normal equations, ridge fallback when ill-conditioned;
// R^2 >= 1 - 1e-12 reports +inf. Throws ValueError when rows <= factors.
std::vector<VifValue> vif(const FactorTable& table);

struct FactorFlags {
  bool flagged_correlation = false;
  bool flagged_vif = false;
  bool retained() const { return !flagged_correlation && !flagged_vif; }
};

struct CorrelatedPair {
  std::string a;
  std::string b;
  double r = 0.0;
};

struct OptimizationReport {
  std::vector<std::string> names;
  PearsonMatrix pearson;
  std::vector<VifValue> vif;
  std::vector<FactorFlags> flags;
  std::vector<CorrelatedPair> pairs;
  double corr_threshold = 0.7;
  double vif_threshold = 5.0;

  nlohmann::json to_json() const;
  void write_pearson_csv(const std::filesystem::path& path) const;
};

// Flags pairs with |r| >= corr_threshold and factors with VIF > vif_threshold.
// Nothing is dropped; the caller decides.
OptimizationReport optimize(const FactorTable& table, double corr_threshold = 0.7, double vif_threshold = 5.0);

}  // namespace ffsm
