#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ffsm/backbones.hpp"
#include "ffsm/data.hpp"

namespace ffsm {

struct ProbabilityMap {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<float> prob;          // height * width; 0 where invalid
  std::vector<std::uint8_t> valid;  // 1 where a full patch window was scored

  std::size_t valid_count() const;
};

struct MapOptions {
  std::size_t tile_size = 64;  // cells per tile side
  std::size_t batch = 64;      // patches per forward call
};

// Scores every cell whose patch window lies fully inside the grid and off
// nodata; other cells are masked. The model's stored standardization must
// name the stack's factors in the same order.
ProbabilityMap predict_map(Model<float>& model, const FeatureStack& stack, const MapOptions& options = {});

// Fisher-Jenks natural breaks: the k - 1 class upper bounds that minimize
// the total within-class sum of squared deviations (exact DP over distinct
// values). Needs at least k distinct values.
std::vector<double> jenks_breaks(std::span<const double> values, std::size_t k = 5);

// Sum of squared deviations within the classes implied by `breaks`.
double within_class_ssd(std::span<const double> values, std::span<const double> breaks);

// Seeded uniform subsample of at most `limit` valid probabilities.
std::vector<double> jenks_sample(const ProbabilityMap& map, std::size_t limit, std::uint64_t seed);

// Class c (1-based) holds values in (break[c-1], break[c]], open at both ends
// of the range. Masked cells get class 0.
std::vector<std::uint8_t> classify(const ProbabilityMap& map, std::span<const double> breaks);
std::uint8_t class_of(double value, std::span<const double> breaks);

struct ClassStats {
  std::vector<double> breaks;
  std::vector<double> area_pct;   // per class, over valid cells
  std::vector<double> event_pct;  // per class, over flood points on valid cells
  std::size_t cells = 0;
  std::size_t events = 0;

  nlohmann::json to_json() const;
};

std::vector<double> area_stats(std::span<const std::uint8_t> classes, std::size_t k);
std::vector<double> event_stats(std::span<const std::uint8_t> classes, std::size_t width,
                                std::span<const InventoryPoint> inventory, std::size_t k,
                                std::size_t* counted = nullptr);

std::string class_name(std::size_t cls, std::size_t k);

// Single-layer FFSTACK ("probability") plus a 16-bit binary PGM preview.
void write_probability(const ProbabilityMap& map, double cell_size, const std::filesystem::path& stack_path,
                       const std::filesystem::path& pgm_path);
// Integer class grid as CSV plus an 8-bit PGM on a fixed gray ramp.
void write_classes(std::span<const std::uint8_t> classes, std::size_t width, std::size_t height,
                   const std::filesystem::path& csv_path, const std::filesystem::path& pgm_path);

}  // namespace ffsm
