#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ffsm/engine/tensor.hpp"
#include "ffsm/standardization.hpp"

namespace ffsm {

// Aligned H x W grid of conditioning factors, stored layer-major.
struct FeatureStack {
  std::size_t width = 0;
  std::size_t height = 0;
  double cell_size = 12.5;
  float nodata = -9999.0f;
  std::vector<std::string> factors;
  std::vector<float> data;           // factors * height * width
  std::vector<std::uint8_t> mask;    // height * width, 1 = nodata

  FeatureStack() = default;
  FeatureStack(std::size_t width, std::size_t height, std::vector<std::string> factors);

  std::size_t factor_count() const { return factors.size(); }
  std::size_t cells() const { return width * height; }
  float at(std::size_t f, std::size_t row, std::size_t col) const {
    return data[(f * height + row) * width + col];
  }
  float& at(std::size_t f, std::size_t row, std::size_t col) {
    return data[(f * height + row) * width + col];
  }
  std::span<float> layer(std::size_t f) { return {data.data() + f * cells(), cells()}; }
  std::span<const float> layer(std::size_t f) const { return {data.data() + f * cells(), cells()}; }
  bool masked(std::size_t row, std::size_t col) const { return mask[row * width + col] != 0; }
  std::size_t unmasked_count() const;

  // Throws ValueError when the factor is absent.
  std::size_t factor_index(const std::string& name) const;

  // Shape, name uniqueness and finiteness of unmasked values.
  void validate() const;
};

// FFSTACK: "FFSTACK1\n", one JSON header line, then float32 LE values.
void save_stack(const FeatureStack& stack, const std::filesystem::path& path);
FeatureStack load_stack(const std::filesystem::path& path);

enum class PointSource { Recorded, Generated };

struct InventoryPoint {
  std::size_t row = 0;
  std::size_t col = 0;
  int label = 0;
  PointSource source = PointSource::Recorded;

  friend bool operator==(const InventoryPoint&, const InventoryPoint&) = default;
};

// CSV with header `row,col,label[,source]`. When a stack is given, indices
// must fall inside the grid on unmasked cells.
std::vector<InventoryPoint> load_inventory(const std::filesystem::path& path,
                                           const FeatureStack* stack = nullptr);
std::vector<InventoryPoint> parse_inventory(const std::string& text,
                                            const FeatureStack* stack = nullptr);
void save_inventory(std::span<const InventoryPoint> points, const std::filesystem::path& path);

// Top-left corner of the p x p window around a point.
inline std::ptrdiff_t window_origin(std::size_t centre, std::size_t patch) {
  return static_cast<std::ptrdiff_t>(centre) - static_cast<std::ptrdiff_t>(patch / 2);
}

// True when the p x p window around (row, col) lies inside the grid and
// touches no nodata cell.
bool window_fits(const FeatureStack& stack, std::size_t row, std::size_t col, std::size_t patch);

struct NonfloodOptions {
  std::size_t count = 0;
  std::size_t min_distance = 5;  // Chebyshev, in cells
  std::uint64_t seed = 0;
  // When non-zero, only cells whose patch window fits are eligible.
  std::size_t patch = 0;
};

// Uniform draw of distinct unmasked cells at Chebyshev distance >=
// min_distance from every flood point. Flood cells themselves are never
// eligible. Throws CapacityError when too few cells qualify.
std::vector<InventoryPoint> generate_nonflood(const FeatureStack& stack,
                                              std::span<const InventoryPoint> flood,
                                              const NonfloodOptions& options);

enum class Subset : std::uint8_t { Train, Validation, Test };
std::string to_string(Subset subset);

struct Rejection {
  std::size_t index = 0;  // position in the input point list
  InventoryPoint point;
  std::string reason;
};

struct PatchDataset {
  std::vector<std::string> factors;
  std::size_t patch = 0;
  Tensor<float> x;  // [N, F, p, p]
  std::vector<float> y;
  std::vector<InventoryPoint> points;
  std::vector<Rejection> rejected;
  std::vector<Subset> subset;  // empty until split()
  Standardization standardization;
  std::vector<std::string> warnings;

  std::size_t size() const { return y.size(); }
  std::vector<std::size_t> indices(Subset s) const;
  // Stacks the listed samples into one batch.
  Tensor<float> gather(std::span<const std::size_t> samples) const;
  std::vector<float> labels(std::span<const std::size_t> samples) const;
  // Copy with one factor channel removed; split and standardization follow.
  PatchDataset without_factor(std::size_t factor) const;
};

PatchDataset extract_patches(const FeatureStack& stack, std::span<const InventoryPoint> points,
                             std::size_t patch);

struct SplitRatios {
  double train = 0.7;
  double validation = 0.15;
  double test = 0.15;
};

// Per-subset counts under the floor-then-distribute rule: floor every share,
// then hand leftover samples to the largest fractional parts (earlier subset
// wins ties).
std::array<std::size_t, 3> split_counts(std::size_t n, const SplitRatios& ratios);

void split(PatchDataset& dataset, const SplitRatios& ratios, std::uint64_t seed,
           bool stratified = true);

// Fits per-factor z-scoring on the training subset and applies it to every
// sample. Zero-variance factors get std 1 and a warning.
void standardize(PatchDataset& dataset);

// Applies a previously fitted transform (e.g. to a stack window).
void apply_standardization(const Standardization& st, PatchDataset& dataset);

struct SynthOptions {
  std::uint64_t seed = 0;
  std::size_t width = 64;
  std::size_t height = 64;
  std::size_t n_flood = 261;
  std::optional<std::size_t> n_nonflood;  // defaults to n_flood
  // Inventory cells keep this patch window in-grid.
  std::size_t patch = 32;
  // Logit weights on the standardized planted factors.
  double river_weight = 2.5;
  double drainage_weight = 2.5;
  double nuisance_weight = 0.25;
  // Flood draws are weighted by probability^sharpness.
  double sharpness = 2.0;
};

struct SynthResult {
  FeatureStack stack;
  std::vector<InventoryPoint> inventory;
  std::vector<float> probability;  // planted flood probability, H * W
};

// Names of the generated layers, in stack order.
const std::vector<std::string>& synth_factor_names();

SynthResult synth_generate(const SynthOptions& options);

}  // namespace ffsm
