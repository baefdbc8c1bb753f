#pragma once

#include <cstdint>

#include "ffsm/backbones.hpp"
#include "ffsm/data.hpp"

namespace ffsm::testing {

// Grid whose `planted` factor is +1 on the left half and -1 on the right,
// plus mild noise; every other factor is pure noise. Flood points sit on
// the left half, dry points on the right.
struct HalfPlaneFixture {
  FeatureStack stack;
  std::vector<InventoryPoint> points;
};

HalfPlaneFixture half_plane(std::uint64_t seed, std::size_t factors = 3, std::size_t planted = 0,
                            std::size_t per_class = 60, std::size_t size = 40, std::size_t patch = 8);

// Patches of the fixture, split 0.7/0.15/0.15 and standardized.
PatchDataset half_plane_dataset(std::uint64_t seed, std::size_t factors = 3, std::size_t planted = 0,
                                std::size_t per_class = 60, std::size_t patch = 8);

// Small ResNet matched to a fixture.
BackboneSpec small_resnet(std::size_t factors, std::size_t patch);

}  // namespace ffsm::testing
