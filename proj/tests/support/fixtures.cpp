#include "fixtures.hpp"

#include "ffsm/random.hpp"

namespace ffsm::testing {

HalfPlaneFixture half_plane(std::uint64_t seed, std::size_t factors, std::size_t planted,
                            std::size_t per_class, std::size_t size, std::size_t patch) {
  std::vector<std::string> names;
  for (std::size_t f = 0; f < factors; ++f) names.push_back("f" + std::to_string(f));
  HalfPlaneFixture fx{FeatureStack(size, size, names), {}};
  Rng rng(derive_seed(seed, "half_plane"));
  for (std::size_t f = 0; f < factors; ++f) {
    for (std::size_t r = 0; r < size; ++r) {
      for (std::size_t c = 0; c < size; ++c) {
        const double noise = normal(rng);
        const double side = c < size / 2 ? 1.0 : -1.0;
        fx.stack.at(f, r, c) = static_cast<float>(f == planted ? side + 0.3 * noise : noise);
      }
    }
  }
  std::vector<InventoryPoint> left, right;
  for (std::size_t r = 0; r < size; ++r) {
    for (std::size_t c = 0; c < size; ++c) {
      if (!window_fits(fx.stack, r, c, patch)) continue;
      (c < size / 2 ? left : right).push_back({r, c, c < size / 2 ? 1 : 0, PointSource::Recorded});
    }
  }
  shuffle(std::span<InventoryPoint>(left), rng);
  shuffle(std::span<InventoryPoint>(right), rng);
  fx.points.assign(left.begin(), left.begin() + static_cast<std::ptrdiff_t>(per_class));
  fx.points.insert(fx.points.end(), right.begin(), right.begin() + static_cast<std::ptrdiff_t>(per_class));
  return fx;
}

PatchDataset half_plane_dataset(std::uint64_t seed, std::size_t factors, std::size_t planted,
                                std::size_t per_class, std::size_t patch) {
  const auto fx = half_plane(seed, factors, planted, per_class, 40, patch);
  auto ds = extract_patches(fx.stack, fx.points, patch);
  split(ds, {}, seed);
  standardize(ds);
  return ds;
}

BackboneSpec small_resnet(std::size_t factors, std::size_t patch) {
  BackboneSpec spec;
  spec.kind = BackboneKind::ResNet18;
  spec.base_width = 4;
  spec.depth_scale = 0.1;
  spec.factors = factors;
  spec.patch = patch;
  spec.reduction = 2;
  spec.fc_hidden = {8};
  return spec;
}

}  // namespace ffsm::testing
