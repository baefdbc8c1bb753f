#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "ffsm/data.hpp"
#include "ffsm/error.hpp"
#include "ffsm/random.hpp"

namespace ffsm {
namespace {

using Grid = std::vector<double>;

struct Dims {
  std::size_t h;
  std::size_t w;
  std::size_t idx(std::size_t r, std::size_t c) const { return r * w + c; }
  std::size_t cells() const { return h * w; }
};

void zscore(Grid& g) {
  const double n = static_cast<double>(g.size());
  const double mean = std::accumulate(g.begin(), g.end(), 0.0) / n;
  double sq = 0.0;
  for (double v : g) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / n);
  for (double& v : g) v = sd > 0.0 ? (v - mean) / sd : 0.0;
}

// Gaussian-blurred white noise, rescaled to zero mean and unit variance.
Grid smooth_field(Rng& rng, Dims d, double sigma) {
  Grid g(d.cells());
  for (double& v : g) v = normal(rng);
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
    kernel[static_cast<std::size_t>(k + radius)] = std::exp(-0.5 * k * k / (sigma * sigma));
  }
  auto reflect = [](std::ptrdiff_t i, std::ptrdiff_t n) {
    while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
    return static_cast<std::size_t>(i);
  };
  const auto H = static_cast<std::ptrdiff_t>(d.h);
  const auto W = static_cast<std::ptrdiff_t>(d.w);
  Grid tmp(d.cells());
  for (std::ptrdiff_t r = 0; r < H; ++r) {
    for (std::ptrdiff_t c = 0; c < W; ++c) {
      double acc = 0.0;
      for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
        acc += kernel[static_cast<std::size_t>(k + radius)] * g[d.idx(static_cast<std::size_t>(r), reflect(c + k, W))];
      }
      tmp[d.idx(static_cast<std::size_t>(r), static_cast<std::size_t>(c))] = acc;
    }
  }
  for (std::ptrdiff_t r = 0; r < H; ++r) {
    for (std::ptrdiff_t c = 0; c < W; ++c) {
      double acc = 0.0;
      for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
        acc += kernel[static_cast<std::size_t>(k + radius)] * tmp[d.idx(reflect(r + k, H), static_cast<std::size_t>(c))];
      }
      g[d.idx(static_cast<std::size_t>(r), static_cast<std::size_t>(c))] = acc;
    }
  }
  zscore(g);
  return g;
}

// Exact 1-D squared Euclidean distance transform (lower envelope of
// parabolas), applied along rows then columns.
void edt_1d(const std::vector<double>& f, std::vector<double>& out) {
  const std::size_t n = f.size();
  std::vector<std::size_t> v(n);
  std::vector<double> z(n + 1);
  std::size_t k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  for (std::size_t q = 1; q < n; ++q) {
    double s;
    while (true) {
      const double p = static_cast<double>(v[k]);
      const double qd = static_cast<double>(q);
      s = ((f[q] + qd * qd) - (f[v[k]] + p * p)) / (2.0 * qd - 2.0 * p);
      if (s <= z[k] && k > 0) {
        --k;
        continue;
      }
      break;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[k + 1] < static_cast<double>(q)) ++k;
    const double dq = static_cast<double>(q) - static_cast<double>(v[k]);
    out[q] = dq * dq + f[v[k]];
  }
}

// Euclidean distance (in cells) from every cell to the nearest marked cell.
Grid distance_to(const std::vector<std::uint8_t>& marked, Dims d) {
  const double inf = 1e20;
  Grid g(d.cells());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = marked[i] ? 0.0 : inf;
  std::vector<double> f, out;
  f.resize(d.w);
  out.resize(d.w);
  for (std::size_t r = 0; r < d.h; ++r) {
    for (std::size_t c = 0; c < d.w; ++c) f[c] = g[d.idx(r, c)];
    edt_1d(f, out);
    for (std::size_t c = 0; c < d.w; ++c) g[d.idx(r, c)] = out[c];
  }
  f.resize(d.h);
  out.resize(d.h);
  for (std::size_t c = 0; c < d.w; ++c) {
    for (std::size_t r = 0; r < d.h; ++r) f[r] = g[d.idx(r, c)];
    edt_1d(f, out);
    for (std::size_t r = 0; r < d.h; ++r) g[d.idx(r, c)] = std::sqrt(out[r]);
  }
  return g;
}

// Rivers enter along the top edge and meander downhill; tributaries start
// inside the grid and run until they meet a channel or leave the grid.
std::vector<std::uint8_t> river_network(Rng& rng, Dims d) {
  std::vector<std::uint8_t> river(d.cells(), 0);
  const std::size_t mains = std::max<std::size_t>(1, d.w / 24);
  auto walk = [&](std::ptrdiff_t r, std::ptrdiff_t c, int dr, bool stop_on_river) {
    int drift = 0;
    while (r >= 0 && c >= 0 && r < static_cast<std::ptrdiff_t>(d.h) && c < static_cast<std::ptrdiff_t>(d.w)) {
      const auto i = d.idx(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
      if (stop_on_river && river[i]) break;
      river[i] = 1;
      const double u = uniform01(rng);
      if (u < 0.2) drift = std::max(drift - 1, -1);
      else if (u < 0.4) drift = std::min(drift + 1, 1);
      if (drift != 0 && uniform01(rng) < 0.5) {
        c += drift;
        if (c >= 0 && c < static_cast<std::ptrdiff_t>(d.w)) {
          river[d.idx(static_cast<std::size_t>(r), static_cast<std::size_t>(c))] = 1;
        }
      }
      r += dr;
    }
  };
  for (std::size_t m = 0; m < mains; ++m) {
    const double lo = static_cast<double>(d.w) * (static_cast<double>(m) + 0.25) / static_cast<double>(mains);
    const double hi = static_cast<double>(d.w) * (static_cast<double>(m) + 0.75) / static_cast<double>(mains);
    walk(0, static_cast<std::ptrdiff_t>(uniform(rng, lo, hi)), 1, false);
  }
  const std::size_t tributaries = std::max<std::size_t>(1, d.w / 32);
  for (std::size_t t = 0; t < tributaries; ++t) {
    const auto r = static_cast<std::ptrdiff_t>(uniform_index(rng, d.h));
    const auto c = static_cast<std::ptrdiff_t>(uniform_index(rng, d.w));
    walk(r, c, uniform01(rng) < 0.5 ? 1 : -1, true);
  }
  return river;
}

// Marks a straight road between two random edge points.
void draw_road(Rng& rng, Dims d, std::vector<std::uint8_t>& roads) {
  const double r0 = uniform(rng, 0.0, static_cast<double>(d.h - 1));
  const double r1 = uniform(rng, 0.0, static_cast<double>(d.h - 1));
  const std::size_t steps = 4 * std::max(d.w, d.h);
  for (std::size_t s = 0; s <= steps; ++s) {
    const double t = static_cast<double>(s) / static_cast<double>(steps);
    const auto r = static_cast<std::size_t>(std::lround(r0 + (r1 - r0) * t));
    const auto c = static_cast<std::size_t>(std::lround(t * static_cast<double>(d.w - 1)));
    roads[d.idx(r, c)] = 1;
  }
}

struct Terrain {
  Grid slope_deg, aspect_deg, curvature, tpi, ruggedness, flow_acc;
};

Terrain derive_terrain(const Grid& elev, Dims d, double cell) {
  Terrain t;
  t.slope_deg.assign(d.cells(), 0.0);
  t.aspect_deg.assign(d.cells(), 0.0);
  t.curvature.assign(d.cells(), 0.0);
  t.tpi.assign(d.cells(), 0.0);
  t.ruggedness.assign(d.cells(), 0.0);
  t.flow_acc.assign(d.cells(), 1.0);
  auto at = [&](std::ptrdiff_t r, std::ptrdiff_t c) {
    r = std::clamp<std::ptrdiff_t>(r, 0, static_cast<std::ptrdiff_t>(d.h) - 1);
    c = std::clamp<std::ptrdiff_t>(c, 0, static_cast<std::ptrdiff_t>(d.w) - 1);
    return elev[d.idx(static_cast<std::size_t>(r), static_cast<std::size_t>(c))];
  };
  constexpr std::ptrdiff_t kTpiRadius = 3;
  for (std::size_t ur = 0; ur < d.h; ++ur) {
    for (std::size_t uc = 0; uc < d.w; ++uc) {
      const auto r = static_cast<std::ptrdiff_t>(ur);
      const auto c = static_cast<std::ptrdiff_t>(uc);
      const double z = at(r, c);
      const double dzdx = (at(r, c + 1) - at(r, c - 1)) / (2.0 * cell);
      const double dzdy = (at(r + 1, c) - at(r - 1, c)) / (2.0 * cell);
      const auto i = d.idx(ur, uc);
      t.slope_deg[i] = std::atan(std::hypot(dzdx, dzdy)) * 180.0 / M_PI;
      double aspect = std::atan2(dzdy, -dzdx) * 180.0 / M_PI;
      if (aspect < 0.0) aspect += 360.0;
      t.aspect_deg[i] = aspect;
      t.curvature[i] =
          -(at(r, c + 1) + at(r, c - 1) + at(r + 1, c) + at(r - 1, c) - 4.0 * z) / (cell * cell) * 100.0;
      double sum = 0.0;
      double count = 0.0;
      for (std::ptrdiff_t dr = -kTpiRadius; dr <= kTpiRadius; ++dr) {
        for (std::ptrdiff_t dc = -kTpiRadius; dc <= kTpiRadius; ++dc) {
          sum += at(r + dr, c + dc);
          count += 1.0;
        }
      }
      t.tpi[i] = z - sum / count;
      double sq = 0.0;
      for (std::ptrdiff_t dr = -1; dr <= 1; ++dr) {
        for (std::ptrdiff_t dc = -1; dc <= 1; ++dc) sq += (at(r + dr, c + dc) - z) * (at(r + dr, c + dc) - z);
      }
      t.ruggedness[i] = std::sqrt(sq);
    }
  }
  // D8 flow accumulation: visit cells from high to low and pass the count
  // to the steepest downhill neighbour.
  std::vector<std::size_t> order(d.cells());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return elev[a] > elev[b]; });
  for (std::size_t i : order) {
    const auto r = static_cast<std::ptrdiff_t>(i / d.w);
    const auto c = static_cast<std::ptrdiff_t>(i % d.w);
    double best = 0.0;
    std::ptrdiff_t target = -1;
    for (std::ptrdiff_t dr = -1; dr <= 1; ++dr) {
      for (std::ptrdiff_t dc = -1; dc <= 1; ++dc) {
        const std::ptrdiff_t rr = r + dr;
        const std::ptrdiff_t cc = c + dc;
        if ((dr == 0 && dc == 0) || rr < 0 || cc < 0 || rr >= static_cast<std::ptrdiff_t>(d.h) ||
            cc >= static_cast<std::ptrdiff_t>(d.w)) {
          continue;
        }
        const double drop = (elev[i] - at(rr, cc)) / std::hypot(static_cast<double>(dr), static_cast<double>(dc));
        if (drop > best) {
          best = drop;
          target = rr * static_cast<std::ptrdiff_t>(d.w) + cc;
        }
      }
    }
    if (target >= 0) t.flow_acc[static_cast<std::size_t>(target)] += t.flow_acc[i];
  }
  return t;
}

double sigmoid(double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

// Draws `n` distinct cells from `candidates`, each draw proportional to its
// remaining weight.
std::vector<std::size_t> weighted_draw(Rng& rng, std::vector<std::size_t> candidates, std::vector<double> weights,
                                       std::size_t n) {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < n; ++k) {
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    if (!(total > 0.0)) throw CapacityError("synthetic sampler ran out of weighted cells");
    double u = uniform01(rng) * total;
    std::size_t j = 0;
    while (j + 1 < weights.size() && !(u < weights[j])) u -= weights[j++];
    // Rounding can leave u just past the last positive weight.
    while (weights[j] == 0.0) --j;
    out.push_back(candidates[j]);
    candidates.erase(candidates.begin() + static_cast<std::ptrdiff_t>(j));
    weights.erase(weights.begin() + static_cast<std::ptrdiff_t>(j));
  }
  return out;
}

}  // namespace

const std::vector<std::string>& synth_factor_names() {
  static const std::vector<std::string> names{
      "elevation", "slope",           "aspect",           "curvature",
      "distance_to_river", "tpi",     "ruggedness",       "spi",
      "twi",       "drainage_density", "convergence_index", "flow_accumulation",
      "rainfall",  "ndvi",            "landcover",        "distance_to_roads"};
  return names;
}

SynthResult synth_generate(const SynthOptions& o) {
  if (o.width < 8 || o.height < 8) throw ValueError("synthetic grid must be at least 8x8");
  if (o.patch == 0 || o.patch > o.width || o.patch > o.height) {
    throw ValueError("synthetic patch size must lie in [1, min(width, height)]");
  }
  if (o.n_flood == 0) throw ValueError("synthetic inventory needs at least one flood point");
  const Dims d{o.height, o.width};
  const double cell = 12.5;
  Rng rng(derive_seed(o.seed, "synth"));

  const auto river = river_network(rng, d);
  const Grid river_dist = distance_to(river, d);

  Grid relief = smooth_field(rng, d, static_cast<double>(std::max(o.width, o.height)) / 6.0);
  Grid elev(d.cells());
  for (std::size_t r = 0; r < d.h; ++r) {
    for (std::size_t c = 0; c < d.w; ++c) {
      const auto i = d.idx(r, c);
      const double ramp = 1.0 - static_cast<double>(r) / static_cast<double>(d.h - 1);
      // A shallow carve keeps channels visible without leaking the distance
      // layer into every terrain derivative.
      elev[i] = 1800.0 + 600.0 * ramp + 250.0 * relief[i] -
                4.0 * std::exp(-river_dist[i] * river_dist[i] / 2.0);
    }
  }
  const Terrain terrain = derive_terrain(elev, d, cell);

  Grid gully = smooth_field(rng, d, 3.0);
  Grid rain_noise = smooth_field(rng, d, 10.0);
  Grid green_noise = smooth_field(rng, d, 5.0);
  Grid elev_z = elev;
  zscore(elev_z);

  std::vector<std::uint8_t> roads(d.cells(), 0);
  draw_road(rng, d, roads);
  draw_road(rng, d, roads);
  const Grid road_dist = distance_to(roads, d);

  FeatureStack stack(o.width, o.height, synth_factor_names());
  stack.cell_size = cell;
  auto set = [&](const char* name, auto&& value) {
    const std::size_t f = stack.factor_index(name);
    for (std::size_t i = 0; i < d.cells(); ++i) stack.data[f * d.cells() + i] = static_cast<float>(value(i));
  };
  set("elevation", [&](std::size_t i) { return elev[i]; });
  set("slope", [&](std::size_t i) { return terrain.slope_deg[i]; });
  set("aspect", [&](std::size_t i) { return terrain.aspect_deg[i]; });
  set("curvature", [&](std::size_t i) { return terrain.curvature[i]; });
  set("distance_to_river", [&](std::size_t i) { return river_dist[i] * cell; });
  set("tpi", [&](std::size_t i) { return terrain.tpi[i]; });
  set("ruggedness", [&](std::size_t i) { return terrain.ruggedness[i]; });
  set("spi", [&](std::size_t i) {
    return std::log(terrain.flow_acc[i] * cell * std::tan(terrain.slope_deg[i] * M_PI / 180.0) + 1e-3);
  });
  set("twi", [&](std::size_t i) {
    return std::log(terrain.flow_acc[i] * cell / (std::tan(terrain.slope_deg[i] * M_PI / 180.0) + 1e-3));
  });
  set("drainage_density", [&](std::size_t i) { return std::max(0.05, 2.5 + 0.8 * gully[i]); });
  Grid noise(d.cells());
  for (double& v : noise) v = 30.0 * normal(rng);
  set("convergence_index", [&](std::size_t i) { return noise[i]; });
  set("flow_accumulation", [&](std::size_t i) { return terrain.flow_acc[i]; });
  set("rainfall", [&](std::size_t i) { return 350.0 + 60.0 * (0.6 * elev_z[i] + 0.8 * rain_noise[i]); });
  Grid ndvi(d.cells());
  for (std::size_t i = 0; i < d.cells(); ++i) {
    ndvi[i] = std::clamp(0.35 - 0.12 * elev_z[i] + 0.1 * green_noise[i], -0.2, 0.9);
  }
  set("ndvi", [&](std::size_t i) { return ndvi[i]; });
  set("landcover", [&](std::size_t i) {
    return ndvi[i] < 0.1 ? 1.0 : ndvi[i] < 0.25 ? 2.0 : ndvi[i] < 0.4 ? 3.0 : ndvi[i] < 0.55 ? 4.0 : 5.0;
  });
  set("distance_to_roads", [&](std::size_t i) { return road_dist[i] * cell; });

  // Planted flood propensity: proximity to channels and gully density
  // dominate, three terrain layers add a weak nudge.
  auto z_of = [&](const char* name) {
    const auto l = stack.layer(stack.factor_index(name));
    Grid g(l.begin(), l.end());
    zscore(g);
    return g;
  };
  const Grid z_river = z_of("distance_to_river");
  const Grid z_drain = z_of("drainage_density");
  const Grid z_twi = z_of("twi");
  const Grid z_slope = z_of("slope");
  const Grid z_rain = z_of("rainfall");
  SynthResult result;
  result.probability.resize(d.cells());
  for (std::size_t i = 0; i < d.cells(); ++i) {
    const double logit = -o.river_weight * z_river[i] + o.drainage_weight * z_drain[i] +
                         o.nuisance_weight * (z_twi[i] - z_slope[i] + z_rain[i]);
    result.probability[i] = static_cast<float>(sigmoid(logit));
  }

  std::vector<std::size_t> candidates;
  for (std::size_t r = 0; r < d.h; ++r) {
    for (std::size_t c = 0; c < d.w; ++c) {
      if (window_fits(stack, r, c, o.patch)) candidates.push_back(d.idx(r, c));
    }
  }
  const std::size_t n_nonflood = o.n_nonflood.value_or(o.n_flood);
  if (o.n_flood + n_nonflood > candidates.size()) {
    throw CapacityError("synthetic inventory of " + std::to_string(o.n_flood + n_nonflood) +
                        " points exceeds the " + std::to_string(candidates.size()) + " cells with a full patch window");
  }
  std::vector<double> w_flood;
  for (auto i : candidates) w_flood.push_back(std::pow(result.probability[i], o.sharpness));
  const auto flood = weighted_draw(rng, candidates, w_flood, o.n_flood);

  std::vector<std::size_t> rest;
  std::vector<double> w_dry;
  for (auto i : candidates) {
    if (std::find(flood.begin(), flood.end(), i) != flood.end()) continue;
    rest.push_back(i);
    w_dry.push_back(std::pow(1.0 - result.probability[i], o.sharpness));
  }
  const auto dry = weighted_draw(rng, rest, w_dry, n_nonflood);

  for (auto i : flood) result.inventory.push_back({i / d.w, i % d.w, 1, PointSource::Recorded});
  for (auto i : dry) result.inventory.push_back({i / d.w, i % d.w, 0, PointSource::Generated});
  result.stack = std::move(stack);
  return result;
}

}  // namespace ffsm
