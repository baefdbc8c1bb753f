#include "ffsm/mapping.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>

#include "ffsm/binary_io.hpp"
#include "ffsm/error.hpp"
#include "ffsm/random.hpp"
#include "ffsm/train.hpp"

namespace ffsm {

std::size_t ProbabilityMap::valid_count() const {
  return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
}

ProbabilityMap predict_map(Model<float>& model, const FeatureStack& stack, const MapOptions& options) {
  const auto& st = model.standardization();
  const BackboneSpec& spec = model.spec();
  if (st.empty()) throw ConfigError("model carries no standardization; was it trained?");
  if (st.factor_names != stack.factors) {
    throw ConfigError("model factor order does not match the stack factor order");
  }
  if (spec.factors != stack.factor_count()) {
    throw ConfigError("model expects " + std::to_string(spec.factors) + " factors, stack has " +
                      std::to_string(stack.factor_count()));
  }
  if (options.tile_size == 0 || options.batch == 0) throw ValueError("tile size and batch must be positive");

  // Standardize once; a patch is then a plain window copy.
  std::vector<float> z(stack.data.size());
  for (std::size_t f = 0; f < stack.factor_count(); ++f) {
    const auto src = stack.layer(f);
    for (std::size_t i = 0; i < stack.cells(); ++i) {
      z[f * stack.cells() + i] = stack.mask[i] ? 0.0f : st.apply(f, src[i]);
    }
  }

  ProbabilityMap map;
  map.width = stack.width;
  map.height = stack.height;
  map.prob.assign(stack.cells(), 0.0f);
  map.valid.assign(stack.cells(), 0);

  const std::size_t p = spec.patch;
  const std::size_t fc = stack.factor_count();
  const std::size_t per = fc * p * p;
  std::vector<std::size_t> pending;
  Tensor<float> batch;
  auto flush = [&] {
    if (pending.empty()) return;
    batch = Tensor<float>(Shape{pending.size(), fc, p, p});
    for (std::size_t n = 0; n < pending.size(); ++n) {
      const std::size_t r0 = static_cast<std::size_t>(window_origin(pending[n] / stack.width, p));
      const std::size_t c0 = static_cast<std::size_t>(window_origin(pending[n] % stack.width, p));
      for (std::size_t f = 0; f < fc; ++f) {
        for (std::size_t r = 0; r < p; ++r) {
          std::copy_n(&z[(f * stack.height + r0 + r) * stack.width + c0], p,
                      batch.data() + n * per + (f * p + r) * p);
        }
      }
    }
    const auto scores = predict(model, batch, options.batch);
    for (std::size_t n = 0; n < pending.size(); ++n) {
      map.prob[pending[n]] = scores[n];
      map.valid[pending[n]] = 1;
    }
    pending.clear();
  };

  for (std::size_t tr = 0; tr < stack.height; tr += options.tile_size) {
    for (std::size_t tc = 0; tc < stack.width; tc += options.tile_size) {
      for (std::size_t r = tr; r < std::min(stack.height, tr + options.tile_size); ++r) {
        for (std::size_t c = tc; c < std::min(stack.width, tc + options.tile_size); ++c) {
          if (stack.masked(r, c) || !window_fits(stack, r, c, p)) continue;
          pending.push_back(r * stack.width + c);
          if (pending.size() == options.batch) flush();
        }
      }
    }
  }
  flush();
  return map;
}

// ---------------------------------------------------------------------------
// Natural breaks

std::vector<double> jenks_breaks(std::span<const double> values, std::size_t k) {
  if (k == 0) throw ValueError("class count must be positive");
  for (double v : values) {
    if (!std::isfinite(v)) throw ValueError("natural breaks need finite values");
  }
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> u;
  std::vector<long double> w;
  for (double v : sorted) {
    if (u.empty() || v != u.back()) {
      u.push_back(v);
      w.push_back(1.0L);
    } else {
      w.back() += 1.0L;
    }
  }
  if (u.size() < k) {
    throw ValueError("natural breaks need at least " + std::to_string(k) + " distinct values, got " +
                     std::to_string(u.size()));
  }
  if (k == 1) return {};

  const std::size_t m = u.size();
  long double shift = 0.0L;
  for (double v : sorted) shift += v;
  shift /= static_cast<long double>(sorted.size());
  std::vector<long double> cw(m + 1, 0.0L), c1(m + 1, 0.0L), c2(m + 1, 0.0L);
  for (std::size_t i = 0; i < m; ++i) {
    const long double x = static_cast<long double>(u[i]) - shift;
    cw[i + 1] = cw[i] + w[i];
    c1[i + 1] = c1[i] + w[i] * x;
    c2[i + 1] = c2[i] + w[i] * x * x;
  }
  // SSD of distinct values a..b inclusive.
  auto ssd = [&](std::size_t a, std::size_t b) {
    const long double n = cw[b + 1] - cw[a];
    const long double s = c1[b + 1] - c1[a];
    const long double v = c2[b + 1] - c2[a] - s * s / n;
    return v > 0.0L ? v : 0.0L;
  };

  const long double inf = std::numeric_limits<long double>::infinity();
  std::vector<std::vector<long double>> cost(k, std::vector<long double>(m, inf));
  std::vector<std::vector<std::size_t>> start(k, std::vector<std::size_t>(m, 0));
  for (std::size_t j = 0; j < m; ++j) cost[0][j] = ssd(0, j);
  for (std::size_t q = 1; q < k; ++q) {
    // The optimal start of the last class is monotone in j, so the rows are
    // filled by divide and conquer.
    std::function<void(std::size_t, std::size_t, std::size_t, std::size_t)> solve =
        [&](std::size_t jlo, std::size_t jhi, std::size_t ilo, std::size_t ihi) {
          if (jlo > jhi) return;
          const std::size_t j = jlo + (jhi - jlo) / 2;
          long double best = inf;
          std::size_t arg = std::max(ilo, q);
          for (std::size_t i = std::max(ilo, q); i <= std::min(j, ihi); ++i) {
            const long double c = cost[q - 1][i - 1] + ssd(i, j);
            if (c < best) {
              best = c;
              arg = i;
            }
          }
          cost[q][j] = best;
          start[q][j] = arg;
          if (j > jlo) solve(jlo, j - 1, ilo, arg);
          solve(j + 1, jhi, arg, ihi);
        };
    solve(q, m - 1, q, m - 1);
  }
  std::vector<double> breaks(k - 1);
  std::size_t j = m - 1;
  for (std::size_t q = k - 1; q >= 1; --q) {
    const std::size_t i = start[q][j];
    breaks[q - 1] = u[i - 1];
    j = i - 1;
  }
  return breaks;
}

std::uint8_t class_of(double value, std::span<const double> breaks) {
  const auto it = std::lower_bound(breaks.begin(), breaks.end(), value);
  return static_cast<std::uint8_t>(1 + (it - breaks.begin()));
}

double within_class_ssd(std::span<const double> values, std::span<const double> breaks) {
  const std::size_t k = breaks.size() + 1;
  std::vector<long double> sum(k, 0.0L), count(k, 0.0L);
  for (double v : values) {
    const auto c = class_of(v, breaks) - 1u;
    sum[c] += v;
    count[c] += 1.0L;
  }
  long double total = 0.0L;
  for (double v : values) {
    const auto c = class_of(v, breaks) - 1u;
    const long double d = v - sum[c] / count[c];
    total += d * d;
  }
  return static_cast<double>(total);
}

std::vector<double> jenks_sample(const ProbabilityMap& map, std::size_t limit, std::uint64_t seed) {
  std::vector<double> all;
  for (std::size_t i = 0; i < map.prob.size(); ++i) {
    if (map.valid[i]) all.push_back(map.prob[i]);
  }
  if (all.size() <= limit) return all;
  Rng rng(derive_seed(seed, "jenks"));
  for (std::size_t i = 0; i < limit; ++i) {
    const auto j = i + static_cast<std::size_t>(uniform_index(rng, all.size() - i));
    std::swap(all[i], all[j]);
  }
  all.resize(limit);
  return all;
}

std::vector<std::uint8_t> classify(const ProbabilityMap& map, std::span<const double> breaks) {
  for (std::size_t i = 1; i < breaks.size(); ++i) {
    if (!(breaks[i] >= breaks[i - 1])) throw ValueError("class breaks must be sorted ascending");
  }
  std::vector<std::uint8_t> out(map.prob.size(), 0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (map.valid[i]) out[i] = class_of(map.prob[i], breaks);
  }
  return out;
}

std::vector<double> area_stats(std::span<const std::uint8_t> classes, std::size_t k) {
  std::vector<double> counts(k, 0.0);
  double total = 0.0;
  for (auto c : classes) {
    if (c == 0) continue;
    if (c > k) throw ValueError("class index " + std::to_string(c) + " exceeds class count");
    counts[c - 1u] += 1.0;
    total += 1.0;
  }
  if (total == 0.0) throw ValueError("no classified cells");
  for (double& v : counts) v = 100.0 * v / total;
  return counts;
}

std::vector<double> event_stats(std::span<const std::uint8_t> classes, std::size_t width,
                                std::span<const InventoryPoint> inventory, std::size_t k, std::size_t* counted) {
  std::vector<double> counts(k, 0.0);
  double total = 0.0;
  for (const auto& p : inventory) {
    if (p.label != 1) continue;
    const std::size_t i = p.row * width + p.col;
    if (i >= classes.size() || classes[i] == 0) continue;
    counts[classes[i] - 1u] += 1.0;
    total += 1.0;
  }
  if (counted != nullptr) *counted = static_cast<std::size_t>(total);
  if (total == 0.0) throw ValueError("no flood events fall on classified cells");
  for (double& v : counts) v = 100.0 * v / total;
  return counts;
}

std::string class_name(std::size_t cls, std::size_t k) {
  static const char* names[] = {"Very low", "Low", "Moderate", "High", "Very high"};
  if (k == 5 && cls >= 1 && cls <= 5) return names[cls - 1];
  return "Class " + std::to_string(cls);
}

nlohmann::json ClassStats::to_json() const {
  const std::size_t k = area_pct.size();
  nlohmann::json classes = nlohmann::json::array();
  for (std::size_t c = 0; c < k; ++c) {
    classes.push_back({{"class", c + 1},
                       {"name", class_name(c + 1, k)},
                       {"area_pct", area_pct[c]},
                       {"event_pct", event_pct[c]}});
  }
  nlohmann::json b = nlohmann::json::array();
  char text[32];
  for (double v : breaks) {
    std::snprintf(text, sizeof text, "%.6f", v);
    b.push_back(std::stod(text));
  }
  return {{"breaks", b}, {"classes", classes}, {"cells", cells}, {"events", events}};
}

void write_probability(const ProbabilityMap& map, double cell_size, const std::filesystem::path& stack_path,
                       const std::filesystem::path& pgm_path) {
  FeatureStack layer(map.width, map.height, {"probability"});
  layer.cell_size = cell_size;
  for (std::size_t i = 0; i < map.prob.size(); ++i) {
    layer.data[i] = map.prob[i];
    layer.mask[i] = map.valid[i] ? 0 : 1;
  }
  save_stack(layer, stack_path);

  std::string pgm = "P5\n" + std::to_string(map.width) + " " + std::to_string(map.height) + "\n65535\n";
  for (std::size_t i = 0; i < map.prob.size(); ++i) {
    const auto v = map.valid[i] ? static_cast<std::uint16_t>(std::lround(std::clamp(map.prob[i], 0.0f, 1.0f) * 65535.0f))
                                : std::uint16_t{0};
    pgm.push_back(static_cast<char>(v >> 8));
    pgm.push_back(static_cast<char>(v & 0xFF));
  }
  io::write_file(pgm_path, pgm);
}

void write_classes(std::span<const std::uint8_t> classes, std::size_t width, std::size_t height,
                   const std::filesystem::path& csv_path, const std::filesystem::path& pgm_path) {
  if (classes.size() != width * height) throw DimensionError("class grid size mismatch");
  std::string csv;
  csv.reserve(classes.size() * 2);
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      if (c > 0) csv.push_back(',');
      csv += std::to_string(classes[r * width + c]);
    }
    csv.push_back('\n');
  }
  io::write_file(csv_path, csv);

  // Masked cells black; classes run from light (very low) to dark.
  static constexpr std::uint8_t kRamp[] = {0, 230, 180, 130, 80, 30};
  std::string pgm = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  for (auto c : classes) pgm.push_back(static_cast<char>(c < 6 ? kRamp[c] : 0));
  io::write_file(pgm_path, pgm);
}

}  // namespace ffsm
