#include "ffsm/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ffsm/binary_io.hpp"
#include "ffsm/error.hpp"
#include "ffsm/random.hpp"

namespace ffsm {
namespace {

constexpr std::string_view kStackMagic = "FFSTACK1\n";

bool is_nodata(float v, float sentinel) {
  return std::isnan(sentinel) ? std::isnan(v) : v == sentinel;
}

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_csv(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::size_t parse_index(const std::string& field, std::size_t row, const char* what) {
  if (field.empty() || field.find_first_not_of("0123456789") != std::string::npos) {
    throw ParseError(row, std::string(what) + " '" + field + "' is not a non-negative integer");
  }
  try {
    return static_cast<std::size_t>(std::stoull(field));
  } catch (const std::exception&) {
    throw ParseError(row, std::string(what) + " '" + field + "' out of range");
  }
}

}  // namespace

FeatureStack::FeatureStack(std::size_t w, std::size_t h, std::vector<std::string> names)
    : width(w), height(h), factors(std::move(names)) {
  data.assign(factors.size() * w * h, 0.0f);
  mask.assign(w * h, 0);
}

std::size_t FeatureStack::unmasked_count() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{0}));
}

std::size_t FeatureStack::factor_index(const std::string& name) const {
  const auto it = std::find(factors.begin(), factors.end(), name);
  if (it == factors.end()) throw ValueError("stack has no factor named '" + name + "'");
  return static_cast<std::size_t>(it - factors.begin());
}

void FeatureStack::validate() const {
  if (width == 0 || height == 0) throw ValueError("stack dimensions must be positive");
  if (factors.empty()) throw ValueError("stack has no factors");
  if (std::set<std::string>(factors.begin(), factors.end()).size() != factors.size()) {
    throw ValueError("stack factor names are not unique");
  }
  if (data.size() != factors.size() * cells()) {
    throw DimensionError("stack holds " + std::to_string(data.size()) + " values, expected " +
                         std::to_string(factors.size() * cells()));
  }
  if (mask.size() != cells()) throw DimensionError("stack mask does not match the grid");
  for (std::size_t f = 0; f < factors.size(); ++f) {
    const auto values = layer(f);
    for (std::size_t i = 0; i < cells(); ++i) {
      if (mask[i] == 0 && !std::isfinite(values[i])) {
        throw ValueError("factor '" + factors[f] + "' has a non-finite value at cell " +
                         std::to_string(i));
      }
    }
  }
}

void save_stack(const FeatureStack& stack, const std::filesystem::path& path) {
  stack.validate();
  nlohmann::json header = {{"width", stack.width},
                           {"height", stack.height},
                           {"cell_size", stack.cell_size},
                           {"nodata", stack.nodata},
                           {"factors", stack.factors}};
  std::string out(kStackMagic);
  out += header.dump();
  out += '\n';
  out.reserve(out.size() + stack.data.size() * 4);
  for (std::size_t f = 0; f < stack.factor_count(); ++f) {
    const auto values = stack.layer(f);
    for (std::size_t i = 0; i < stack.cells(); ++i) {
      io::put_f32(out, stack.mask[i] ? stack.nodata : values[i]);
    }
  }
  io::write_file(path, out);
}

FeatureStack load_stack(const std::filesystem::path& path) {
  io::ByteReader in(io::read_file(path), "stack file");
  if (in.remaining() < kStackMagic.size() || in.take(kStackMagic.size()) != kStackMagic) {
    throw FormatError("not an FFSTACK file (bad magic)");
  }
  FeatureStack stack;
  try {
    const auto header = nlohmann::json::parse(in.line());
    stack.width = header.at("width").get<std::size_t>();
    stack.height = header.at("height").get<std::size_t>();
    stack.cell_size = header.at("cell_size").get<double>();
    stack.nodata = header.at("nodata").get<float>();
    stack.factors = header.at("factors").get<std::vector<std::string>>();
  } catch (const FormatError&) {
    throw;
  } catch (const std::exception& e) {
    throw FormatError(std::string("invalid stack header: ") + e.what());
  }
  if (stack.width == 0 || stack.height == 0 || stack.factors.empty()) {
    throw FormatError("stack header declares an empty grid");
  }
  const std::size_t n = stack.factor_count() * stack.cells();
  if (in.remaining() != n * 4) {
    throw FormatError("stack payload holds " + std::to_string(in.remaining()) + " bytes, header implies " +
                      std::to_string(n * 4));
  }
  stack.data.resize(n);
  for (auto& v : stack.data) v = in.f32();
  stack.mask.assign(stack.cells(), 0);
  for (std::size_t f = 0; f < stack.factor_count(); ++f) {
    const auto values = stack.layer(f);
    for (std::size_t i = 0; i < stack.cells(); ++i) {
      if (is_nodata(values[i], stack.nodata)) stack.mask[i] = 1;
    }
  }
  try {
    stack.validate();
  } catch (const Error& e) {
    throw FormatError(e.what());
  }
  return stack;
}

// ---------------------------------------------------------------------------
// Inventory

std::vector<InventoryPoint> parse_inventory(const std::string& text, const FeatureStack* stack) {
  std::istringstream lines(text);
  std::string line;
  std::size_t row = 0;
  bool with_source = false;
  bool header_seen = false;
  std::vector<InventoryPoint> points;
  while (std::getline(lines, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto fields = split_csv(line);
    if (!header_seen) {
      header_seen = true;
      const bool plain = fields == std::vector<std::string>{"row", "col", "label"};
      with_source = fields == std::vector<std::string>{"row", "col", "label", "source"};
      if (!plain && !with_source) throw ParseError(row, "expected header row,col,label[,source]");
      continue;
    }
    if (fields.size() != (with_source ? 4u : 3u)) {
      throw ParseError(row, "expected " + std::to_string(with_source ? 4 : 3) + " fields, got " +
                                std::to_string(fields.size()));
    }
    InventoryPoint p;
    p.row = parse_index(fields[0], row, "row");
    p.col = parse_index(fields[1], row, "col");
    if (fields[2] == "0") {
      p.label = 0;
    } else if (fields[2] == "1") {
      p.label = 1;
    } else {
      throw ParseError(row, "label '" + fields[2] + "' is not 0 or 1");
    }
    if (with_source) {
      if (fields[3] == "recorded") {
        p.source = PointSource::Recorded;
      } else if (fields[3] == "generated") {
        p.source = PointSource::Generated;
      } else {
        throw ParseError(row, "source '" + fields[3] + "' is not recorded or generated");
      }
    }
    if (stack != nullptr) {
      if (p.row >= stack->height || p.col >= stack->width) {
        throw ParseError(row, "cell (" + fields[0] + "," + fields[1] + ") outside the " +
                                  std::to_string(stack->height) + "x" +
                                  std::to_string(stack->width) + " grid");
      }
      if (stack->masked(p.row, p.col)) {
        throw ParseError(row, "cell (" + fields[0] + "," + fields[1] + ") is nodata");
      }
    }
    points.push_back(p);
  }
  if (!header_seen) throw ParseError(1, "empty inventory file");
  return points;
}

std::vector<InventoryPoint> load_inventory(const std::filesystem::path& path,
                                           const FeatureStack* stack) {
  return parse_inventory(io::read_file(path), stack);
}

void save_inventory(std::span<const InventoryPoint> points, const std::filesystem::path& path) {
  std::string out = "row,col,label,source\n";
  for (const auto& p : points) {
    out += std::to_string(p.row) + ',' + std::to_string(p.col) + ',' + std::to_string(p.label) +
           ',' + (p.source == PointSource::Recorded ? "recorded" : "generated") + '\n';
  }
  io::write_file(path, out);
}

// ---------------------------------------------------------------------------
// Sampling and patches

bool window_fits(const FeatureStack& stack, std::size_t row, std::size_t col, std::size_t patch) {
  const std::ptrdiff_t r0 = window_origin(row, patch);
  const std::ptrdiff_t c0 = window_origin(col, patch);
  const auto p = static_cast<std::ptrdiff_t>(patch);
  if (r0 < 0 || c0 < 0 || r0 + p > static_cast<std::ptrdiff_t>(stack.height) ||
      c0 + p > static_cast<std::ptrdiff_t>(stack.width)) {
    return false;
  }
  for (std::size_t r = 0; r < patch; ++r) {
    for (std::size_t c = 0; c < patch; ++c) {
      if (stack.masked(static_cast<std::size_t>(r0) + r, static_cast<std::size_t>(c0) + c)) return false;
    }
  }
  return true;
}

std::vector<InventoryPoint> generate_nonflood(const FeatureStack& stack,
                                              std::span<const InventoryPoint> flood,
                                              const NonfloodOptions& options) {
  std::vector<std::uint8_t> blocked(stack.mask);
  const auto reach = static_cast<std::ptrdiff_t>(options.min_distance > 0 ? options.min_distance - 1 : 0);
  const auto h = static_cast<std::ptrdiff_t>(stack.height);
  const auto w = static_cast<std::ptrdiff_t>(stack.width);
  for (const auto& p : flood) {
    const auto pr = static_cast<std::ptrdiff_t>(p.row);
    const auto pc = static_cast<std::ptrdiff_t>(p.col);
    for (auto r = std::max<std::ptrdiff_t>(0, pr - reach); r <= std::min(h - 1, pr + reach); ++r) {
      for (auto c = std::max<std::ptrdiff_t>(0, pc - reach); c <= std::min(w - 1, pc + reach); ++c) {
        blocked[static_cast<std::size_t>(r * w + c)] = 1;
      }
    }
  }
  std::vector<std::size_t> eligible;
  for (std::size_t r = 0; r < stack.height; ++r) {
    for (std::size_t c = 0; c < stack.width; ++c) {
      if (blocked[r * stack.width + c]) continue;
      if (options.patch > 0 && !window_fits(stack, r, c, options.patch)) continue;
      eligible.push_back(r * stack.width + c);
    }
  }
  if (eligible.size() < options.count) {
    throw CapacityError("requested " + std::to_string(options.count) + " non-flood points but only " +
                        std::to_string(eligible.size()) + " cells are eligible");
  }
  Rng rng(derive_seed(options.seed, "nonflood"));
  std::vector<InventoryPoint> out;
  out.reserve(options.count);
  for (std::size_t i = 0; i < options.count; ++i) {
    const auto j = i + static_cast<std::size_t>(uniform_index(rng, eligible.size() - i));
    std::swap(eligible[i], eligible[j]);
    out.push_back({eligible[i] / stack.width, eligible[i] % stack.width, 0, PointSource::Generated});
  }
  return out;
}

std::string to_string(Subset subset) {
  switch (subset) {
    case Subset::Train: return "train";
    case Subset::Validation: return "validation";
    case Subset::Test: return "test";
  }
  return "unknown";
}

std::vector<std::size_t> PatchDataset::indices(Subset s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < subset.size(); ++i) {
    if (subset[i] == s) out.push_back(i);
  }
  return out;
}

Tensor<float> PatchDataset::gather(std::span<const std::size_t> samples) const {
  const Shape s = x.shape();
  const std::size_t per = s.c * s.plane();
  Tensor<float> out(Shape{samples.size(), s.c, s.h, s.w});
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i] >= s.n) throw DimensionError("sample index " + std::to_string(samples[i]) + " out of range");
    std::copy_n(x.data() + samples[i] * per, per, out.data() + i * per);
  }
  return out;
}

std::vector<float> PatchDataset::labels(std::span<const std::size_t> samples) const {
  std::vector<float> out;
  out.reserve(samples.size());
  for (auto i : samples) out.push_back(y.at(i));
  return out;
}

PatchDataset PatchDataset::without_factor(std::size_t factor) const {
  const Shape s = x.shape();
  if (factor >= s.c) throw ValueError("factor index " + std::to_string(factor) + " out of range");
  if (s.c < 2) throw ValueError("cannot drop the only factor");
  PatchDataset out;
  out.factors = factors;
  out.factors.erase(out.factors.begin() + static_cast<std::ptrdiff_t>(factor));
  out.patch = patch;
  out.x = Tensor<float>(Shape{s.n, s.c - 1, s.h, s.w});
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0, k = 0; c < s.c; ++c) {
      if (c == factor) continue;
      std::copy_n(x.data() + (n * s.c + c) * s.plane(), s.plane(),
                  out.x.data() + (n * (s.c - 1) + k++) * s.plane());
    }
  }
  out.y = y;
  out.points = points;
  out.rejected = rejected;
  out.subset = subset;
  out.standardization = standardization;
  if (!out.standardization.empty()) {
    const auto at = static_cast<std::ptrdiff_t>(factor);
    out.standardization.factor_names.erase(out.standardization.factor_names.begin() + at);
    out.standardization.mean.erase(out.standardization.mean.begin() + at);
    out.standardization.stddev.erase(out.standardization.stddev.begin() + at);
  }
  out.warnings = warnings;
  return out;
}

PatchDataset extract_patches(const FeatureStack& stack, std::span<const InventoryPoint> points,
                             std::size_t patch) {
  if (patch == 0) throw ValueError("patch size must be positive");
  PatchDataset ds;
  ds.factors = stack.factors;
  ds.patch = patch;
  std::vector<std::size_t> accepted;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    const std::ptrdiff_t r0 = window_origin(p.row, patch);
    const std::ptrdiff_t c0 = window_origin(p.col, patch);
    const auto sp = static_cast<std::ptrdiff_t>(patch);
    if (r0 < 0 || c0 < 0 || r0 + sp > static_cast<std::ptrdiff_t>(stack.height) ||
        c0 + sp > static_cast<std::ptrdiff_t>(stack.width)) {
      ds.rejected.push_back({i, p, "window exits grid"});
    } else if (!window_fits(stack, p.row, p.col, patch)) {
      ds.rejected.push_back({i, p, "window touches nodata"});
    } else {
      accepted.push_back(i);
    }
  }
  const std::size_t f_count = stack.factor_count();
  ds.x = Tensor<float>(Shape{accepted.size(), f_count, patch, patch});
  for (std::size_t n = 0; n < accepted.size(); ++n) {
    const auto& p = points[accepted[n]];
    const auto r0 = static_cast<std::size_t>(window_origin(p.row, patch));
    const auto c0 = static_cast<std::size_t>(window_origin(p.col, patch));
    for (std::size_t f = 0; f < f_count; ++f) {
      float* dst = ds.x.data() + (n * f_count + f) * patch * patch;
      for (std::size_t r = 0; r < patch; ++r) {
        const float* src = &stack.data[(f * stack.height + r0 + r) * stack.width + c0];
        std::copy_n(src, patch, dst + r * patch);
      }
    }
    ds.y.push_back(static_cast<float>(p.label));
    ds.points.push_back(p);
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Split and standardization

std::array<std::size_t, 3> split_counts(std::size_t n, const SplitRatios& ratios) {
  const std::array<double, 3> r{ratios.train, ratios.validation, ratios.test};
  for (double v : r) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ValueError("split ratios must be non-negative");
  }
  if (std::abs(r[0] + r[1] + r[2] - 1.0) > 1e-9) throw ValueError("split ratios must sum to 1");
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> frac{};
  std::size_t used = 0;
  for (int i = 0; i < 3; ++i) {
    const double share = r[i] * static_cast<double>(n);
    // Guard against 0.7 * 10 landing at 6.999...
    counts[i] = static_cast<std::size_t>(std::floor(share + 1e-9));
    frac[i] = share - static_cast<double>(counts[i]);
    used += counts[i];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return frac[a] > frac[b]; });
  for (std::size_t k = 0; used < n; ++k, ++used) ++counts[order[k % 3]];
  return counts;
}

void split(PatchDataset& dataset, const SplitRatios& ratios, std::uint64_t seed, bool stratified) {
  Rng rng(derive_seed(seed, "split"));
  dataset.subset.assign(dataset.size(), Subset::Train);
  auto assign = [&](std::vector<std::size_t> members) {
    const auto counts = split_counts(members.size(), ratios);
    shuffle(std::span<std::size_t>(members), rng);
    for (std::size_t k = 0; k < members.size(); ++k) {
      dataset.subset[members[k]] = k < counts[0]               ? Subset::Train
                                   : k < counts[0] + counts[1] ? Subset::Validation
                                                               : Subset::Test;
    }
  };
  if (stratified) {
    for (float label : {0.0f, 1.0f}) {
      std::vector<std::size_t> members;
      for (std::size_t i = 0; i < dataset.size(); ++i) {
        if (dataset.y[i] == label) members.push_back(i);
      }
      assign(std::move(members));
    }
  } else {
    std::vector<std::size_t> all(dataset.size());
    std::iota(all.begin(), all.end(), 0);
    assign(std::move(all));
  }
}

void apply_standardization(const Standardization& st, PatchDataset& dataset) {
  const Shape s = dataset.x.shape();
  if (st.mean.size() != s.c || st.stddev.size() != s.c) {
    throw DimensionError("standardization covers " + std::to_string(st.mean.size()) +
                         " factors, dataset has " + std::to_string(s.c));
  }
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      float* v = dataset.x.data() + (n * s.c + c) * s.plane();
      for (std::size_t i = 0; i < s.plane(); ++i) v[i] = st.apply(c, v[i]);
    }
  }
  dataset.standardization = st;
}

void standardize(PatchDataset& dataset) {
  const auto train = dataset.indices(Subset::Train);
  if (train.empty()) throw ValueError("standardize needs a non-empty training subset; split first");
  const Shape s = dataset.x.shape();
  Standardization st;
  st.factor_names = dataset.factors;
  st.mean.assign(s.c, 0.0);
  st.stddev.assign(s.c, 0.0);
  const double count = static_cast<double>(train.size() * s.plane());
  for (std::size_t c = 0; c < s.c; ++c) {
    double sum = 0.0;
    for (auto n : train) {
      const float* v = dataset.x.data() + (n * s.c + c) * s.plane();
      for (std::size_t i = 0; i < s.plane(); ++i) sum += v[i];
    }
    const double mean = sum / count;
    double sq = 0.0;
    for (auto n : train) {
      const float* v = dataset.x.data() + (n * s.c + c) * s.plane();
      for (std::size_t i = 0; i < s.plane(); ++i) sq += (v[i] - mean) * (v[i] - mean);
    }
    double sd = std::sqrt(sq / count);
    if (!(sd > 0.0)) {
      dataset.warnings.push_back("factor '" + dataset.factors[c] +
                                 "' has zero variance on the training subset; std set to 1");
      sd = 1.0;
    }
    st.mean[c] = mean;
    st.stddev[c] = sd;
  }
  apply_standardization(st, dataset);
}

}  // namespace ffsm
