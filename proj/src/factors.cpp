#include "ffsm/factors.hpp"

#include <cmath>
#include <cstdio>

#include <Eigen/Dense>

#include "ffsm/binary_io.hpp"
#include "ffsm/error.hpp"

namespace ffsm {

std::vector<double> FactorTable::column(std::size_t c) const {
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) out[r] = at(r, c);
  return out;
}

void FactorTable::validate() const {
  if (names.empty()) throw ValueError("factor table has no columns");
  if (values.size() != rows * names.size()) throw DimensionError("factor table size mismatch");
  for (double v : values) {
    if (!std::isfinite(v)) throw ValueError("factor table holds a non-finite value");
  }
}

FactorTable sample_table(const FeatureStack& stack, std::span<const InventoryPoint> points) {
  FactorTable t;
  t.names = stack.factors;
  t.rows = points.size();
  t.values.reserve(points.size() * stack.factor_count());
  for (const auto& p : points) {
    if (p.row >= stack.height || p.col >= stack.width || stack.masked(p.row, p.col)) {
      throw ValueError("point (" + std::to_string(p.row) + "," + std::to_string(p.col) +
                       ") is outside the grid or on nodata");
    }
    for (std::size_t f = 0; f < stack.factor_count(); ++f) t.values.push_back(stack.at(f, p.row, p.col));
  }
  return t;
}

FactorTable raster_table(const FeatureStack& stack) {
  FactorTable t;
  t.names = stack.factors;
  for (std::size_t r = 0; r < stack.height; ++r) {
    for (std::size_t c = 0; c < stack.width; ++c) {
      if (stack.masked(r, c)) continue;
      for (std::size_t f = 0; f < stack.factor_count(); ++f) t.values.push_back(stack.at(f, r, c));
      ++t.rows;
    }
  }
  return t;
}

namespace {

// Columns centred to zero mean; `sd` is the population standard deviation.
Eigen::MatrixXd centred(const FactorTable& t, std::vector<double>& sd) {
  Eigen::MatrixXd x(t.rows, t.cols());
  for (std::size_t r = 0; r < t.rows; ++r) {
    for (std::size_t c = 0; c < t.cols(); ++c) x(r, c) = t.at(r, c);
  }
  sd.assign(t.cols(), 0.0);
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    x.col(c).array() -= x.col(c).mean();
    sd[static_cast<std::size_t>(c)] = std::sqrt(x.col(c).squaredNorm() / static_cast<double>(t.rows));
  }
  return x;
}

}  // namespace

PearsonMatrix pearson_matrix(const FactorTable& table) {
  table.validate();
  if (table.rows < 2) throw ValueError("Pearson correlation needs at least two samples");
  std::vector<double> sd;
  const Eigen::MatrixXd x = centred(table, sd);
  const std::size_t f = table.cols();
  PearsonMatrix m;
  m.size = f;
  m.r.assign(f * f, 0.0);
  m.defined.assign(f, true);
  for (std::size_t i = 0; i < f; ++i) m.defined[i] = sd[i] > 0.0;
  for (std::size_t i = 0; i < f; ++i) {
    if (!m.defined[i]) continue;
    m.r[i * f + i] = 1.0;
    for (std::size_t j = i + 1; j < f; ++j) {
      if (!m.defined[j]) continue;
      const auto ci = x.col(static_cast<Eigen::Index>(i));
      const auto cj = x.col(static_cast<Eigen::Index>(j));
      const double r = std::clamp(ci.dot(cj) / (ci.norm() * cj.norm()), -1.0, 1.0);
      m.r[i * f + j] = r;
      m.r[j * f + i] = r;
    }
  }
  return m;
}

std::vector<VifValue> vif(const FactorTable& table) {
  table.validate();
  const std::size_t f = table.cols();
  if (table.rows <= f) {
    throw ValueError("VIF needs more samples than factors (" + std::to_string(table.rows) + " <= " +
                     std::to_string(f) + ")");
  }
  std::vector<double> sd;
  Eigen::MatrixXd x = centred(table, sd);
  // Unit-variance columns leave R^2 unchanged and help conditioning.
  for (std::size_t c = 0; c < f; ++c) {
    if (sd[c] > 0.0) x.col(static_cast<Eigen::Index>(c)) /= sd[c];
  }
  std::vector<VifValue> out(f);
  if (f == 1) return out;
  for (std::size_t j = 0; j < f; ++j) {
    if (!(sd[j] > 0.0)) {
      out[j].defined = false;
      out[j].value = 0.0;
      continue;
    }
    Eigen::MatrixXd others(x.rows(), static_cast<Eigen::Index>(f - 1));
    for (std::size_t c = 0, k = 0; c < f; ++c) {
      if (c != j) others.col(static_cast<Eigen::Index>(k++)) = x.col(static_cast<Eigen::Index>(c));
    }
    const Eigen::VectorXd y = x.col(static_cast<Eigen::Index>(j));
    Eigen::MatrixXd a = others.transpose() * others;
    const Eigen::VectorXd b = others.transpose() * y;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
    if (ldlt.info() != Eigen::Success || !(ldlt.rcond() > 1e-13)) {
      a.diagonal().array() += 1e-10 * std::max(1.0, a.trace() / static_cast<double>(a.rows()));
      ldlt.compute(a);
    }
    const Eigen::VectorXd beta = ldlt.solve(b);
    // The residual is formed explicitly: an error in beta then enters the
    // residual sum of squares only at second order.
    const double rss = (y - others * beta).squaredNorm();
    const double tss = y.squaredNorm();
    const double one_minus_r2 = rss / tss;
    out[j].value = one_minus_r2 <= 1e-12 ? INFINITY : 1.0 / one_minus_r2;
  }
  return out;
}

OptimizationReport optimize(const FactorTable& table, double corr_threshold, double vif_threshold) {
  if (!(corr_threshold > 0.0 && corr_threshold <= 1.0)) throw ValueError("correlation threshold must lie in (0, 1]");
  if (!(vif_threshold >= 1.0)) throw ValueError("VIF threshold must be at least 1");
  OptimizationReport rep;
  rep.names = table.names;
  rep.corr_threshold = corr_threshold;
  rep.vif_threshold = vif_threshold;
  rep.pearson = pearson_matrix(table);
  rep.vif = vif(table);
  const std::size_t f = table.cols();
  rep.flags.resize(f);
  for (std::size_t i = 0; i < f; ++i) {
    for (std::size_t j = i + 1; j < f; ++j) {
      if (!rep.pearson.defined[i] || !rep.pearson.defined[j]) continue;
      const double r = rep.pearson.at(i, j);
      if (std::abs(r) >= corr_threshold) {
        rep.pairs.push_back({table.names[i], table.names[j], r});
        rep.flags[i].flagged_correlation = true;
        rep.flags[j].flagged_correlation = true;
      }
    }
    if (!rep.pearson.defined[i]) rep.flags[i].flagged_correlation = true;
    if (!rep.vif[i].defined || rep.vif[i].value > vif_threshold) rep.flags[i].flagged_vif = true;
  }
  return rep;
}

nlohmann::json OptimizationReport::to_json() const {
  nlohmann::json factors = nlohmann::json::array();
  for (std::size_t i = 0; i < names.size(); ++i) {
    nlohmann::json j = {{"factor", names[i]},
                        {"pearson_defined", static_cast<bool>(pearson.defined[i])},
                        {"vif_defined", vif[i].defined},
                        {"vif_infinite", vif[i].infinite()},
                        {"flagged_correlation", flags[i].flagged_correlation},
                        {"flagged_vif", flags[i].flagged_vif},
                        {"retained", flags[i].retained()}};
    j["vif"] = vif[i].defined && !vif[i].infinite() ? nlohmann::json(vif[i].value) : nlohmann::json(nullptr);
    factors.push_back(j);
  }
  nlohmann::json pair_list = nlohmann::json::array();
  for (const auto& p : pairs) pair_list.push_back({{"a", p.a}, {"b", p.b}, {"r", p.r}});
  return {{"corr_threshold", corr_threshold},
          {"vif_threshold", vif_threshold},
          {"factors", factors},
          {"correlated_pairs", pair_list}};
}

void OptimizationReport::write_pearson_csv(const std::filesystem::path& path) const {
  std::string out = "factor";
  for (const auto& n : names) out += ',' + n;
  out += '\n';
  char cell[32];
  for (std::size_t i = 0; i < names.size(); ++i) {
    out += names[i];
    for (std::size_t j = 0; j < names.size(); ++j) {
      out += ',';
      if (pearson.defined[i] && pearson.defined[j]) {
        std::snprintf(cell, sizeof cell, "%.6f", pearson.at(i, j));
        out += cell;
      }
    }
    out += '\n';
  }
  io::write_file(path, out);
}

}  // namespace ffsm
