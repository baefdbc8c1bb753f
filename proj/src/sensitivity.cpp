#include "ffsm/sensitivity.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <thread>

#include "ffsm/binary_io.hpp"
#include "ffsm/error.hpp"

namespace ffsm {

double prd(double auc_o, double auc_i) {
  if (!(auc_o > 0.0)) throw ValueError("PRD needs a positive reference AUC");
  return 100.0 * std::abs(auc_o - auc_i) / auc_o;
}

std::vector<std::string> SensitivityReport::ranking() const {
  std::vector<const FactorSensitivity*> sorted;
  for (const auto& f : factors) sorted.push_back(&f);
  std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->rank < b->rank; });
  std::vector<std::string> out;
  for (const auto* f : sorted) out.push_back(f->factor);
  return out;
}

nlohmann::json SensitivityReport::to_json() const {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& f : factors) {
    nlohmann::json j = {{"factor", f.factor}, {"rank", f.rank}};
    if (f.error) {
      j["auc"] = nullptr;
      j["prd_percent"] = nullptr;
      j["prd_fraction"] = nullptr;
      j["error"] = *f.error;
    } else {
      j["auc"] = f.auc;
      j["prd_percent"] = f.prd;
      j["prd_fraction"] = f.prd / 100.0;
    }
    list.push_back(j);
  }
  return {{"auc_o", auc_o}, {"factors", list}, {"ranking", ranking()}};
}

void SensitivityReport::write_csv(const std::filesystem::path& path) const {
  std::string out = "factor,auc,prd,rank\n";
  char line[160];
  for (const auto& f : factors) {
    if (f.error) {
      std::snprintf(line, sizeof line, "%s,,,%zu\n", f.factor.c_str(), f.rank);
    } else {
      std::snprintf(line, sizeof line, "%s,%.6f,%.6f,%zu\n", f.factor.c_str(), f.auc, f.prd, f.rank);
    }
    out += line;
  }
  io::write_file(path, out);
}

void assign_ranks(std::vector<FactorSensitivity>& factors) {
  std::vector<std::size_t> order(factors.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& fa = factors[a];
    const auto& fb = factors[b];
    if (fa.error.has_value() != fb.error.has_value()) return !fa.error.has_value();
    if (fa.error) return false;
    return fa.prd > fb.prd;
  });
  for (std::size_t k = 0; k < order.size(); ++k) factors[order[k]].rank = k + 1;
}

SensitivityReport jackknife(const PatchDataset& data, const BackboneSpec& spec, const TrainConfig& config,
                            std::uint64_t seed, const JackknifeOptions& options) {
  const std::size_t f_count = data.factors.size();
  if (f_count < 2) throw ValueError("jackknife needs at least two factors");
  if (spec.factors != f_count) {
    throw ConfigError("spec expects " + std::to_string(spec.factors) + " factors, dataset has " +
                      std::to_string(f_count));
  }

  SensitivityReport report;
  Model<float> full = Model<float>::build(spec, seed);
  train(full, data, config);
  report.auc_o = evaluate(full, data, Subset::Test).roc.auc;

  report.factors.resize(f_count);
  auto run_one = [&](std::size_t j) {
    FactorSensitivity& out = report.factors[j];
    out.factor = data.factors[j];
    try {
      if (options.mode == JackknifeMode::Retrain) {
        const PatchDataset reduced = data.without_factor(j);
        BackboneSpec reduced_spec = spec;
        reduced_spec.factors = f_count - 1;
        Model<float> model = Model<float>::build(reduced_spec, seed);
        train(model, reduced, config);
        out.auc = evaluate(model, reduced, Subset::Test).roc.auc;
      } else {
        PatchDataset zeroed = data;
        zeroed.x = data.x.clone();
        const Shape s = zeroed.x.shape();
        for (std::size_t n = 0; n < s.n; ++n) {
          std::fill_n(zeroed.x.data() + (n * s.c + j) * s.plane(), s.plane(), 0.0f);
        }
        Model<float> model = full.cast<float>();
        out.auc = evaluate(model, zeroed, Subset::Test).roc.auc;
      }
      out.prd = prd(report.auc_o, out.auc);
    } catch (const std::exception& e) {
      out.error = e.what();
    }
  };

  const std::size_t jobs = std::clamp<std::size_t>(options.jobs, 1, f_count);
  if (jobs == 1) {
    for (std::size_t j = 0; j < f_count; ++j) run_one(j);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < jobs; ++w) {
      workers.emplace_back([&] {
        for (std::size_t j = next++; j < f_count; j = next++) run_one(j);
      });
    }
    for (auto& t : workers) t.join();
  }
  assign_ranks(report.factors);
  return report;
}

}  // namespace ffsm
