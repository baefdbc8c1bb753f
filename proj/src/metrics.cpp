#include "ffsm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "ffsm/binary_io.hpp"
#include "ffsm/error.hpp"

namespace ffsm {
namespace {

void check_inputs(std::span<const float> scores, std::span<const float> labels) {
  if (scores.size() != labels.size()) {
    throw DimensionError(std::to_string(scores.size()) + " scores vs " + std::to_string(labels.size()) +
                         " labels");
  }
  for (float y : labels) {
    if (y != 0.0f && y != 1.0f) throw ValueError("labels must be 0 or 1");
  }
}

}  // namespace

ConfusionMatrix confusion(std::span<const float> scores, std::span<const float> labels, double threshold) {
  check_inputs(scores, labels);
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= threshold;
    const bool actual = labels[i] == 1.0f;
    if (predicted && actual) ++cm.tp;
    else if (predicted) ++cm.fp;
    else if (actual) ++cm.fn;
    else ++cm.tn;
  }
  return cm;
}

Metrics metrics(const ConfusionMatrix& cm) {
  Metrics m;
  const auto d = [](std::size_t v) { return static_cast<double>(v); };
  if (cm.total() == 0) throw ValueError("metrics of an empty confusion matrix");
  m.accuracy = d(cm.tp + cm.tn) / d(cm.tp + cm.fp + cm.tn + cm.fn);
  if (cm.tp + cm.fp > 0) m.precision = d(cm.tp) / d(cm.tp + cm.fp);
  if (cm.tp + cm.fn > 0) m.recall = d(cm.tp) / d(cm.tp + cm.fn);
  if (m.precision && m.recall && *m.precision + *m.recall > 0.0) {
    m.f1 = 2.0 * *m.precision * *m.recall / (*m.precision + *m.recall);
  }
  return m;
}

RocCurve roc_auc(std::span<const float> scores, std::span<const float> labels) {
  check_inputs(scores, labels);
  std::size_t pos = 0;
  for (float y : labels) pos += y == 1.0f;
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw ValueError("AUC is undefined when only one class is present");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocCurve roc;
  roc.points.push_back({INFINITY, 0.0, 0.0});
  std::size_t tp = 0;
  std::size_t fp = 0;
  // Trapezoid areas in units of one positive-negative pair, kept as exact
  // integers (2 * area) until the final division.
  std::uint64_t twice_area = 0;
  for (std::size_t i = 0; i < order.size();) {
    const float s = scores[order[i]];
    std::size_t dtp = 0;
    std::size_t dfp = 0;
    for (; i < order.size() && scores[order[i]] == s; ++i) {
      if (labels[order[i]] == 1.0f) ++dtp;
      else ++dfp;
    }
    twice_area += static_cast<std::uint64_t>(dfp) * (2 * tp + dtp);
    tp += dtp;
    fp += dfp;
    roc.points.push_back({s, static_cast<double>(fp) / static_cast<double>(neg),
                          static_cast<double>(tp) / static_cast<double>(pos)});
  }
  roc.auc = static_cast<double>(twice_area) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
  return roc;
}

void write_roc_csv(const RocCurve& roc, const std::filesystem::path& path) {
  std::string out = "threshold,fpr,tpr\n";
  char line[96];
  for (const auto& p : roc.points) {
    if (std::isinf(p.threshold)) {
      std::snprintf(line, sizeof line, "inf,%.9g,%.9g\n", p.fpr, p.tpr);
    } else {
      std::snprintf(line, sizeof line, "%.9g,%.9g,%.9g\n", p.threshold, p.fpr, p.tpr);
    }
    out += line;
  }
  io::write_file(path, out);
}

nlohmann::json to_json(const ConfusionMatrix& cm) {
  return {{"tp", cm.tp}, {"tn", cm.tn}, {"fp", cm.fp}, {"fn", cm.fn}};
}

nlohmann::json to_json(const Metrics& m) {
  nlohmann::json j;
  j["accuracy"] = m.accuracy;
  j["precision"] = m.precision ? nlohmann::json(*m.precision) : nlohmann::json(nullptr);
  j["recall"] = m.recall ? nlohmann::json(*m.recall) : nlohmann::json(nullptr);
  j["precision_defined"] = m.precision.has_value();
  j["recall_defined"] = m.recall.has_value();
  j["f1"] = m.f1;
  return j;
}

}  // namespace ffsm
