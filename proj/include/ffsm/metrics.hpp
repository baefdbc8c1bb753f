#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

namespace ffsm {

struct ConfusionMatrix {
  std::size_t tp = 0;
  std::size_t tn = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  std::size_t total() const { return tp + tn + fp + fn; }
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

// A score at or above the threshold counts as a flood prediction.
ConfusionMatrix confusion(std::span<const float> scores, std::span<const float> labels,
                          double threshold = 0.5);

// Precision or recall with a zero denominator is left empty; F1 is then 0.
struct Metrics {
  double accuracy = 0.0;
  std::optional<double> precision;
  std::optional<double> recall;
  double f1 = 0.0;
};

Metrics metrics(const ConfusionMatrix& cm);

struct RocPoint {
  double threshold;  // +inf for the leading (0, 0) point
  double fpr;
  double tpr;
};

struct RocCurve {
  std::vector<RocPoint> points;
  double auc = 0.0;
};

// Sweeps every distinct score from high to low. TPR = TP/(TP+FN) and
// FPR = FP/(FP+TN), i.e. 1 - specificity. (The printed formula labelled FPR,
// TN/(TN+FP), is specificity itself.) Equal scores form one step, so ties
// contribute a diagonal segment. Throws ValueError when only one class is
// present.
RocCurve roc_auc(std::span<const float> scores, std::span<const float> labels);

// CSV with header `threshold,fpr,tpr`.
void write_roc_csv(const RocCurve& roc, const std::filesystem::path& path);

nlohmann::json to_json(const ConfusionMatrix& cm);
nlohmann::json to_json(const Metrics& m);

}  // namespace ffsm
