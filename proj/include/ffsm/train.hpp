#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ffsm/backbones.hpp"
#include "ffsm/data.hpp"
#include "ffsm/metrics.hpp"

namespace ffsm {

enum class OptimizerKind { Adam, Sgd };

struct TrainConfig {
  std::size_t batch_size = 4;
  double initial_lr = 1e-3;
  double plateau_factor = 10.0;       // lr is divided by this
  std::size_t plateau_patience = 10;  // epochs without a validation-accuracy gain
  std::size_t max_epochs = 200;
  // Stop after this many epochs without a new best validation loss.
  std::optional<std::size_t> early_stop_patience;
  double min_lr = 1e-8;
  OptimizerKind optimizer = OptimizerKind::Adam;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  double lr = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  std::string stop_reason;
  // Parameter and buffer values at best_epoch, by name.
  std::vector<std::pair<std::string, std::vector<float>>> checkpoint;

  nlohmann::json to_json() const;  // everything except the checkpoint arrays
};

// Probabilities for every sample, in inference mode. Samples are processed
// independently, so results do not depend on chunking.
std::vector<float> predict(Model<float>& model, const Tensor<float>& x, std::size_t chunk = 64);

// Mean binary cross-entropy (same clamp as the training loss), in double.
double mean_bce(std::span<const float> pred, std::span<const float> labels);

// Runs the training protocol and leaves the best-validation-loss
// parameters in `model`. The model's standardization is set from the data.
TrainReport train(Model<float>& model, const PatchDataset& data, const TrainConfig& config);

struct EvalReport {
  std::size_t samples = 0;
  double loss = 0.0;
  ConfusionMatrix confusion;
  Metrics metrics;
  RocCurve roc;
  std::vector<float> scores;

  nlohmann::json to_json() const;
};

EvalReport evaluate(Model<float>& model, const PatchDataset& data, Subset subset, double threshold = 0.5);

}  // namespace ffsm
