#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ffsm/backbones.hpp"
#include "ffsm/data.hpp"
#include "ffsm/train.hpp"

namespace ffsm {

// Percentage of relative decrease: 100 * |auc_o - auc_i| / auc_o.
double prd(double auc_o, double auc_i);

enum class JackknifeMode {
  Retrain,      // fresh model per excluded factor
  ZeroChannel,  // reuse the full model, zero the standardized channel
};

struct JackknifeOptions {
  JackknifeMode mode = JackknifeMode::Retrain;
  std::size_t jobs = 1;
};

struct FactorSensitivity {
  std::string factor;
  double auc = 0.0;
  double prd = 0.0;     // percent
  std::size_t rank = 0;  // 1 = largest PRD
  std::optional<std::string> error;
};

struct SensitivityReport {
  double auc_o = 0.0;
  std::vector<FactorSensitivity> factors;  // dataset factor order

  // Factor names ordered by rank.
  std::vector<std::string> ranking() const;
  nlohmann::json to_json() const;
  void write_csv(const std::filesystem::path& path) const;
};

// Assigns ranks by PRD, descending; ties keep factor order and failed
// factors come last.
void assign_ranks(std::vector<FactorSensitivity>& factors);

// `data` must already be split and standardized. Every run shares the
// split, the training config and the seed.
SensitivityReport jackknife(const PatchDataset& data, const BackboneSpec& spec, const TrainConfig& config,
                            std::uint64_t seed, const JackknifeOptions& options = {});

}  // namespace ffsm
