#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ffsm/backbones.hpp"
#include "ffsm/data.hpp"
#include "ffsm/error.hpp"
#include "ffsm/sensitivity.hpp"
#include "ffsm/train.hpp"

namespace ffsm::cli {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int { kOk = 0, kUsage = 2, kData = 3, kNumeric = 4 };

int exit_code_for(ErrorKind kind);

// Everything a pipeline command needs. Paths are taken relative to the
// working directory.
struct RunConfig {
  std::filesystem::path stack;
  std::filesystem::path inventory;
  std::filesystem::path out = "out";
  std::uint64_t seed = 0;
  std::size_t patch = 32;
  std::size_t nonflood_buffer = 5;
  SplitRatios split;
  bool stratified = true;
  BackboneSpec model = default_model();
  TrainConfig train;
  double threshold = 0.5;
  double corr_threshold = 0.7;
  double vif_threshold = 5.0;
  bool factors_full_raster = false;
  std::size_t classes = 5;
  std::size_t jenks_sample = 50000;
  std::size_t tile_size = 64;
  JackknifeMode jackknife_mode = JackknifeMode::Retrain;
  std::size_t jobs = 1;

  static BackboneSpec default_model();
  // Unknown keys raise ConfigError. Missing keys keep their defaults.
  static RunConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

RunConfig load_config(const std::filesystem::path& path);

// Runs one command line. Errors are reported on `err` as a single line
// "error <ErrorClass>: <message>" and mapped to an exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace ffsm::cli
