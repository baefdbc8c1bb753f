#pragma once

#include <string>
#include <vector>

namespace ffsm {

// Per-factor z-scoring parameters fitted on the training subset. Travels with
// a trained model so whole-grid inference reuses the exact same transform.
struct Standardization {
  std::vector<std::string> factor_names;
  std::vector<double> mean;
  std::vector<double> stddev;

  bool empty() const { return mean.empty(); }
  float apply(std::size_t factor, float value) const {
    return static_cast<float>((static_cast<double>(value) - mean[factor]) / stddev[factor]);
  }
};

}  // namespace ffsm
