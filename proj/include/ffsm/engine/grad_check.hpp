#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ffsm/engine/parameter.hpp"
#include "ffsm/engine/tape.hpp"

namespace ffsm {

struct GradCheckOptions {
  double step = 1e-3;
  double tolerance = 1e-3;
  // Denominator floor for the relative error, so entries whose true
  // gradient is ~0 are judged on absolute error instead.
  double scale_floor = 1e-4;
  // A probe whose +-step window changes a relu/max decision straddles a
  // kink, where central differences are meaningless. Such entries are
  // re-probed with step / 10, ... down to min_step.
  double min_step = 1e-7;
  // 0 checks every entry; otherwise a seeded sample per tensor.
  std::size_t max_entries_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct GradCheckEntry {
  std::string tensor;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
  double step = 0.0;
};

struct GradCheckReport {
  bool passed = true;
  std::size_t checked = 0;
  std::size_t reduced_step = 0;  // entries probed below the requested step
  std::size_t inconclusive = 0;  // kink still inside min_step; not compared
  double max_rel_error = 0.0;
  GradCheckEntry worst;
  std::vector<GradCheckEntry> failures;
};

// A fragment maps the current values of the checked tensors to a scalar loss.
using GradFragment = std::function<Tensor<double>(Tape<double>&)>;

// Compares reverse-mode gradients of `fragment` with central differences
// (f(x+h) - f(x-h)) / 2h for each entry of each tensor in `wrt`.
GradCheckReport grad_check(const GradFragment& fragment, std::vector<Parameter<double>> wrt,
                           const GradCheckOptions& options = {});

}  // namespace ffsm
