#include "ffsm/engine/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>

#include "ffsm/engine/ops.hpp"
#include "ffsm/random.hpp"

namespace ffsm {

GradCheckReport grad_check(const GradFragment& fragment, std::vector<Parameter<double>> wrt,
                           const GradCheckOptions& options) {
  std::vector<bool> previous;
  for (auto& p : wrt) {
    previous.push_back(p.tensor.requires_grad());
    p.tensor.set_requires_grad(true);
    p.tensor.clear_grad();
  }

  std::vector<std::vector<double>> analytic;
  {
    Tape<double> tape;
    Tensor<double> loss = fragment(tape);
    tape.backward(loss);
    for (auto& p : wrt) {
      if (p.tensor.has_grad()) {
        analytic.emplace_back(p.tensor.grad().begin(), p.tensor.grad().end());
      } else {
        analytic.emplace_back(p.tensor.numel(), 0.0);
      }
    }
  }

  struct Probe {
    double value;
    std::uint64_t branches;
  };
  auto evaluate = [&]() {
    ops::BranchTrace trace;
    Tape<double> tape(false);
    const double value = fragment(tape)[0];
    return Probe{value, trace.fingerprint()};
  };
  const std::uint64_t base_branches = evaluate().branches;

  GradCheckReport report;
  Rng rng(options.seed);
  for (std::size_t k = 0; k < wrt.size(); ++k) {
    Tensor<double>& t = wrt[k].tensor;
    std::vector<std::size_t> indices(t.numel());
    std::iota(indices.begin(), indices.end(), 0);
    if (options.max_entries_per_tensor > 0 && indices.size() > options.max_entries_per_tensor) {
      shuffle(std::span<std::size_t>(indices), rng);
      indices.resize(options.max_entries_per_tensor);
      std::sort(indices.begin(), indices.end());
    }
    for (std::size_t i : indices) {
      const double original = t[i];
      double step = options.step;
      std::optional<double> numeric;
      for (; step >= options.min_step * (1.0 - 1e-9); step /= 10.0) {
        t[i] = original + step;
        const Probe up = evaluate();
        t[i] = original - step;
        const Probe down = evaluate();
        t[i] = original;
        if (up.branches == base_branches && down.branches == base_branches) {
          numeric = (up.value - down.value) / (2.0 * step);
          break;
        }
      }
      if (!numeric) {
        ++report.inconclusive;
        continue;
      }
      if (step < options.step) ++report.reduced_step;
      const double a = analytic[k][i];
      const double scale = std::max({std::abs(a), std::abs(*numeric), options.scale_floor});
      GradCheckEntry entry{wrt[k].name, i, a, *numeric, std::abs(a - *numeric) / scale, step};
      ++report.checked;
      if (entry.rel_error > report.max_rel_error || report.checked == 1) {
        report.max_rel_error = std::max(report.max_rel_error, entry.rel_error);
        if (entry.rel_error >= report.worst.rel_error) report.worst = entry;
      }
      if (entry.rel_error >= options.tolerance) {
        report.passed = false;
        report.failures.push_back(entry);
      }
    }
  }

  for (std::size_t k = 0; k < wrt.size(); ++k) {
    wrt[k].tensor.clear_grad();
    wrt[k].tensor.set_requires_grad(previous[k]);
  }
  return report;
}

}  // namespace ffsm
