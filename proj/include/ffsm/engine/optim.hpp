#pragma once

#include <cmath>
#include <vector>

#include "ffsm/engine/parameter.hpp"

namespace ffsm {

template <typename T>
class Optimizer {
 public:
  explicit Optimizer(double lr) : lr_(lr) {}
  virtual ~Optimizer() = default;

  virtual void step(std::vector<Parameter<T>>& params) = 0;

  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }

 private:
  double lr_;
};

template <typename T>
class Sgd final : public Optimizer<T> {
 public:
  using Optimizer<T>::Optimizer;

  void step(std::vector<Parameter<T>>& params) override {
    for (auto& p : params) {
      if (!p.tensor.has_grad()) continue;
      auto g = p.tensor.grad();
      auto v = p.tensor.values();
      for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] -= static_cast<T>(this->learning_rate() * g[i]);
      }
    }
  }
};

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Bias-corrected Adam. A parameter with an all-zero gradient keeps its value.
template <typename T>
class Adam final : public Optimizer<T> {
 public:
  explicit Adam(double lr, AdamOptions options = {}) : Optimizer<T>(lr), options_(options) {}

  void step(std::vector<Parameter<T>>& params) override {
    if (first_.empty()) {
      for (const auto& p : params) {
        first_.emplace_back(p.tensor.numel(), 0.0);
        second_.emplace_back(p.tensor.numel(), 0.0);
      }
    }
    if (first_.size() != params.size()) {
      throw ValueError("adam: parameter list changed between steps");
    }
    ++steps_;
    const double b1 = options_.beta1;
    const double b2 = options_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
    const double lr = this->learning_rate();
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& p = params[k].tensor;
      if (first_[k].size() != p.numel()) {
        throw ValueError("adam: state shape mismatch for " + params[k].name);
      }
      if (!p.has_grad()) continue;
      auto g = p.grad();
      auto v = p.values();
      for (std::size_t i = 0; i < v.size(); ++i) {
        const double gi = g[i];
        first_[k][i] = b1 * first_[k][i] + (1.0 - b1) * gi;
        second_[k][i] = b2 * second_[k][i] + (1.0 - b2) * gi * gi;
        const double m_hat = first_[k][i] / c1;
        const double v_hat = second_[k][i] / c2;
        v[i] -= static_cast<T>(lr * m_hat / (std::sqrt(v_hat) + options_.epsilon));
      }
    }
  }

  std::size_t steps() const { return steps_; }

 private:
  AdamOptions options_;
  std::size_t steps_ = 0;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
};

}  // namespace ffsm
