#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ffsm/engine/tensor.hpp"
#include "ffsm/error.hpp"

namespace ffsm {

template <typename T>
struct Parameter {
  std::string name;  // dotted path, e.g. "stage2.block1.conv1.weight"
  Tensor<T> tensor;
};

// Ordered set of uniquely named tensors. Holds handles, so layers and the
// set see the same storage.
template <typename T>
class ParameterSet {
 public:
  Tensor<T>& add(std::string name, Tensor<T> tensor) {
    if (find(name) != nullptr) throw ValueError("duplicate parameter name: " + name);
    items_.push_back(Parameter<T>{std::move(name), std::move(tensor)});
    return items_.back().tensor;
  }

  Tensor<T>* find(const std::string& name) {
    for (auto& p : items_) {
      if (p.name == name) return &p.tensor;
    }
    return nullptr;
  }
  const Tensor<T>* find(const std::string& name) const {
    return const_cast<ParameterSet*>(this)->find(name);
  }

  std::vector<Parameter<T>>& items() { return items_; }
  const std::vector<Parameter<T>>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }

  std::size_t scalar_count() const {
    std::size_t total = 0;
    for (const auto& p : items_) total += p.tensor.numel();
    return total;
  }

  void zero_grads() {
    for (auto& p : items_) p.tensor.zero_grad();
  }

 private:
  std::vector<Parameter<T>> items_;
};

}  // namespace ffsm
