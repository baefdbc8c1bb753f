#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "ffsm/engine/tensor.hpp"
#include "ffsm/error.hpp"

namespace ffsm {

// Records executed operations so backward() can replay them in exact reverse
// order. A tape constructed with recording == false is an inference context:
// ops run forward only and nothing is retained.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape() { clear(); }

  bool recording() const { return recording_; }

  // Whether an op over these inputs has to be recorded.
  template <typename... Ts>
  bool wants(const Ts&... inputs) const {
    return recording_ && (inputs.tracked() || ...);
  }

  // Registers `output` as produced by an op whose backward rule is `fn`.
  // `inputs` are only used for post-backward finiteness checks.
  void record(std::string op, Tensor<T>& output, std::vector<Tensor<T>> inputs, BackwardFn fn) {
    output.s_->tracked = true;
    output.s_->tape = this;
    output.s_->node = nodes_.size();
    nodes_.push_back(Node{std::move(op), output, std::move(inputs), std::move(fn)});
  }

  void backward(const Tensor<T>& loss) {
    const auto* s = loss.s_.get();
    if (s->tape != this || s->node >= nodes_.size() || !nodes_[s->node].output.same_storage(loss)) {
      throw GraphError("backward: tensor was not produced by this tape");
    }
    if (loss.numel() != 1) {
      throw GraphError("backward: loss must be a scalar, got shape " + loss.shape().str());
    }
    Tensor<T> root = loss;
    root.ensure_grad()[0] = T(1);
    for (std::size_t i = s->node + 1; i-- > 0;) {
      Node& node = nodes_[i];
      if (!node.output.has_grad()) continue;
      node.backward();
      for (auto& in : node.inputs) {
        if (!in.has_grad()) continue;
        for (T g : in.grad()) {
          if (!std::isfinite(g)) {
            throw NumericError("backward: non-finite gradient produced by " + node.op);
          }
        }
      }
    }
  }

  void clear() {
    for (auto& node : nodes_) node.output.s_->tape = nullptr;
    nodes_.clear();
  }

  std::size_t size() const { return nodes_.size(); }
  const std::string& op_name(std::size_t i) const { return nodes_.at(i).op; }

 private:
  struct Node {
    std::string op;
    Tensor<T> output;
    std::vector<Tensor<T>> inputs;
    BackwardFn backward;
  };

  bool recording_;
  std::vector<Node> nodes_;
};

}  // namespace ffsm
