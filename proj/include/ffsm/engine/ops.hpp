#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <type_traits>

#include "ffsm/engine/tape.hpp"
#include "ffsm/engine/tensor.hpp"

// Differentiable primitives. Every op takes the tape first; with a
// non-recording tape the op runs forward only. All ops reject non-finite
// results with NumericError.
namespace ffsm::ops {

struct ConvGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

// Closed-form output extent of a window sweep; throws GeometryError when the
// result would be < 1.
std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                            std::size_t padding);

template <typename T>
void ensure_finite(const Tensor<T>& t, std::string_view op);

// Fingerprints every branch decision (relu sign, max-pool winner) the ops on
// this thread take while the trace is alive. A network built from these ops
// is smooth wherever the fingerprint stays constant.
class BranchTrace {
 public:
  BranchTrace();
  ~BranchTrace();
  BranchTrace(const BranchTrace&) = delete;
  BranchTrace& operator=(const BranchTrace&) = delete;

  std::uint64_t fingerprint() const { return hash_; }
  static BranchTrace* active();
  void mix(std::uint64_t value) { hash_ = (hash_ ^ value) * 0x100000001b3ULL; }

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
  BranchTrace* previous_;
};

// Cross-correlation with zero padding. weight is [Cout, Cin, kh, kw]; bias is
// an optional [1, Cout, 1, 1] tensor.
template <typename T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& weight,
                 std::type_identity_t<const Tensor<T>*> bias, ConvGeometry geom = {});

// One kernel per channel: weight is [C, 1, k, k].
template <typename T>
Tensor<T> depthwise_conv2d(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& weight,
                           ConvGeometry geom = {});

// 1x1 cross-channel mixing: weight is [Cout, Cin, 1, 1].
template <typename T>
Tensor<T> pointwise_conv2d(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& weight);

// Padded positions never win the max.
template <typename T>
Tensor<T> max_pool2d(Tape<T>& tape, const Tensor<T>& input, std::size_t window,
                     std::size_t stride, std::size_t padding = 0);

template <typename T>
Tensor<T> avg_pool2d(Tape<T>& tape, const Tensor<T>& input, std::size_t window,
                     std::size_t stride);

template <typename T>
Tensor<T> global_avg_pool(Tape<T>& tape, const Tensor<T>& input);

template <typename T>
Tensor<T> global_max_pool(Tape<T>& tape, const Tensor<T>& input);

// Reductions across the channel axis: [N,C,H,W] -> [N,1,H,W].
template <typename T>
Tensor<T> channel_mean(Tape<T>& tape, const Tensor<T>& input);

template <typename T>
Tensor<T> channel_max(Tape<T>& tape, const Tensor<T>& input);

// Fully connected layer. The input is flattened per sample to C*H*W features;
// weight is [Cout, Cin, 1, 1], bias optional [1, Cout, 1, 1]. Output is
// [N, Cout, 1, 1].
template <typename T>
Tensor<T> dense(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& weight,
                std::type_identity_t<const Tensor<T>*> bias);

template <typename T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& input);

template <typename T>
Tensor<T> sigmoid(Tape<T>& tape, const Tensor<T>& input);

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

// Elementwise product; every dimension must match or be 1 on either side.
template <typename T>
Tensor<T> mul_broadcast(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> concat_channels(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

struct BatchNormOptions {
  bool training = false;
  double momentum = 0.9;
  double epsilon = 1e-5;
};

// Per-channel normalization. gamma, beta, running_mean and running_var are
// [1, C, 1, 1]. In training mode batch statistics over (N, H, W) are used and
// the running statistics are updated in place with
// running = momentum * running + (1 - momentum) * batch.
template <typename T>
Tensor<T> batch_norm(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& gamma,
                     const Tensor<T>& beta, Tensor<T>& running_mean, Tensor<T>& running_var,
                     BatchNormOptions options);

inline constexpr double kBceEpsilon = 1e-7;

// Mean binary cross-entropy. pred holds N probabilities, targets must be 0/1.
template <typename T>
Tensor<T> bce_loss(Tape<T>& tape, const Tensor<T>& pred, std::span<const T> targets);

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& input);

// sum(input * weights) for a fixed weight vector; used to reduce arbitrary
// outputs to a scalar in gradient checks.
template <typename T>
Tensor<T> weighted_sum(Tape<T>& tape, const Tensor<T>& input, std::span<const T> weights);

}  // namespace ffsm::ops
