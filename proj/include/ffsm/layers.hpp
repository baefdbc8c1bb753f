#pragma once

#include <cstdint>
#include <string>

#include "ffsm/engine/ops.hpp"
#include "ffsm/engine/parameter.hpp"

namespace ffsm {

// Where a layer registers its tensors. Trainable tensors go to `params`,
// running statistics to `buffers`; both are keyed by dotted names.
template <typename T>
struct LayerContext {
  ParameterSet<T>& params;
  ParameterSet<T>& buffers;
  std::uint64_t seed = 0;

  // He-uniform: U(-sqrt(6/fan_in), sqrt(6/fan_in)), seeded by (seed, name).
  Tensor<T>& he_uniform(const std::string& name, Shape shape, std::size_t fan_in);
  Tensor<T>& constant(const std::string& name, Shape shape, T value);
  Tensor<T>& buffer(const std::string& name, Shape shape, T value);
};

template <typename T>
class Conv2dLayer {
 public:
  Conv2dLayer() = default;
  Conv2dLayer(LayerContext<T>& ctx, const std::string& name, std::size_t in, std::size_t out,
              std::size_t kernel, ops::ConvGeometry geom, bool with_bias = false);

  Tensor<T> operator()(Tape<T>& tape, const Tensor<T>& x) const;

  Tensor<T> weight;
  Tensor<T> bias;
  bool with_bias = false;
  ops::ConvGeometry geom;
};

template <typename T>
class DenseLayer {
 public:
  DenseLayer() = default;
  DenseLayer(LayerContext<T>& ctx, const std::string& name, std::size_t in, std::size_t out,
             bool with_bias = true);

  Tensor<T> operator()(Tape<T>& tape, const Tensor<T>& x) const;

  Tensor<T> weight;
  Tensor<T> bias;
  bool with_bias = true;
};

template <typename T>
class BatchNormLayer {
 public:
  BatchNormLayer() = default;
  BatchNormLayer(LayerContext<T>& ctx, const std::string& name, std::size_t channels);

  Tensor<T> operator()(Tape<T>& tape, const Tensor<T>& x, bool training);

  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
};

// Depthwise 3x3 followed by a 1x1 pointwise mix, both without bias.
template <typename T>
class SeparableConvLayer {
 public:
  SeparableConvLayer() = default;
  SeparableConvLayer(LayerContext<T>& ctx, const std::string& name, std::size_t in,
                     std::size_t out);

  Tensor<T> operator()(Tape<T>& tape, const Tensor<T>& x) const;

  Tensor<T> depthwise;
  Tensor<T> pointwise;
};

}  // namespace ffsm
