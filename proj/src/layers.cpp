#include "ffsm/layers.hpp"

#include <cmath>

#include "ffsm/random.hpp"

namespace ffsm {

template <typename T>
Tensor<T>& LayerContext<T>::he_uniform(const std::string& name, Shape shape, std::size_t fan_in) {
  Rng rng(derive_seed(seed, name));
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  Tensor<T> t(shape);
  for (auto& v : t.values()) v = static_cast<T>(uniform(rng, -limit, limit));
  t.set_requires_grad(true);
  return params.add(name, std::move(t));
}

template <typename T>
Tensor<T>& LayerContext<T>::constant(const std::string& name, Shape shape, T value) {
  Tensor<T> t(shape, value);
  t.set_requires_grad(true);
  return params.add(name, std::move(t));
}

template <typename T>
Tensor<T>& LayerContext<T>::buffer(const std::string& name, Shape shape, T value) {
  return buffers.add(name, Tensor<T>(shape, value));
}

template <typename T>
Conv2dLayer<T>::Conv2dLayer(LayerContext<T>& ctx, const std::string& name, std::size_t in,
                            std::size_t out, std::size_t kernel, ops::ConvGeometry g,
                            bool bias_on)
    : with_bias(bias_on), geom(g) {
  weight = ctx.he_uniform(name + ".weight", Shape{out, in, kernel, kernel}, in * kernel * kernel);
  if (with_bias) bias = ctx.constant(name + ".bias", Shape{1, out, 1, 1}, T(0));
}

template <typename T>
Tensor<T> Conv2dLayer<T>::operator()(Tape<T>& tape, const Tensor<T>& x) const {
  return ops::conv2d(tape, x, weight, with_bias ? &bias : nullptr, geom);
}

template <typename T>
DenseLayer<T>::DenseLayer(LayerContext<T>& ctx, const std::string& name, std::size_t in,
                          std::size_t out, bool bias_on)
    : with_bias(bias_on) {
  weight = ctx.he_uniform(name + ".weight", Shape{out, in, 1, 1}, in);
  if (with_bias) bias = ctx.constant(name + ".bias", Shape{1, out, 1, 1}, T(0));
}

template <typename T>
Tensor<T> DenseLayer<T>::operator()(Tape<T>& tape, const Tensor<T>& x) const {
  return ops::dense(tape, x, weight, with_bias ? &bias : nullptr);
}

template <typename T>
BatchNormLayer<T>::BatchNormLayer(LayerContext<T>& ctx, const std::string& name,
                                  std::size_t channels) {
  const Shape s{1, channels, 1, 1};
  gamma = ctx.constant(name + ".gamma", s, T(1));
  beta = ctx.constant(name + ".beta", s, T(0));
  running_mean = ctx.buffer(name + ".running_mean", s, T(0));
  running_var = ctx.buffer(name + ".running_var", s, T(1));
}

template <typename T>
Tensor<T> BatchNormLayer<T>::operator()(Tape<T>& tape, const Tensor<T>& x, bool training) {
  ops::BatchNormOptions options;
  options.training = training;
  return ops::batch_norm(tape, x, gamma, beta, running_mean, running_var, options);
}

template <typename T>
SeparableConvLayer<T>::SeparableConvLayer(LayerContext<T>& ctx, const std::string& name,
                                          std::size_t in, std::size_t out) {
  depthwise = ctx.he_uniform(name + ".depthwise", Shape{in, 1, 3, 3}, 9);
  pointwise = ctx.he_uniform(name + ".pointwise", Shape{out, in, 1, 1}, in);
}

template <typename T>
Tensor<T> SeparableConvLayer<T>::operator()(Tape<T>& tape, const Tensor<T>& x) const {
  auto mid = ops::depthwise_conv2d(tape, x, depthwise, {1, 1});
  return ops::pointwise_conv2d(tape, mid, pointwise);
}

template struct LayerContext<float>;
template struct LayerContext<double>;
template class Conv2dLayer<float>;
template class Conv2dLayer<double>;
template class DenseLayer<float>;
template class DenseLayer<double>;
template class BatchNormLayer<float>;
template class BatchNormLayer<double>;
template class SeparableConvLayer<float>;
template class SeparableConvLayer<double>;

}  // namespace ffsm
