#include "ffsm/cbam.hpp"

#include <algorithm>

namespace ffsm {

std::size_t cbam_hidden_width(std::size_t channels, std::size_t reduction) {
  if (channels < 1) throw ValueError("cbam: channel count must be >= 1");
  if (reduction < 1) throw ValueError("cbam: reduction ratio must be >= 1");
  return std::max<std::size_t>(1, channels / reduction);
}

std::size_t cbam_param_count(std::size_t channels, std::size_t reduction) {
  const std::size_t h = cbam_hidden_width(channels, reduction);
  return 2 * channels * h + h + channels + 2 * kSpatialKernel * kSpatialKernel;
}

template <typename T>
ChannelAttention<T>::ChannelAttention(LayerContext<T>& ctx, const std::string& name,
                                      std::size_t channels, std::size_t reduction)
    : channels_(channels), hidden_(cbam_hidden_width(channels, reduction)) {
  fc1 = DenseLayer<T>(ctx, name + ".fc1", channels_, hidden_);
  fc2 = DenseLayer<T>(ctx, name + ".fc2", hidden_, channels_);
}

template <typename T>
Tensor<T> ChannelAttention<T>::operator()(Tape<T>& tape, const Tensor<T>& features) const {
  if (features.shape().c != channels_) {
    throw DimensionError("channel attention: expected " + std::to_string(channels_) +
                         " channels, got " + features.shape().str());
  }
  auto mlp = [&](const Tensor<T>& v) { return fc2(tape, ops::relu(tape, fc1(tape, v))); };
  auto avg = mlp(ops::global_avg_pool(tape, features));
  auto max = mlp(ops::global_max_pool(tape, features));
  return ops::sigmoid(tape, ops::add(tape, avg, max));
}

template <typename T>
SpatialAttention<T>::SpatialAttention(LayerContext<T>& ctx, const std::string& name)
    : conv(ctx, name + ".conv", 2, 1, kSpatialKernel, {1, kSpatialKernel / 2}, false) {}

template <typename T>
Tensor<T> SpatialAttention<T>::operator()(Tape<T>& tape, const Tensor<T>& features) const {
  const Shape s = features.shape();
  if (s.h < 1 || s.w < 1) throw GeometryError("spatial attention: empty map " + s.str());
  auto pooled =
      ops::concat_channels(tape, ops::channel_mean(tape, features), ops::channel_max(tape, features));
  return ops::sigmoid(tape, conv(tape, pooled));
}

template <typename T>
CbamBlock<T>::CbamBlock(LayerContext<T>& ctx, const std::string& name, std::size_t channels,
                        std::size_t reduction)
    : channel(ctx, name + ".channel", channels, reduction), spatial(ctx, name + ".spatial") {}

template <typename T>
Tensor<T> CbamBlock<T>::operator()(Tape<T>& tape, const Tensor<T>& features) const {
  auto refined = ops::mul_broadcast(tape, features, channel(tape, features));
  return ops::mul_broadcast(tape, refined, spatial(tape, refined));
}

template class ChannelAttention<float>;
template class ChannelAttention<double>;
template class SpatialAttention<float>;
template class SpatialAttention<double>;
template class CbamBlock<float>;
template class CbamBlock<double>;

}  // namespace ffsm
