#pragma once

#include <cstddef>
#include <string>

#include "ffsm/layers.hpp"

namespace ffsm {

inline constexpr std::size_t kCbamReduction = 16;
inline constexpr std::size_t kSpatialKernel = 7;

// Hidden width of the channel MLP: max(1, floor(C / r)).
std::size_t cbam_hidden_width(std::size_t channels, std::size_t reduction = kCbamReduction);

// Trainable scalars in one CBAM block: two biased dense layers C -> h -> C
// plus an unbiased 7x7 conv over 2 channels, i.e. 2*C*h + h + C + 98.
std::size_t cbam_param_count(std::size_t channels, std::size_t reduction = kCbamReduction);

// M_c(F) = sigmoid(MLP(avgpool(F)) + MLP(maxpool(F))), one MLP shared by
// both pooled descriptors. Output is [N, C, 1, 1].
template <typename T>
class ChannelAttention {
 public:
  ChannelAttention() = default;
  ChannelAttention(LayerContext<T>& ctx, const std::string& name, std::size_t channels,
                   std::size_t reduction = kCbamReduction);

  Tensor<T> operator()(Tape<T>& tape, const Tensor<T>& features) const;

  std::size_t channels() const { return channels_; }
  std::size_t hidden() const { return hidden_; }

  DenseLayer<T> fc1;
  DenseLayer<T> fc2;

 private:
  std::size_t channels_ = 0;
  std::size_t hidden_ = 0;
};

// M_s(F) = sigmoid(conv7x7([mean_c(F); max_c(F)])), padding 3 keeps H x W.
// Output is [N, 1, H, W].
template <typename T>
class SpatialAttention {
 public:
  SpatialAttention() = default;
  SpatialAttention(LayerContext<T>& ctx, const std::string& name);

  Tensor<T> operator()(Tape<T>& tape, const Tensor<T>& features) const;

  Conv2dLayer<T> conv;
};

// F' = M_c(F) * F, then F'' = M_s(F') * F'.
template <typename T>
class CbamBlock {
 public:
  CbamBlock() = default;
  CbamBlock(LayerContext<T>& ctx, const std::string& name, std::size_t channels,
            std::size_t reduction = kCbamReduction);

  Tensor<T> operator()(Tape<T>& tape, const Tensor<T>& features) const;

  std::size_t channels() const { return channel.channels(); }

  ChannelAttention<T> channel;
  SpatialAttention<T> spatial;
};

}  // namespace ffsm
