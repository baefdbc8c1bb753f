#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ffsm/cbam.hpp"
#include "ffsm/layers.hpp"
#include "ffsm/standardization.hpp"

namespace ffsm {

enum class BackboneKind { ResNet18, DenseNet121, Xception };
enum class AttentionPlacement { None, Head, Tail, In };

std::string to_string(BackboneKind kind);
std::string to_string(AttentionPlacement placement);
BackboneKind parse_backbone_kind(std::string_view text);
AttentionPlacement parse_placement(std::string_view text);

struct BackboneSpec {
  BackboneKind kind = BackboneKind::ResNet18;
  // ResNet: first-stage width (final width is 8x). DenseNet: stem width.
  // Xception: stem width; later widths scale with base_width / 32.
  std::size_t base_width = 32;
  // Scales block counts: ResNet 2 blocks/stage, DenseNet (6,12,24,16) layers,
  // Xception 8 middle-flow blocks. Each count is rounded and kept >= 1.
  double depth_scale = 1.0;
  std::size_t growth = 12;  // DenseNet growth rate
  std::size_t factors = 16;
  std::size_t patch = 32;
  AttentionPlacement placement = AttentionPlacement::None;
  std::size_t reduction = kCbamReduction;
  std::vector<std::size_t> fc_hidden{64};
  // In placement only: which convolutional blocks carry a CBAM, in block
  // order. Empty means every block.
  std::vector<bool> cbam_block_mask;

  nlohmann::json to_json() const;
  static BackboneSpec from_json(const nlohmann::json& j);
  friend bool operator==(const BackboneSpec&, const BackboneSpec&) = default;
};

// Feature extractor: maps [N, F, p, p] to the final feature map.
template <typename T>
class Network {
 public:
  virtual ~Network() = default;
  virtual Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x, bool training) = 0;
  virtual std::size_t out_channels() const = 0;
};

// Two 3x3 conv/BN layers plus a skip path: y = relu(F(x, W) + shortcut(x)).
// The shortcut is a 1x1 conv + BN projection when stride or width changes.
template <typename T>
class ResidualBlock {
 public:
  ResidualBlock(LayerContext<T>& ctx, const std::string& name, std::size_t in, std::size_t out,
                std::size_t stride, bool with_cbam, std::size_t reduction);

  Tensor<T> operator()(Tape<T>& tape, const Tensor<T>& x, bool training);

  Conv2dLayer<T> conv1;
  BatchNormLayer<T> bn1;
  Conv2dLayer<T> conv2;
  BatchNormLayer<T> bn2;
  bool projected = false;
  Conv2dLayer<T> proj;
  BatchNormLayer<T> proj_bn;
  std::optional<CbamBlock<T>> cbam;
};

// Bottleneck dense layers (BN-ReLU-1x1 to 4k, BN-ReLU-3x3 to k), each output
// concatenated onto its input. out_channels = in + layers * growth.
template <typename T>
class DenseBlock {
 public:
  DenseBlock(LayerContext<T>& ctx, const std::string& name, std::size_t in, std::size_t layers,
             std::size_t growth, bool with_cbam, std::size_t reduction);

  Tensor<T> operator()(Tape<T>& tape, const Tensor<T>& x, bool training);
  std::size_t out_channels() const { return out_channels_; }

  struct Layer {
    BatchNormLayer<T> bn1;
    Conv2dLayer<T> conv1;
    BatchNormLayer<T> bn2;
    Conv2dLayer<T> conv2;
  };
  std::vector<Layer> layers;
  std::optional<CbamBlock<T>> cbam;

 private:
  std::size_t out_channels_;
};

template <typename T>
class Model {
 public:
  static Model build(const BackboneSpec& spec, std::uint64_t seed);

  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  // [N, F, p, p] -> [N, 1, 1, 1] probabilities.
  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& batch, bool training);

  const BackboneSpec& spec() const { return spec_; }
  ParameterSet<T>& parameters() { return *params_; }
  const ParameterSet<T>& parameters() const { return *params_; }
  ParameterSet<T>& buffers() { return *buffers_; }
  const ParameterSet<T>& buffers() const { return *buffers_; }

  std::size_t param_count() const { return params_->scalar_count(); }
  // Channel width of every instantiated CBAM, in build order.
  const std::vector<std::size_t>& cbam_channels() const { return cbam_channels_; }

  Standardization& standardization() { return standardization_; }
  const Standardization& standardization() const { return standardization_; }

  // Copies every parameter and buffer value (matched by name) from `other`.
  template <typename U>
  void copy_state_from(const Model<U>& other);

  template <typename U>
  Model<U> cast() const {
    Model<U> out = Model<U>::build(spec_, 0);
    out.copy_state_from(*this);
    out.standardization() = standardization_;
    return out;
  }

 private:
  Model() = default;

  BackboneSpec spec_;
  std::unique_ptr<ParameterSet<T>> params_;
  std::unique_ptr<ParameterSet<T>> buffers_;
  std::unique_ptr<Network<T>> network_;
  std::optional<CbamBlock<T>> head_cbam_;
  std::optional<CbamBlock<T>> tail_cbam_;
  std::vector<DenseLayer<T>> classifier_;
  std::vector<std::size_t> cbam_channels_;
  Standardization standardization_;

  template <typename>
  friend class Model;
};

// Number of convolutional blocks that can carry an In-placement CBAM.
std::size_t convolutional_block_count(const BackboneSpec& spec);

// Model file: magic "FFSM-MODEL\0", u16 version, u32-length-prefixed
// canonical JSON (spec + standardization), u32 array count, then per array a
// u32-length-prefixed name, u64 element count and little-endian float32
// values. Arrays (parameters and running statistics) are in name order.
inline constexpr std::uint16_t kModelFormatVersion = 1;

void save_model(const Model<float>& model, const std::filesystem::path& path);
Model<float> load_model(const std::filesystem::path& path);

}  // namespace ffsm
