#include "ffsm/backbones.hpp"

#include "ffsm/binary_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

namespace ffsm {
namespace {

std::size_t scaled_count(std::size_t full, double scale) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(full * scale)));
}

std::size_t resnet_blocks_per_stage(const BackboneSpec& spec) {
  return scaled_count(2, spec.depth_scale);
}

std::vector<std::size_t> densenet_block_layers(const BackboneSpec& spec) {
  return {scaled_count(6, spec.depth_scale), scaled_count(12, spec.depth_scale),
          scaled_count(24, spec.depth_scale), scaled_count(16, spec.depth_scale)};
}

std::size_t xception_middle_blocks(const BackboneSpec& spec) {
  return scaled_count(8, spec.depth_scale);
}

// Xception widths are quoted for a 32-wide stem (728, 1024, ...).
std::size_t xception_width(std::size_t full, std::size_t base_width) {
  return std::max<std::size_t>(
      1, static_cast<std::size_t>(std::lround(static_cast<double>(full) * base_width / 32.0)));
}

void validate_spec(const BackboneSpec& spec) {
  if (spec.factors < 1) throw ValueError("backbone: need at least one input factor");
  if (spec.patch < 1) throw ValueError("backbone: patch size must be >= 1");
  if (spec.base_width < 1) throw ValueError("backbone: base_width must be >= 1");
  if (spec.growth < 1) throw ValueError("backbone: growth must be >= 1");
  if (!(spec.depth_scale > 0.0 && spec.depth_scale <= 1.0)) {
    throw ValueError("backbone: depth_scale must lie in (0, 1]");
  }
  for (std::size_t h : spec.fc_hidden) {
    if (h < 1) throw ValueError("backbone: classifier widths must be >= 1");
  }
  if (!spec.cbam_block_mask.empty()) {
    if (spec.placement != AttentionPlacement::In) {
      throw ValueError("backbone: cbam_block_mask only applies to the In placement");
    }
    if (spec.cbam_block_mask.size() != convolutional_block_count(spec)) {
      throw ValueError("backbone: cbam_block_mask has " +
                       std::to_string(spec.cbam_block_mask.size()) + " entries, model has " +
                       std::to_string(convolutional_block_count(spec)) + " blocks");
    }
  }
}

// Each downsampling stage halves the map and needs at least 2x2 to act on.
void check_geometry(const BackboneSpec& spec) {
  std::vector<std::string> stages;
  switch (spec.kind) {
    case BackboneKind::ResNet18:
      stages = {"stage2", "stage3", "stage4"};
      break;
    case BackboneKind::DenseNet121:
      stages = {"transition1", "transition2", "transition3"};
      break;
    case BackboneKind::Xception:
      stages = {"entry1", "entry2", "entry3", "exit"};
      break;
  }
  std::size_t extent = spec.patch;
  for (const auto& stage : stages) {
    if (extent < 2) {
      throw GeometryError("patch " + std::to_string(spec.patch) + " too small: " + stage +
                          " receives a " + std::to_string(extent) + "x" + std::to_string(extent) +
                          " map");
    }
    // 2x2/2 average pooling floors, strided 3x3 convs and pools round up.
    extent = spec.kind == BackboneKind::DenseNet121 ? extent / 2 : (extent - 1) / 2 + 1;
  }
}

template <typename T>
Tensor<T> maybe_cbam(Tape<T>& tape, const std::optional<CbamBlock<T>>& cbam, Tensor<T> x) {
  return cbam ? (*cbam)(tape, x) : x;
}

bool block_has_cbam(const BackboneSpec& spec, std::size_t block) {
  if (spec.placement != AttentionPlacement::In) return false;
  return spec.cbam_block_mask.empty() || spec.cbam_block_mask[block];
}

template <typename T>
class ResNet final : public Network<T> {
 public:
  ResNet(LayerContext<T>& ctx, const BackboneSpec& spec, std::vector<std::size_t>& cbams)
      : stem_conv_(ctx, "stem.conv", spec.factors, spec.base_width, 3, {1, 1}),
        stem_bn_(ctx, "stem.bn", spec.base_width) {
    const std::size_t per_stage = resnet_blocks_per_stage(spec);
    std::size_t in = spec.base_width;
    std::size_t index = 0;
    for (std::size_t stage = 0; stage < 4; ++stage) {
      const std::size_t out = spec.base_width << stage;
      for (std::size_t b = 0; b < per_stage; ++b, ++index) {
        const std::size_t stride = (stage > 0 && b == 0) ? 2 : 1;
        const bool with_cbam = block_has_cbam(spec, index);
        blocks_.emplace_back(ctx,
                             "stage" + std::to_string(stage + 1) + ".block" + std::to_string(b),
                             in, out, stride, with_cbam, spec.reduction);
        if (with_cbam) cbams.push_back(out);
        in = out;
      }
    }
    out_channels_ = in;
  }

  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x, bool training) override {
    Tensor<T> y = ops::relu(tape, stem_bn_(tape, stem_conv_(tape, x), training));
    for (auto& block : blocks_) y = block(tape, y, training);
    return y;
  }
  std::size_t out_channels() const override { return out_channels_; }

 private:
  Conv2dLayer<T> stem_conv_;
  BatchNormLayer<T> stem_bn_;
  std::vector<ResidualBlock<T>> blocks_;
  std::size_t out_channels_ = 0;
};

template <typename T>
class DenseNet final : public Network<T> {
 public:
  DenseNet(LayerContext<T>& ctx, const BackboneSpec& spec, std::vector<std::size_t>& cbams)
      : stem_conv_(ctx, "stem.conv", spec.factors, spec.base_width, 3, {1, 1}) {
    std::size_t channels = spec.base_width;
    const auto lengths = densenet_block_layers(spec);
    for (std::size_t i = 0; i < lengths.size(); ++i) {
      const bool with_cbam = block_has_cbam(spec, i);
      blocks_.emplace_back(ctx, "dense" + std::to_string(i + 1), channels, lengths[i],
                           spec.growth, with_cbam, spec.reduction);
      channels = blocks_.back().out_channels();
      if (with_cbam) cbams.push_back(channels);
      if (i + 1 < lengths.size()) {
        const std::string name = "transition" + std::to_string(i + 1);
        const std::size_t reduced = std::max<std::size_t>(1, channels / 2);
        transitions_.push_back(Transition{BatchNormLayer<T>(ctx, name + ".bn", channels),
                                          Conv2dLayer<T>(ctx, name + ".conv", channels, reduced, 1,
                                                         {1, 0})});
        channels = reduced;
      }
    }
    final_bn_ = BatchNormLayer<T>(ctx, "final.bn", channels);
    out_channels_ = channels;
  }

  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x, bool training) override {
    Tensor<T> y = stem_conv_(tape, x);
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      y = blocks_[i](tape, y, training);
      if (i < transitions_.size()) {
        auto& t = transitions_[i];
        y = t.conv(tape, ops::relu(tape, t.bn(tape, y, training)));
        y = ops::avg_pool2d(tape, y, 2, 2);
      }
    }
    return ops::relu(tape, final_bn_(tape, y, training));
  }
  std::size_t out_channels() const override { return out_channels_; }

 private:
  struct Transition {
    BatchNormLayer<T> bn;
    Conv2dLayer<T> conv;
  };
  Conv2dLayer<T> stem_conv_;
  std::vector<DenseBlock<T>> blocks_;
  std::vector<Transition> transitions_;
  BatchNormLayer<T> final_bn_;
  std::size_t out_channels_ = 0;
};

// Two separable convs then a 3x3/2 max pool, with a strided 1x1 projection on
// the skip path.
template <typename T>
struct XceptionDownBlock {
  XceptionDownBlock(LayerContext<T>& ctx, const std::string& name, std::size_t in,
                    std::size_t mid, std::size_t out, bool leading_relu, bool with_cbam,
                    std::size_t reduction)
      : leading_relu(leading_relu),
        sep1(ctx, name + ".sep1", in, mid),
        bn1(ctx, name + ".bn1", mid),
        sep2(ctx, name + ".sep2", mid, out),
        bn2(ctx, name + ".bn2", out),
        shortcut(ctx, name + ".shortcut", in, out, 1, {2, 0}),
        shortcut_bn(ctx, name + ".shortcut_bn", out) {
    if (with_cbam) cbam.emplace(ctx, name + ".cbam", out, reduction);
  }

  Tensor<T> operator()(Tape<T>& tape, const Tensor<T>& x, bool training) {
    Tensor<T> y = leading_relu ? ops::relu(tape, x) : x;
    y = ops::relu(tape, bn1(tape, sep1(tape, y), training));
    y = bn2(tape, sep2(tape, y), training);
    y = ops::max_pool2d(tape, y, 3, 2, 1);
    auto skip = shortcut_bn(tape, shortcut(tape, x), training);
    return maybe_cbam(tape, cbam, ops::add(tape, y, skip));
  }

  bool leading_relu;
  SeparableConvLayer<T> sep1;
  BatchNormLayer<T> bn1;
  SeparableConvLayer<T> sep2;
  BatchNormLayer<T> bn2;
  Conv2dLayer<T> shortcut;
  BatchNormLayer<T> shortcut_bn;
  std::optional<CbamBlock<T>> cbam;
};

template <typename T>
struct XceptionMiddleBlock {
  XceptionMiddleBlock(LayerContext<T>& ctx, const std::string& name, std::size_t width,
                      bool with_cbam, std::size_t reduction) {
    for (int i = 0; i < 3; ++i) {
      const std::string unit = name + ".sep" + std::to_string(i + 1);
      seps.emplace_back(ctx, unit, width, width);
      bns.emplace_back(ctx, name + ".bn" + std::to_string(i + 1), width);
    }
    if (with_cbam) cbam.emplace(ctx, name + ".cbam", width, reduction);
  }

  Tensor<T> operator()(Tape<T>& tape, const Tensor<T>& x, bool training) {
    Tensor<T> y = x;
    for (std::size_t i = 0; i < seps.size(); ++i) {
      y = bns[i](tape, seps[i](tape, ops::relu(tape, y)), training);
    }
    return maybe_cbam(tape, cbam, ops::add(tape, y, x));
  }

  std::vector<SeparableConvLayer<T>> seps;
  std::vector<BatchNormLayer<T>> bns;
  std::optional<CbamBlock<T>> cbam;
};

template <typename T>
class Xception final : public Network<T> {
 public:
  Xception(LayerContext<T>& ctx, const BackboneSpec& spec, std::vector<std::size_t>& cbams) {
    const std::size_t w = spec.base_width;
    const std::size_t middle = xception_width(728, w);
    const std::size_t exit_out = xception_width(1024, w);
    const std::size_t final1 = xception_width(1536, w);
    const std::size_t final2 = xception_width(2048, w);
    stem1_ = Conv2dLayer<T>(ctx, "stem.conv1", spec.factors, w, 3, {1, 1});
    stem1_bn_ = BatchNormLayer<T>(ctx, "stem.bn1", w);
    stem2_ = Conv2dLayer<T>(ctx, "stem.conv2", w, 2 * w, 3, {1, 1});
    stem2_bn_ = BatchNormLayer<T>(ctx, "stem.bn2", 2 * w);

    std::size_t index = 0;
    auto add_down = [&](const std::string& name, std::size_t in, std::size_t mid,
                        std::size_t out, bool leading_relu) {
      const bool with_cbam = block_has_cbam(spec, index++);
      down_.emplace_back(ctx, name, in, mid, out, leading_relu, with_cbam, spec.reduction);
      if (with_cbam) cbams.push_back(out);
    };
    add_down("entry1", 2 * w, 4 * w, 4 * w, false);
    add_down("entry2", 4 * w, 8 * w, 8 * w, true);
    add_down("entry3", 8 * w, middle, middle, true);
    for (std::size_t i = 0; i < xception_middle_blocks(spec); ++i) {
      const bool with_cbam = block_has_cbam(spec, index++);
      middle_.emplace_back(ctx, "middle" + std::to_string(i + 1), middle, with_cbam,
                           spec.reduction);
      if (with_cbam) cbams.push_back(middle);
    }
    add_down("exit", middle, middle, exit_out, true);
    final1_ = SeparableConvLayer<T>(ctx, "final.sep1", exit_out, final1);
    final1_bn_ = BatchNormLayer<T>(ctx, "final.bn1", final1);
    final2_ = SeparableConvLayer<T>(ctx, "final.sep2", final1, final2);
    final2_bn_ = BatchNormLayer<T>(ctx, "final.bn2", final2);
    out_channels_ = final2;
  }

  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x, bool training) override {
    Tensor<T> y = ops::relu(tape, stem1_bn_(tape, stem1_(tape, x), training));
    y = ops::relu(tape, stem2_bn_(tape, stem2_(tape, y), training));
    for (std::size_t i = 0; i < 3; ++i) y = down_[i](tape, y, training);
    for (auto& block : middle_) y = block(tape, y, training);
    y = down_[3](tape, y, training);
    y = ops::relu(tape, final1_bn_(tape, final1_(tape, y), training));
    return ops::relu(tape, final2_bn_(tape, final2_(tape, y), training));
  }
  std::size_t out_channels() const override { return out_channels_; }

 private:
  Conv2dLayer<T> stem1_;
  BatchNormLayer<T> stem1_bn_;
  Conv2dLayer<T> stem2_;
  BatchNormLayer<T> stem2_bn_;
  std::vector<XceptionDownBlock<T>> down_;
  std::vector<XceptionMiddleBlock<T>> middle_;
  SeparableConvLayer<T> final1_;
  BatchNormLayer<T> final1_bn_;
  SeparableConvLayer<T> final2_;
  BatchNormLayer<T> final2_bn_;
  std::size_t out_channels_ = 0;
};

}  // namespace

std::string to_string(BackboneKind kind) {
  switch (kind) {
    case BackboneKind::ResNet18:
      return "resnet18";
    case BackboneKind::DenseNet121:
      return "densenet121";
    case BackboneKind::Xception:
      return "xception";
  }
  return "?";
}

std::string to_string(AttentionPlacement placement) {
  switch (placement) {
    case AttentionPlacement::None:
      return "none";
    case AttentionPlacement::Head:
      return "head";
    case AttentionPlacement::Tail:
      return "tail";
    case AttentionPlacement::In:
      return "in";
  }
  return "?";
}

BackboneKind parse_backbone_kind(std::string_view text) {
  if (text == "resnet18" || text == "resnet") return BackboneKind::ResNet18;
  if (text == "densenet121" || text == "densenet") return BackboneKind::DenseNet121;
  if (text == "xception") return BackboneKind::Xception;
  throw ValueError("unknown backbone kind: " + std::string(text));
}

AttentionPlacement parse_placement(std::string_view text) {
  if (text == "none") return AttentionPlacement::None;
  if (text == "head") return AttentionPlacement::Head;
  if (text == "tail") return AttentionPlacement::Tail;
  if (text == "in") return AttentionPlacement::In;
  throw ValueError("unknown attention placement: " + std::string(text));
}

nlohmann::json BackboneSpec::to_json() const {
  nlohmann::json j;
  j["kind"] = to_string(kind);
  j["base_width"] = base_width;
  j["depth_scale"] = depth_scale;
  j["growth"] = growth;
  j["factors"] = factors;
  j["patch"] = patch;
  j["placement"] = to_string(placement);
  j["reduction"] = reduction;
  j["fc_hidden"] = fc_hidden;
  j["cbam_block_mask"] = cbam_block_mask;
  return j;
}

BackboneSpec BackboneSpec::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValueError("backbone spec must be a JSON object");
  BackboneSpec spec;
  for (const auto& [key, value] : j.items()) {
    if (key == "kind") {
      spec.kind = parse_backbone_kind(value.get<std::string>());
    } else if (key == "base_width") {
      spec.base_width = value.get<std::size_t>();
    } else if (key == "depth_scale") {
      spec.depth_scale = value.get<double>();
    } else if (key == "growth") {
      spec.growth = value.get<std::size_t>();
    } else if (key == "factors") {
      spec.factors = value.get<std::size_t>();
    } else if (key == "patch") {
      spec.patch = value.get<std::size_t>();
    } else if (key == "placement") {
      spec.placement = parse_placement(value.get<std::string>());
    } else if (key == "reduction") {
      spec.reduction = value.get<std::size_t>();
    } else if (key == "fc_hidden") {
      spec.fc_hidden = value.get<std::vector<std::size_t>>();
    } else if (key == "cbam_block_mask") {
      spec.cbam_block_mask = value.get<std::vector<bool>>();
    } else {
      throw ValueError("unknown backbone spec key: " + key);
    }
  }
  return spec;
}

std::size_t convolutional_block_count(const BackboneSpec& spec) {
  switch (spec.kind) {
    case BackboneKind::ResNet18:
      return 4 * resnet_blocks_per_stage(spec);
    case BackboneKind::DenseNet121:
      return 4;
    case BackboneKind::Xception:
      return 4 + xception_middle_blocks(spec);
  }
  return 0;
}

template <typename T>
ResidualBlock<T>::ResidualBlock(LayerContext<T>& ctx, const std::string& name, std::size_t in,
                                std::size_t out, std::size_t stride, bool with_cbam,
                                std::size_t reduction)
    : conv1(ctx, name + ".conv1", in, out, 3, {stride, 1}),
      bn1(ctx, name + ".bn1", out),
      conv2(ctx, name + ".conv2", out, out, 3, {1, 1}),
      bn2(ctx, name + ".bn2", out),
      projected(stride != 1 || in != out) {
  if (projected) {
    proj = Conv2dLayer<T>(ctx, name + ".proj", in, out, 1, {stride, 0});
    proj_bn = BatchNormLayer<T>(ctx, name + ".proj_bn", out);
  }
  if (with_cbam) cbam.emplace(ctx, name + ".cbam", out, reduction);
}

template <typename T>
Tensor<T> ResidualBlock<T>::operator()(Tape<T>& tape, const Tensor<T>& x, bool training) {
  Tensor<T> y = ops::relu(tape, bn1(tape, conv1(tape, x), training));
  y = bn2(tape, conv2(tape, y), training);
  Tensor<T> skip = projected ? proj_bn(tape, proj(tape, x), training) : x;
  return maybe_cbam(tape, cbam, ops::relu(tape, ops::add(tape, y, skip)));
}

template <typename T>
DenseBlock<T>::DenseBlock(LayerContext<T>& ctx, const std::string& name, std::size_t in,
                          std::size_t count, std::size_t growth, bool with_cbam,
                          std::size_t reduction)
    : out_channels_(in + count * growth) {
  std::size_t channels = in;
  for (std::size_t i = 0; i < count; ++i) {
    const std::string unit = name + ".layer" + std::to_string(i + 1);
    layers.push_back(Layer{BatchNormLayer<T>(ctx, unit + ".bn1", channels),
                           Conv2dLayer<T>(ctx, unit + ".conv1", channels, 4 * growth, 1, {1, 0}),
                           BatchNormLayer<T>(ctx, unit + ".bn2", 4 * growth),
                           Conv2dLayer<T>(ctx, unit + ".conv2", 4 * growth, growth, 3, {1, 1})});
    channels += growth;
  }
  if (with_cbam) cbam.emplace(ctx, name + ".cbam", out_channels_, reduction);
}

template <typename T>
Tensor<T> DenseBlock<T>::operator()(Tape<T>& tape, const Tensor<T>& x, bool training) {
  Tensor<T> features = x;
  for (auto& layer : layers) {
    Tensor<T> y = layer.conv1(tape, ops::relu(tape, layer.bn1(tape, features, training)));
    y = layer.conv2(tape, ops::relu(tape, layer.bn2(tape, y, training)));
    features = ops::concat_channels(tape, features, y);
  }
  return maybe_cbam(tape, cbam, features);
}

template <typename T>
Model<T> Model<T>::build(const BackboneSpec& spec, std::uint64_t seed) {
  validate_spec(spec);
  check_geometry(spec);
  Model m;
  m.spec_ = spec;
  m.params_ = std::make_unique<ParameterSet<T>>();
  m.buffers_ = std::make_unique<ParameterSet<T>>();
  LayerContext<T> ctx{*m.params_, *m.buffers_, seed};
  if (spec.placement == AttentionPlacement::Head) {
    m.head_cbam_.emplace(ctx, "head.cbam", spec.factors, spec.reduction);
    m.cbam_channels_.push_back(spec.factors);
  }
  switch (spec.kind) {
    case BackboneKind::ResNet18:
      m.network_ = std::make_unique<ResNet<T>>(ctx, spec, m.cbam_channels_);
      break;
    case BackboneKind::DenseNet121:
      m.network_ = std::make_unique<DenseNet<T>>(ctx, spec, m.cbam_channels_);
      break;
    case BackboneKind::Xception:
      m.network_ = std::make_unique<Xception<T>>(ctx, spec, m.cbam_channels_);
      break;
  }
  std::size_t features = m.network_->out_channels();
  if (spec.placement == AttentionPlacement::Tail) {
    m.tail_cbam_.emplace(ctx, "tail.cbam", features, spec.reduction);
    m.cbam_channels_.push_back(features);
  }
  for (std::size_t i = 0; i < spec.fc_hidden.size(); ++i) {
    m.classifier_.emplace_back(ctx, "classifier.fc" + std::to_string(i + 1), features,
                               spec.fc_hidden[i]);
    features = spec.fc_hidden[i];
  }
  m.classifier_.emplace_back(ctx, "classifier.out", features, 1);
  return m;
}

template <typename T>
Tensor<T> Model<T>::forward(Tape<T>& tape, const Tensor<T>& batch, bool training) {
  const Shape s = batch.shape();
  if (s.c != spec_.factors || s.h != spec_.patch || s.w != spec_.patch) {
    throw DimensionError("model expects [N," + std::to_string(spec_.factors) + "," +
                         std::to_string(spec_.patch) + "," + std::to_string(spec_.patch) +
                         "] input, got " + s.str());
  }
  Tensor<T> x = maybe_cbam(tape, head_cbam_, batch);
  x = maybe_cbam(tape, tail_cbam_, network_->forward(tape, x, training));
  x = ops::global_avg_pool(tape, x);
  for (std::size_t i = 0; i + 1 < classifier_.size(); ++i) {
    x = ops::relu(tape, classifier_[i](tape, x));
  }
  return ops::sigmoid(tape, classifier_.back()(tape, x));
}

template <typename T>
template <typename U>
void Model<T>::copy_state_from(const Model<U>& other) {
  auto copy_set = [](ParameterSet<T>& dst, const ParameterSet<U>& src) {
    for (auto& p : dst.items()) {
      const Tensor<U>* from = src.find(p.name);
      if (from == nullptr || from->numel() != p.tensor.numel()) {
        throw ValueError("model state mismatch at " + p.name);
      }
      for (std::size_t i = 0; i < p.tensor.numel(); ++i) p.tensor[i] = static_cast<T>((*from)[i]);
    }
  };
  copy_set(*params_, *other.params_);
  copy_set(*buffers_, *other.buffers_);
}

template class ResidualBlock<float>;
template class ResidualBlock<double>;
template class DenseBlock<float>;
template class DenseBlock<double>;
template class Model<float>;
template class Model<double>;
template void Model<float>::copy_state_from<float>(const Model<float>&);
template void Model<float>::copy_state_from<double>(const Model<double>&);
template void Model<double>::copy_state_from<float>(const Model<float>&);
template void Model<double>::copy_state_from<double>(const Model<double>&);

// ---------------------------------------------------------------------------
// Model file I/O

namespace {

constexpr char kModelMagic[] = "FFSM-MODEL";  // written with its trailing NUL
constexpr std::size_t kModelMagicSize = sizeof(kModelMagic);

nlohmann::json model_header(const Model<float>& model) {
  nlohmann::json j;
  j["spec"] = model.spec().to_json();
  const auto& st = model.standardization();
  j["standardization"] = {{"factor_names", st.factor_names},
                          {"mean", st.mean},
                          {"std", st.stddev}};
  return j;
}

}  // namespace

void save_model(const Model<float>& model, const std::filesystem::path& path) {
  std::string out(kModelMagic, kModelMagicSize);
  io::put_le(out, kModelFormatVersion, 2);
  const std::string header = model_header(model).dump();
  io::put_le(out, header.size(), 4);
  out += header;

  std::map<std::string, const Tensor<float>*> arrays;
  for (const auto& p : model.parameters().items()) arrays[p.name] = &p.tensor;
  for (const auto& p : model.buffers().items()) arrays[p.name] = &p.tensor;
  io::put_le(out, arrays.size(), 4);
  for (const auto& [name, tensor] : arrays) {
    io::put_le(out, name.size(), 4);
    out += name;
    io::put_le(out, tensor->numel(), 8);
    for (float v : tensor->values()) io::put_f32(out, v);
  }

  io::write_file(path, out);
}

Model<float> load_model(const std::filesystem::path& path) {
  io::ByteReader in(io::read_file(path), "model file");

  if (in.take(kModelMagicSize) != std::string_view(kModelMagic, kModelMagicSize)) {
    throw FormatError("not a model file (bad magic)");
  }
  const auto version = static_cast<std::uint16_t>(in.uint(2));
  if (version != kModelFormatVersion) {
    throw FormatError("unsupported model format version " + std::to_string(version));
  }
  const auto header_size = static_cast<std::size_t>(in.uint(4));
  nlohmann::json header;
  BackboneSpec spec;
  Standardization st;
  try {
    header = nlohmann::json::parse(in.take(header_size));
    spec = BackboneSpec::from_json(header.at("spec"));
    const auto& sj = header.at("standardization");
    st.factor_names = sj.at("factor_names").get<std::vector<std::string>>();
    st.mean = sj.at("mean").get<std::vector<double>>();
    st.stddev = sj.at("std").get<std::vector<double>>();
  } catch (const FormatError&) {
    throw;
  } catch (const std::exception& e) {
    throw FormatError(std::string("invalid model header: ") + e.what());
  }
  if (!st.empty() && (st.mean.size() != spec.factors || st.stddev.size() != spec.factors ||
                      st.factor_names.size() != spec.factors)) {
    throw FormatError("standardization block does not match spec factor count");
  }

  Model<float> model = [&] {
    try {
      return Model<float>::build(spec, 0);
    } catch (const Error& e) {
      throw FormatError(std::string("model header describes an invalid spec: ") + e.what());
    }
  }();
  model.standardization() = st;

  const auto count = static_cast<std::size_t>(in.uint(4));
  const std::size_t expected = model.parameters().size() + model.buffers().size();
  if (count != expected) {
    throw FormatError("model file holds " + std::to_string(count) + " arrays, spec expects " +
                      std::to_string(expected));
  }
  std::map<std::string, bool> seen;
  for (std::size_t k = 0; k < count; ++k) {
    const std::string name(in.take(static_cast<std::size_t>(in.uint(4))));
    const auto n = static_cast<std::size_t>(in.uint(8));
    Tensor<float>* target = model.parameters().find(name);
    if (target == nullptr) target = model.buffers().find(name);
    if (target == nullptr) throw FormatError("unexpected array in model file: " + name);
    if (target->numel() != n) {
      throw FormatError("array " + name + " holds " + std::to_string(n) + " values, spec expects " +
                        std::to_string(target->numel()));
    }
    if (seen[name]) throw FormatError("duplicate array in model file: " + name);
    seen[name] = true;
    for (std::size_t i = 0; i < n; ++i) {
      (*target)[i] = in.f32();
    }
  }
  if (!in.done()) throw FormatError("trailing bytes after model payload");
  return model;
}

}  // namespace ffsm
