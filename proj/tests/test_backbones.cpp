#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "ffsm/backbones.hpp"
#include "ffsm/binary_io.hpp"
#include "grad_cases.hpp"

using namespace ffsm;
using ffsm::testing::random_tensor;
using ffsm::testing::tiny_spec;

namespace {

constexpr BackboneKind kKinds[] = {BackboneKind::ResNet18, BackboneKind::DenseNet121, BackboneKind::Xception};
constexpr AttentionPlacement kPlacements[] = {AttentionPlacement::None, AttentionPlacement::Head,
                                              AttentionPlacement::Tail, AttentionPlacement::In};

std::size_t count(const BackboneSpec& spec) { return Model<float>::build(spec, 1).param_count(); }

BackboneSpec with(BackboneSpec s, AttentionPlacement p) {
  s.placement = p;
  return s;
}

std::size_t cbam_blocks(const Model<float>& m) {
  std::size_t n = 0;
  for (const auto& p : m.parameters().items()) n += p.name.ends_with("cbam.spatial.conv.weight");
  return n;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("ffsm_backbones_" + name);
}

}  // namespace

TEST(ParamCount, ResNetHeadAndTailDeltas) {
  BackboneSpec s;  // ResNet18, width 32, 16 factors, full depth
  const std::size_t base = count(s);
  EXPECT_EQ(count(with(s, AttentionPlacement::Head)) - base, 147u);
  EXPECT_EQ(count(with(s, AttentionPlacement::Tail)) - base, 8562u);
}

TEST(ParamCount, FullWidthTailDeltasOfDenseNetAndXception) {
  // Reference deltas: 7217443 - 7085185 and 21393835 - 20867273.
  BackboneSpec dense;
  dense.kind = BackboneKind::DenseNet121;
  dense.base_width = 64;
  dense.growth = 32;
  const auto d0 = count(dense);
  EXPECT_EQ(count(with(dense, AttentionPlacement::Tail)) - d0, 7217443u - 7085185u);
  EXPECT_EQ(count(with(dense, AttentionPlacement::Head)) - d0, 7085332u - 7085185u);

  BackboneSpec xc;
  xc.kind = BackboneKind::Xception;
  const auto x0 = count(xc);
  EXPECT_EQ(count(with(xc, AttentionPlacement::Tail)) - x0, 21393835u - 20867273u);
  EXPECT_EQ(count(with(xc, AttentionPlacement::Head)) - x0, 20867420u - 20867273u);
}

TEST(ParamCount, HeadDeltaIsIndependentOfBackbone) {
  for (auto kind : kKinds)
    for (std::size_t f : {1, 5, 16}) {
      auto s = tiny_spec(kind, AttentionPlacement::None);
      s.factors = f;
      s.reduction = kCbamReduction;
      EXPECT_EQ(count(with(s, AttentionPlacement::Head)) - count(s), cbam_param_count(f));
    }
}

TEST(ParamCount, InDeltaIsSumOverBlocks) {
  for (auto kind : kKinds) {
    auto s = tiny_spec(kind, AttentionPlacement::In);
    s.base_width = 8;
    s.depth_scale = 0.3;
    auto m = Model<float>::build(s, 1);
    std::size_t expected = 0;
    for (auto c : m.cbam_channels()) expected += cbam_param_count(c, s.reduction);
    EXPECT_EQ(m.cbam_channels().size(), convolutional_block_count(s));
    EXPECT_EQ(m.param_count() - count(with(s, AttentionPlacement::None)), expected) << to_string(kind);
  }
}

TEST(ParamCount, InDeltaWithBlockMask) {
  auto s = tiny_spec(BackboneKind::ResNet18, AttentionPlacement::In);
  s.depth_scale = 1.0;
  s.cbam_block_mask.assign(convolutional_block_count(s), false);
  s.cbam_block_mask[1] = s.cbam_block_mask[6] = true;
  auto m = Model<float>::build(s, 1);
  ASSERT_EQ(m.cbam_channels().size(), 2u);
  EXPECT_EQ(m.cbam_channels()[0], s.base_width);
  EXPECT_EQ(m.cbam_channels()[1], s.base_width * 8);
  EXPECT_EQ(cbam_blocks(m), 2u);
}

TEST(ParamCount, EqualsWalkOverParameters) {
  for (auto kind : kKinds)
    for (auto p : kPlacements) {
      auto m = Model<float>::build(tiny_spec(kind, p), 3);
      std::size_t total = 0;
      for (const auto& item : m.parameters().items()) total += item.tensor.numel();
      EXPECT_EQ(m.param_count(), total);
    }
}

TEST(Placement, Purity) {
  for (auto kind : kKinds) {
    const auto spec = tiny_spec(kind, AttentionPlacement::None);
    EXPECT_EQ(cbam_blocks(Model<float>::build(spec, 1)), 0u);
    EXPECT_EQ(cbam_blocks(Model<float>::build(with(spec, AttentionPlacement::Head), 1)), 1u);
    EXPECT_EQ(cbam_blocks(Model<float>::build(with(spec, AttentionPlacement::Tail), 1)), 1u);
    EXPECT_EQ(cbam_blocks(Model<float>::build(with(spec, AttentionPlacement::In), 1)),
              convolutional_block_count(spec));
  }
}

TEST(Placement, MaskOutsideInIsRejected) {
  auto s = tiny_spec(BackboneKind::ResNet18, AttentionPlacement::Head);
  s.cbam_block_mask = {true};
  EXPECT_THROW(Model<float>::build(s, 1), ValueError);
  s.placement = AttentionPlacement::In;
  EXPECT_THROW(Model<float>::build(s, 1), ValueError);  // wrong length
}

TEST(Build, SameSeedSameValues) {
  const auto s = tiny_spec(BackboneKind::Xception, AttentionPlacement::In);
  auto a = Model<float>::build(s, 42), b = Model<float>::build(s, 42), c = Model<float>::build(s, 43);
  bool differs = false;
  for (std::size_t k = 0; k < a.parameters().size(); ++k) {
    const auto& ta = a.parameters().items()[k].tensor;
    const auto& tb = b.parameters().items()[k].tensor;
    const auto& tc = c.parameters().items()[k].tensor;
    for (std::size_t i = 0; i < ta.numel(); ++i) {
      ASSERT_EQ(ta[i], tb[i]);
      differs = differs || ta[i] != tc[i];
    }
  }
  EXPECT_TRUE(differs);
}

TEST(Build, TooSmallPatchNamesTheStage) {
  auto s = tiny_spec(BackboneKind::Xception, AttentionPlacement::None);
  s.patch = 4;
  try {
    Model<float>::build(s, 1);
    FAIL() << "expected GeometryError";
  } catch (const GeometryError& e) {
    EXPECT_NE(std::string(e.what()).find("entry3"), std::string::npos) << e.what();
  }
  s.kind = BackboneKind::DenseNet121;
  s.patch = 3;
  EXPECT_THROW(Model<float>::build(s, 1), GeometryError);
}

TEST(Build, BadSpecValues) {
  auto s = tiny_spec(BackboneKind::ResNet18, AttentionPlacement::None);
  s.depth_scale = 0.0;
  EXPECT_THROW(Model<float>::build(s, 1), ValueError);
  s.depth_scale = 1.0;
  s.base_width = 0;
  EXPECT_THROW(Model<float>::build(s, 1), ValueError);
}

TEST(Forward, OutputsAreProbabilities) {
  for (auto kind : kKinds)
    for (auto p : kPlacements) {
      auto m = Model<float>::build(tiny_spec(kind, p), 5);
      Tape<float> tape(false);
      auto x = tensor_cast<float>(random_tensor({3, 3, 16, 16}, 6, -4, 4));
      for (bool training : {false, true}) {
        auto y = m.forward(tape, x, training);
        ASSERT_EQ(y.shape(), (Shape{3, 1, 1, 1}));
        for (float v : y.values()) EXPECT_TRUE(v > 0.0f && v < 1.0f) << v;
      }
    }
}

TEST(Forward, WrongInputShapeIsDimensionError) {
  auto m = Model<float>::build(tiny_spec(BackboneKind::ResNet18, AttentionPlacement::None), 1);
  Tape<float> tape(false);
  EXPECT_THROW(m.forward(tape, Tensor<float>({1, 2, 16, 16}), false), DimensionError);
}

TEST(Blocks, ZeroedResidualBranchIsIdentity) {
  ParameterSet<double> params, buffers;
  LayerContext<double> ctx{params, buffers, 1};
  ResidualBlock<double> block(ctx, "b", 4, 4, 1, false, 16);
  ASSERT_FALSE(block.projected);
  std::fill(block.conv2.weight.values().begin(), block.conv2.weight.values().end(), 0.0);
  Tape<double> tape(false);
  // Block inputs are post-relu activations.
  auto x = random_tensor({2, 4, 5, 5}, 2, 0.0, 2.0);
  auto y = block(tape, x, false);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Blocks, DenseBlockConcatenatesGrowth) {
  ParameterSet<double> params, buffers;
  LayerContext<double> ctx{params, buffers, 1};
  DenseBlock<double> block(ctx, "d", 4, 2, 2, false, 16);
  EXPECT_EQ(block.out_channels(), 8u);
  Tape<double> tape(false);
  auto x = random_tensor({1, 4, 3, 3}, 4);
  auto y = block(tape, x, false);
  ASSERT_EQ(y.shape(), (Shape{1, 8, 3, 3}));
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y[i], x[i]);  // input passes through first
}

TEST(Spec, JsonRoundTrip) {
  auto s = tiny_spec(BackboneKind::DenseNet121, AttentionPlacement::In);
  s.cbam_block_mask = {true, false, true, false};
  EXPECT_EQ(BackboneSpec::from_json(s.to_json()), s);
  auto j = s.to_json();
  j["colour"] = "red";
  EXPECT_THROW(BackboneSpec::from_json(j), ValueError);
}

TEST(ModelFile, SaveLoadPreservesForward) {
  auto m = Model<float>::build(tiny_spec(BackboneKind::ResNet18, AttentionPlacement::Tail), 9);
  m.standardization() = {{"a", "b", "c"}, {0.1, 0.2, 0.3}, {1.0, 2.0, 3.0}};
  const auto path = temp_path("roundtrip.ffsm");
  save_model(m, path);
  auto back = load_model(path);
  EXPECT_EQ(back.spec(), m.spec());
  EXPECT_EQ(back.standardization().factor_names, m.standardization().factor_names);
  EXPECT_EQ(back.standardization().stddev, m.standardization().stddev);
  Tape<float> tape(false);
  auto x = tensor_cast<float>(random_tensor({2, 3, 16, 16}, 3));
  auto a = m.forward(tape, x, false), b = back.forward(tape, x, false);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(ModelFile, TruncatedIsFormatError) {
  auto m = Model<float>::build(tiny_spec(BackboneKind::ResNet18, AttentionPlacement::None), 9);
  const auto path = temp_path("truncated.ffsm");
  save_model(m, path);
  auto bytes = io::read_file(path);
  for (std::size_t cut : {std::size_t{5}, bytes.size() / 2, bytes.size() - 1}) {
    io::write_file(path, bytes.substr(0, cut));
    EXPECT_THROW(load_model(path), FormatError) << cut;
  }
}

TEST(ModelFile, FactorCountMismatchIsFormatError) {
  auto m = Model<float>::build(tiny_spec(BackboneKind::ResNet18, AttentionPlacement::None), 9);
  const auto path = temp_path("corrupt.ffsm");
  save_model(m, path);
  auto bytes = io::read_file(path);
  const auto at = bytes.find("\"factors\":3");
  ASSERT_NE(at, std::string::npos);
  bytes[at + 10] = '4';
  io::write_file(path, bytes);
  EXPECT_THROW(load_model(path), FormatError);
}

TEST(ModelFile, BadMagicIsFormatError) {
  const auto path = temp_path("magic.ffsm");
  io::write_file(path, std::string(64, 'x'));
  EXPECT_THROW(load_model(path), FormatError);
}

class ModelGradients : public ::testing::TestWithParam<std::tuple<BackboneKind, AttentionPlacement>> {};

TEST_P(ModelGradients, MatchCentralDifferences) {
  const auto [kind, placement] = GetParam();
  GradCheckOptions opt;
  opt.max_entries_per_tensor = 6;
  opt.seed = 3;
  const auto report = ffsm::testing::model_grad_check(kind, placement, 11, opt);
  EXPECT_EQ(report.inconclusive, 0u);
  EXPECT_TRUE(report.passed) << report.failures.size() << " failures, worst " << report.worst.tensor << "["
                             << report.worst.index << "] " << report.worst.analytic << " vs "
                             << report.worst.numeric;
}

INSTANTIATE_TEST_SUITE_P(AllConfigurations, ModelGradients,
                         ::testing::Combine(::testing::ValuesIn(kKinds), ::testing::ValuesIn(kPlacements)),
                         [](const auto& info) {
                           return to_string(std::get<0>(info.param)) + "_" + to_string(std::get<1>(info.param));
                         });
