#include <gtest/gtest.h>

#include <cmath>

#include "ffsm/cbam.hpp"
#include "grad_cases.hpp"

using namespace ffsm;
using ffsm::testing::random_tensor;

namespace {

struct Fixture {
  ParameterSet<double> params;
  ParameterSet<double> buffers;
  LayerContext<double> ctx{params, buffers, 5};
};

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Tape<double> fwd(false);

}  // namespace

TEST(CbamCount, ReferenceDeltas) {
  EXPECT_EQ(cbam_param_count(16), 147u);
  EXPECT_EQ(575844u - 575697u, 147u);
  EXPECT_EQ(cbam_param_count(256), 8562u);
  EXPECT_EQ(584259u - 575697u, 8562u);
}

TEST(CbamCount, HiddenWidthFloorsAtOne) {
  EXPECT_EQ(cbam_hidden_width(1), 1u);
  EXPECT_EQ(cbam_param_count(1), 102u);
  EXPECT_EQ(cbam_hidden_width(31), 1u);
  EXPECT_EQ(cbam_hidden_width(32), 2u);
}

TEST(CbamCount, ClosedFormMatchesInstantiatedParameters) {
  for (std::size_t c : {1, 2, 16, 32, 64, 128, 256}) {
    Fixture f;
    CbamBlock<double> block(f.ctx, "cbam", c);
    EXPECT_EQ(f.params.scalar_count(), cbam_param_count(c)) << "C=" << c;
    EXPECT_EQ(f.buffers.size(), 0u);
  }
}

TEST(CbamCount, BadArgumentsAreValueErrors) {
  EXPECT_THROW(cbam_param_count(0), ValueError);
  EXPECT_THROW(cbam_param_count(4, 0), ValueError);
}

TEST(ChannelAttention, ConstantMapsMakeBothPoolsAgree) {
  Fixture f;
  ChannelAttention<double> ca(f.ctx, "ca", 4, 2);
  Tensor<double> x({1, 4, 3, 3});
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t i = 0; i < 9; ++i) x[c * 9 + i] = 0.3 * static_cast<double>(c) - 0.4;
  auto m = ca(fwd, x);
  auto pooled = ops::global_avg_pool(fwd, x);
  auto mlp = ca.fc2(fwd, ops::relu(fwd, ca.fc1(fwd, pooled)));
  for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(m[c], sig(2.0 * mlp[c]), 1e-15);
}

TEST(ChannelAttention, IdenticalChannelsGetEqualWeights) {
  Fixture f;
  ChannelAttention<double> ca(f.ctx, "ca", 3, 1);
  // Symmetric MLP: every input channel is weighted alike.
  for (auto* w : {&ca.fc1.weight, &ca.fc2.weight}) std::fill(w->values().begin(), w->values().end(), 0.2);
  auto base = random_tensor({1, 1, 4, 4}, 9);
  Tensor<double> x({1, 3, 4, 4});
  for (std::size_t c = 0; c < 3; ++c) std::copy_n(base.data(), 16, x.data() + c * 16);
  auto m = ca(fwd, x);
  EXPECT_EQ(m[0], m[1]);
  EXPECT_EQ(m[1], m[2]);
}

TEST(ChannelAttention, HandComputedTinyCase) {
  Fixture f;
  ChannelAttention<double> ca(f.ctx, "ca", 2, 16);
  ASSERT_EQ(ca.hidden(), 1u);
  ca.fc1.weight[0] = 0.5;
  ca.fc1.weight[1] = -1.0;
  ca.fc1.bias[0] = 0.1;
  ca.fc2.weight[0] = 2.0;
  ca.fc2.weight[1] = -0.5;
  ca.fc2.bias[0] = 0.0;
  ca.fc2.bias[1] = 0.2;
  Tensor<double> x({1, 2, 1, 1}, std::vector<double>{1.0, -2.0});
  auto m = ca(fwd, x);
  // h = relu(0.5*1 - 1*(-2) + 0.1) = 2.6, both pools see the same vector.
  EXPECT_NEAR(m[0], sig(2.0 * (2.0 * 2.6)), 1e-15);
  EXPECT_NEAR(m[1], sig(2.0 * (-0.5 * 2.6 + 0.2)), 1e-15);
}

TEST(SpatialAttention, UniformInputGivesUniformInterior) {
  Fixture f;
  SpatialAttention<double> sa(f.ctx, "sa");
  auto m = sa(fwd, Tensor<double>({1, 3, 10, 10}, 0.7));
  ASSERT_EQ(m.shape(), (Shape{1, 1, 10, 10}));
  // Cells at least 3 from every border see the full kernel.
  const double ref = m.at(0, 0, 3, 3);
  for (std::size_t y = 3; y < 7; ++y)
    for (std::size_t x = 3; x < 7; ++x) EXPECT_NEAR(m.at(0, 0, y, x), ref, 1e-15);
}

TEST(SpatialAttention, ZeroKernelGivesHalf) {
  Fixture f;
  SpatialAttention<double> sa(f.ctx, "sa");
  std::fill(sa.conv.weight.values().begin(), sa.conv.weight.values().end(), 0.0);
  const auto m = sa(fwd, random_tensor({2, 4, 5, 5}, 3));
  for (double v : m.values()) EXPECT_EQ(v, 0.5);
}

TEST(SpatialAttention, HandComputedKernel) {
  Fixture f;
  SpatialAttention<double> sa(f.ctx, "sa");
  auto& w = sa.conv.weight;  // [1, 2, 7, 7]
  std::fill(w.values().begin(), w.values().end(), 0.0);
  w.at(0, 0, 3, 3) = 1.0;   // mean, centre
  w.at(0, 1, 3, 4) = -2.0;  // max, right neighbour
  Tensor<double> x({1, 1, 3, 3}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9});
  auto m = sa(fwd, x);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 3; ++c) {
      const double centre = x.at(0, 0, r, c);
      const double right = c + 1 < 3 ? x.at(0, 0, r, c + 1) : 0.0;
      EXPECT_NEAR(m.at(0, 0, r, c), sig(centre - 2.0 * right), 1e-15);
    }
}

TEST(CbamBlock, SaturatedAttentionIsIdentity) {
  Fixture f;
  CbamBlock<double> block(f.ctx, "cbam", 4, 2);
  std::fill(block.channel.fc2.weight.values().begin(), block.channel.fc2.weight.values().end(), 0.0);
  std::fill(block.channel.fc2.bias.values().begin(), block.channel.fc2.bias.values().end(), 1000.0);
  auto& w = block.spatial.conv.weight;
  std::fill(w.values().begin(), w.values().end(), 0.0);
  w.at(0, 0, 3, 3) = 1e4;
  auto x = random_tensor({2, 4, 5, 5}, 8, 0.5, 1.5);
  auto y = block(fwd, x);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(CbamBlock, ZeroInputGivesZero) {
  Fixture f;
  CbamBlock<double> block(f.ctx, "cbam", 3);
  const auto y = block(fwd, Tensor<double>({1, 3, 4, 4}));
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(CbamBlock, HandComputedTwoByTwo) {
  Fixture f;
  CbamBlock<double> block(f.ctx, "cbam", 2, 16);
  const double w1[2] = {0.4, -0.3}, b1 = 0.05;
  const double w2[2] = {1.5, -0.8}, b2[2] = {0.1, -0.2};
  for (int i = 0; i < 2; ++i) {
    block.channel.fc1.weight[i] = w1[i];
    block.channel.fc2.weight[i] = w2[i];
    block.channel.fc2.bias[i] = b2[i];
  }
  block.channel.fc1.bias[0] = b1;
  auto& k = block.spatial.conv.weight;
  for (std::size_t i = 0; i < k.numel(); ++i) k[i] = 0.01 * static_cast<double>(i % 11) - 0.05;
  const double F[2][2][2] = {{{0.9, -0.4}, {0.2, 1.1}}, {{-0.7, 0.3}, {0.6, -0.1}}};
  Tensor<double> x({1, 2, 2, 2});
  for (int c = 0; c < 2; ++c)
    for (int r = 0; r < 2; ++r)
      for (int q = 0; q < 2; ++q) x.at(0, c, r, q) = F[c][r][q];

  // Channel attention.
  double avg[2], mx[2];
  for (int c = 0; c < 2; ++c) {
    avg[c] = (F[c][0][0] + F[c][0][1] + F[c][1][0] + F[c][1][1]) / 4.0;
    mx[c] = std::max(std::max(F[c][0][0], F[c][0][1]), std::max(F[c][1][0], F[c][1][1]));
  }
  const double ha = std::max(0.0, w1[0] * avg[0] + w1[1] * avg[1] + b1);
  const double hm = std::max(0.0, w1[0] * mx[0] + w1[1] * mx[1] + b1);
  double mc[2];
  for (int c = 0; c < 2; ++c) mc[c] = sig((w2[c] * ha + b2[c]) + (w2[c] * hm + b2[c]));
  double G[2][2][2];
  for (int c = 0; c < 2; ++c)
    for (int r = 0; r < 2; ++r)
      for (int q = 0; q < 2; ++q) G[c][r][q] = mc[c] * F[c][r][q];
  // Spatial attention.
  double pooled[2][2][2];
  for (int r = 0; r < 2; ++r)
    for (int q = 0; q < 2; ++q) {
      pooled[0][r][q] = (G[0][r][q] + G[1][r][q]) / 2.0;
      pooled[1][r][q] = std::max(G[0][r][q], G[1][r][q]);
    }
  auto y = block(fwd, x);
  for (int r = 0; r < 2; ++r)
    for (int q = 0; q < 2; ++q) {
      double acc = 0.0;
      for (int c = 0; c < 2; ++c)
        for (int i = 0; i < 7; ++i)
          for (int j = 0; j < 7; ++j) {
            const int rr = r + i - 3, qq = q + j - 3;
            if (rr < 0 || qq < 0 || rr > 1 || qq > 1) continue;
            acc += k.at(0, c, i, j) * pooled[c][rr][qq];
          }
      const double ms = sig(acc);
      for (int c = 0; c < 2; ++c) EXPECT_NEAR(y.at(0, c, r, q), ms * G[c][r][q], 1e-15);
    }
}

TEST(CbamProperties, RangeShapeAndShrinkage) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Fixture f;
    f.ctx.seed = seed;
    const std::size_t c = 1 + seed % 9;
    CbamBlock<double> block(f.ctx, "cbam", c, 2);
    auto x = random_tensor({2, c, 3 + seed % 5, 2 + seed % 7}, seed + 100, -3, 3);
    auto mc = block.channel(fwd, x);
    for (double v : mc.values()) EXPECT_TRUE(v > 0.0 && v < 1.0);
    auto ms = block.spatial(fwd, ops::mul_broadcast(fwd, x, mc));
    for (double v : ms.values()) EXPECT_TRUE(v > 0.0 && v < 1.0);
    auto y = block(fwd, x);
    ASSERT_EQ(y.shape(), x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_LE(std::abs(y[i]), std::abs(x[i]));
  }
}

TEST(CbamProperties, ChannelPermutationEquivariance) {
  const std::size_t C = 5;
  const std::size_t perm[C] = {3, 0, 4, 1, 2};  // new channel i holds old perm[i]
  Fixture a, b;
  CbamBlock<double> left(a.ctx, "cbam", C, 2);
  CbamBlock<double> right(b.ctx, "cbam", C, 2);
  const std::size_t h = left.channel.hidden();
  for (std::size_t j = 0; j < h; ++j) {
    for (std::size_t i = 0; i < C; ++i) {
      right.channel.fc1.weight[j * C + i] = left.channel.fc1.weight[j * C + perm[i]];
      right.channel.fc2.weight[i * h + j] = left.channel.fc2.weight[perm[i] * h + j];
    }
  }
  for (std::size_t i = 0; i < C; ++i) right.channel.fc2.bias[i] = left.channel.fc2.bias[perm[i]];
  std::copy_n(left.spatial.conv.weight.data(), 98, right.spatial.conv.weight.data());

  auto x = random_tensor({1, C, 4, 4}, 31);
  Tensor<double> xp(x.shape());
  for (std::size_t i = 0; i < C; ++i) std::copy_n(x.data() + perm[i] * 16, 16, xp.data() + i * 16);

  auto mc = left.channel(fwd, x);
  auto mcp = right.channel(fwd, xp);
  for (std::size_t i = 0; i < C; ++i) EXPECT_NEAR(mcp[i], mc[perm[i]], 1e-15);
  auto ms = left.spatial(fwd, ops::mul_broadcast(fwd, x, mc));
  auto msp = right.spatial(fwd, ops::mul_broadcast(fwd, xp, mcp));
  for (std::size_t i = 0; i < ms.numel(); ++i) EXPECT_NEAR(msp[i], ms[i], 1e-15);
  // The pooled statistics alone are permutation invariant.
  auto mean = ops::channel_mean(fwd, x), meanp = ops::channel_mean(fwd, xp);
  auto mx = ops::channel_max(fwd, x), mxp = ops::channel_max(fwd, xp);
  for (std::size_t i = 0; i < 16; ++i) {
    EXPECT_NEAR(mean[i], meanp[i], 1e-15);
    EXPECT_EQ(mx[i], mxp[i]);
  }
}

TEST(CbamProperties, WrongChannelCountIsDimensionError) {
  Fixture f;
  CbamBlock<double> block(f.ctx, "cbam", 4);
  EXPECT_THROW(block(fwd, Tensor<double>({1, 3, 2, 2})), DimensionError);
}

TEST(CbamGradients, MatchCentralDifferences) {
  for (std::size_t c : {1, 3, 8}) {
    const auto report = ffsm::testing::cbam_grad_check(c, 17 + c, {});
    EXPECT_TRUE(report.passed) << "C=" << c << " worst " << report.worst.tensor << "[" << report.worst.index
                               << "] " << report.worst.analytic << " vs " << report.worst.numeric;
  }
}
