#include <gtest/gtest.h>

#include <cmath>

#include "ffsm/error.hpp"
#include "ffsm/train.hpp"
#include "fixtures.hpp"

using namespace ffsm;
using ffsm::testing::half_plane_dataset;
using ffsm::testing::small_resnet;

namespace {

TrainConfig quick(std::size_t epochs, std::uint64_t seed = 1) {
  TrainConfig cfg;
  cfg.max_epochs = epochs;
  cfg.seed = seed;
  return cfg;
}

// Replays the plateau rule from the recorded validation accuracies and
// returns the learning rate each epoch should have used.
std::vector<double> expected_lrs(const std::vector<EpochRecord>& epochs, const TrainConfig& cfg) {
  std::vector<double> out;
  double lr = cfg.initial_lr;
  double best = -1.0;
  std::size_t since = 0;
  for (const auto& e : epochs) {
    out.push_back(lr);
    if (e.val_accuracy > best + 1e-6) {
      best = e.val_accuracy;
      since = 0;
    } else if (++since == cfg.plateau_patience) {
      lr /= cfg.plateau_factor;
      since = 0;
    }
  }
  return out;
}

}  // namespace

TEST(Train, SeparableFixtureIsLearned) {
  const auto ds = half_plane_dataset(3);
  auto model = Model<float>::build(small_resnet(3, 8), 5);
  const auto report = train(model, ds, quick(50));
  const auto ev = evaluate(model, ds, Subset::Train);
  EXPECT_GE(ev.metrics.accuracy, 0.95);
  EXPECT_LE(report.epochs.size(), 50u);
  EXPECT_GT(evaluate(model, ds, Subset::Test).roc.auc, 0.9);
}

TEST(Train, SameSeedSameLossCurve) {
  const auto ds = half_plane_dataset(4);
  auto a = Model<float>::build(small_resnet(3, 8), 9);
  auto b = Model<float>::build(small_resnet(3, 8), 9);
  const auto ra = train(a, ds, quick(4, 2));
  const auto rb = train(b, ds, quick(4, 2));
  ASSERT_EQ(ra.epochs.size(), rb.epochs.size());
  for (std::size_t i = 0; i < ra.epochs.size(); ++i) {
    EXPECT_EQ(ra.epochs[i].train_loss, rb.epochs[i].train_loss);
    EXPECT_EQ(ra.epochs[i].val_loss, rb.epochs[i].val_loss);
  }
  auto c = Model<float>::build(small_resnet(3, 8), 9);
  const auto rc = train(c, ds, quick(4, 3));
  EXPECT_NE(ra.epochs[0].train_loss, rc.epochs[0].train_loss);
}

TEST(Train, ConstantLabelsConvergeToPrior) {
  auto ds = half_plane_dataset(5, 2, 0, 30);
  for (float& y : ds.y) y = 1.0f;
  auto model = Model<float>::build(small_resnet(2, 8), 1);
  const auto cfg = quick(25);
  const auto report = train(model, ds, cfg);
  const auto pred = predict(model, ds.x);
  double mean = 0.0;
  for (float p : pred) mean += p;
  mean /= static_cast<double>(pred.size());
  EXPECT_GT(mean, 0.9);
  // Validation accuracy saturates at 1 early, so the schedule keeps
  // dropping the rate every plateau_patience epochs.
  const auto want = expected_lrs(report.epochs, cfg);
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(report.epochs[i].lr, want[i], want[i] * 1e-12);
  EXPECT_LT(report.epochs.back().lr, cfg.initial_lr);
}

TEST(Train, LearningRateFollowsPlateauRule) {
  const auto ds = half_plane_dataset(6);
  auto model = Model<float>::build(small_resnet(3, 8), 2);
  auto cfg = quick(30);
  cfg.plateau_patience = 3;
  const auto report = train(model, ds, cfg);
  const auto want = expected_lrs(report.epochs, cfg);
  ASSERT_EQ(want.size(), report.epochs.size());
  for (std::size_t i = 0; i < want.size(); ++i) {
    EXPECT_NEAR(report.epochs[i].lr, want[i], want[i] * 1e-12) << "epoch " << i + 1;
    const double k = std::log10(cfg.initial_lr / report.epochs[i].lr);
    EXPECT_NEAR(k, std::round(k), 1e-9);
  }
}

TEST(Train, RestoredCheckpointReproducesBestValidationLoss) {
  const auto ds = half_plane_dataset(7);
  auto model = Model<float>::build(small_resnet(3, 8), 4);
  const auto report = train(model, ds, quick(8));
  ASSERT_GE(report.best_epoch, 1u);
  EXPECT_EQ(report.epochs[report.best_epoch - 1].val_loss, report.best_val_loss);
  for (const auto& e : report.epochs) EXPECT_GE(e.val_loss, report.best_val_loss);
  EXPECT_EQ(evaluate(model, ds, Subset::Validation).loss, report.best_val_loss);
}

TEST(Train, EarlyStopAndMinLr) {
  const auto ds = half_plane_dataset(8);
  auto model = Model<float>::build(small_resnet(3, 8), 4);
  auto cfg = quick(200);
  cfg.early_stop_patience = 2;
  const auto report = train(model, ds, cfg);
  EXPECT_LT(report.epochs.size(), 200u);
  EXPECT_EQ(report.epochs.size(), report.best_epoch + 2);
  EXPECT_NE(report.stop_reason.find("validation-loss"), std::string::npos);

  auto lr_cfg = quick(200);
  lr_cfg.initial_lr = 1e-7;
  lr_cfg.plateau_patience = 1;
  lr_cfg.plateau_factor = 100.0;
  auto m2 = Model<float>::build(small_resnet(3, 8), 4);
  const auto r2 = train(m2, ds, lr_cfg);
  EXPECT_LE(r2.epochs.size(), 3u);
  EXPECT_NE(r2.stop_reason.find("learning rate"), std::string::npos);
}

TEST(Train, SgdOptimizerRuns) {
  const auto ds = half_plane_dataset(9);
  auto model = Model<float>::build(small_resnet(3, 8), 4);
  auto cfg = quick(2);
  cfg.optimizer = OptimizerKind::Sgd;
  EXPECT_EQ(train(model, ds, cfg).epochs.size(), 2u);
}

TEST(Train, InvalidConfigIsConfigError) {
  const auto ds = half_plane_dataset(10);
  auto model = Model<float>::build(small_resnet(3, 8), 4);
  auto cfg = quick(2);
  cfg.batch_size = 0;
  EXPECT_THROW(train(model, ds, cfg), ConfigError);
  cfg = quick(2);
  cfg.plateau_factor = 1.0;
  EXPECT_THROW(train(model, ds, cfg), ConfigError);
}

TEST(Train, UnsplitDataIsValueError) {
  auto ds = half_plane_dataset(11);
  for (auto& s : ds.subset) s = Subset::Train;
  auto model = Model<float>::build(small_resnet(3, 8), 4);
  EXPECT_THROW(train(model, ds, quick(1)), ValueError);
}

TEST(Predict, ChunkingDoesNotChangeScores) {
  const auto ds = half_plane_dataset(12);
  auto model = Model<float>::build(small_resnet(3, 8), 4);
  const auto a = predict(model, ds.x, 1);
  const auto b = predict(model, ds.x, 7);
  const auto c = predict(model, ds.x, 1000);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, c);
}

TEST(Evaluate, ReportIsConsistent) {
  const auto ds = half_plane_dataset(13);
  auto model = Model<float>::build(small_resnet(3, 8), 4);
  const auto ev = evaluate(model, ds, Subset::Test);
  const auto test = ds.indices(Subset::Test);
  EXPECT_EQ(ev.samples, test.size());
  EXPECT_EQ(ev.confusion.total(), test.size());
  EXPECT_EQ(ev.scores.size(), test.size());
  EXPECT_EQ(ev.loss, mean_bce(ev.scores, ds.labels(test)));
  const auto j = ev.to_json();
  EXPECT_TRUE(j.contains("metrics"));
  EXPECT_TRUE(j.contains("loss"));
}

TEST(MeanBce, HandValues) {
  const std::vector<float> p{0.5f, 0.5f};
  const std::vector<float> y{1.0f, 0.0f};
  EXPECT_NEAR(mean_bce(p, y), std::log(2.0), 1e-12);
  const std::vector<float> sure{1.0f};
  const std::vector<float> wrong{0.0f};
  EXPECT_TRUE(std::isfinite(mean_bce(sure, wrong)));
}
