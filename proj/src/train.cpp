#include "ffsm/train.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "ffsm/engine/ops.hpp"
#include "ffsm/engine/optim.hpp"
#include "ffsm/error.hpp"
#include "ffsm/random.hpp"

namespace ffsm {
namespace {

constexpr double kBceEps = 1e-7;

std::vector<std::pair<std::string, std::vector<float>>> snapshot(const Model<float>& model) {
  std::vector<std::pair<std::string, std::vector<float>>> out;
  for (const auto* set : {&model.parameters(), &model.buffers()}) {
    for (const auto& p : set->items()) {
      out.emplace_back(p.name, std::vector<float>(p.tensor.values().begin(), p.tensor.values().end()));
    }
  }
  return out;
}

void restore(Model<float>& model, const std::vector<std::pair<std::string, std::vector<float>>>& state) {
  for (const auto& [name, values] : state) {
    Tensor<float>* t = model.parameters().find(name);
    if (t == nullptr) t = model.buffers().find(name);
    if (t == nullptr || t->numel() != values.size()) throw ValueError("checkpoint does not match model: " + name);
    std::copy(values.begin(), values.end(), t->values().begin());
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(initial_lr > 0.0)) throw ConfigError("initial_lr must be positive");
  if (!(plateau_factor > 1.0)) throw ConfigError("plateau_factor must exceed 1");
  if (plateau_patience == 0) throw ConfigError("plateau_patience must be positive");
  if (max_epochs == 0) throw ConfigError("max_epochs must be positive");
  if (early_stop_patience && *early_stop_patience == 0) throw ConfigError("early_stop_patience must be positive");
  if (!(min_lr > 0.0)) throw ConfigError("min_lr must be positive");
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j = {{"batch_size", batch_size},
                      {"initial_lr", initial_lr},
                      {"plateau_factor", plateau_factor},
                      {"plateau_patience", plateau_patience},
                      {"max_epochs", max_epochs},
                      {"min_lr", min_lr},
                      {"optimizer", optimizer == OptimizerKind::Adam ? "adam" : "sgd"},
                      {"seed", seed}};
  j["early_stop_patience"] = early_stop_patience ? nlohmann::json(*early_stop_patience) : nlohmann::json(nullptr);
  return j;
}

nlohmann::json TrainReport::to_json() const {
  nlohmann::json epochs_json = nlohmann::json::array();
  for (const auto& e : epochs) {
    epochs_json.push_back({{"epoch", e.epoch},
                           {"train_loss", e.train_loss},
                           {"val_loss", e.val_loss},
                           {"val_accuracy", e.val_accuracy},
                           {"lr", e.lr}});
  }
  return {{"epochs", epochs_json},
          {"best_epoch", best_epoch},
          {"best_val_loss", best_val_loss},
          {"stop_reason", stop_reason}};
}

std::vector<float> predict(Model<float>& model, const Tensor<float>& x, std::size_t chunk) {
  const Shape s = x.shape();
  const std::size_t per = s.c * s.plane();
  chunk = std::max<std::size_t>(1, chunk);
  std::vector<float> out;
  out.reserve(s.n);
  Tape<float> tape(false);
  for (std::size_t start = 0; start < s.n; start += chunk) {
    const std::size_t n = std::min(chunk, s.n - start);
    Tensor<float> batch(Shape{n, s.c, s.h, s.w});
    std::copy_n(x.data() + start * per, n * per, batch.data());
    const Tensor<float> y = model.forward(tape, batch, false);
    out.insert(out.end(), y.values().begin(), y.values().end());
  }
  return out;
}

double mean_bce(std::span<const float> pred, std::span<const float> labels) {
  if (pred.size() != labels.size() || pred.empty()) throw DimensionError("mean_bce: size mismatch or empty input");
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double p = std::clamp(static_cast<double>(pred[i]), kBceEps, 1.0 - kBceEps);
    total -= labels[i] == 1.0f ? std::log(p) : std::log(1.0 - p);
  }
  return total / static_cast<double>(pred.size());
}

TrainReport train(Model<float>& model, const PatchDataset& data, const TrainConfig& config) {
  config.validate();
  auto train_idx = data.indices(Subset::Train);
  const auto val_idx = data.indices(Subset::Validation);
  if (train_idx.empty() || val_idx.empty()) {
    throw ValueError("training needs non-empty train and validation subsets");
  }
  model.standardization() = data.standardization;
  const Tensor<float> val_x = data.gather(val_idx);
  const std::vector<float> val_y = data.labels(val_idx);

  std::unique_ptr<Optimizer<float>> opt;
  if (config.optimizer == OptimizerKind::Adam) {
    opt = std::make_unique<Adam<float>>(config.initial_lr);
  } else {
    opt = std::make_unique<Sgd<float>>(config.initial_lr);
  }
  auto& params = model.parameters().items();
  Rng rng(derive_seed(config.seed, "epochs"));

  TrainReport report;
  report.best_val_loss = INFINITY;
  double best_acc = -INFINITY;
  std::size_t stale_acc = 0;
  std::size_t stale_loss = 0;
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    shuffle(std::span<std::size_t>(train_idx), rng);
    double loss_sum = 0.0;
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < train_idx.size(); start += config.batch_size, ++batch_no) {
      const std::size_t n = std::min(config.batch_size, train_idx.size() - start);
      const std::span<const std::size_t> members(train_idx.data() + start, n);
      const Tensor<float> x = data.gather(members);
      const std::vector<float> y = data.labels(members);
      Tape<float> tape;
      try {
        const Tensor<float> pred = model.forward(tape, x, true);
        const Tensor<float> loss = ops::bce_loss(tape, pred, std::span<const float>(y));
        model.parameters().zero_grads();
        tape.backward(loss);
        loss_sum += static_cast<double>(loss[0]) * static_cast<double>(n);
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_no + 1) + ": " +
                           e.what());
      }
      opt->step(params);
    }

    const std::vector<float> val_pred = predict(model, val_x);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(train_idx.size());
    rec.val_loss = mean_bce(val_pred, val_y);
    rec.val_accuracy = metrics(confusion(val_pred, val_y)).accuracy;
    rec.lr = opt->learning_rate();
    if (!std::isfinite(rec.val_loss)) {
      throw NumericError("epoch " + std::to_string(epoch) + ": non-finite validation loss");
    }
    report.epochs.push_back(rec);

    if (rec.val_loss < report.best_val_loss) {
      report.best_val_loss = rec.val_loss;
      report.best_epoch = epoch;
      report.checkpoint = snapshot(model);
      stale_loss = 0;
    } else {
      ++stale_loss;
    }

    if (rec.val_accuracy > best_acc + 1e-6) {
      best_acc = rec.val_accuracy;
      stale_acc = 0;
    } else if (++stale_acc >= config.plateau_patience) {
      opt->set_learning_rate(opt->learning_rate() / config.plateau_factor);
      stale_acc = 0;
    }

    if (opt->learning_rate() < config.min_lr) {
      report.stop_reason = "learning rate fell below " + std::to_string(config.min_lr);
      break;
    }
    if (config.early_stop_patience && stale_loss >= *config.early_stop_patience) {
      report.stop_reason = "no validation-loss improvement for " + std::to_string(stale_loss) + " epochs";
      break;
    }
  }
  if (report.stop_reason.empty()) report.stop_reason = "reached max_epochs";
  restore(model, report.checkpoint);
  return report;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["samples"] = samples;
  j["loss"] = loss;
  j["confusion"] = ffsm::to_json(confusion);
  j["metrics"] = ffsm::to_json(metrics);
  j["auc"] = roc.auc;
  return j;
}

EvalReport evaluate(Model<float>& model, const PatchDataset& data, Subset subset, double threshold) {
  const auto idx = data.indices(subset);
  if (idx.empty()) throw ValueError("subset '" + to_string(subset) + "' is empty");
  EvalReport r;
  r.samples = idx.size();
  r.scores = predict(model, data.gather(idx));
  const auto labels = data.labels(idx);
  r.loss = mean_bce(r.scores, labels);
  r.confusion = confusion(r.scores, labels, threshold);
  r.metrics = metrics(r.confusion);
  r.roc = roc_auc(r.scores, labels);
  return r;
}

}  // namespace ffsm
