#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ila/data/dataset.hpp"
#include "ila/engine/ops_nn.hpp"
#include "ila/engine/optim.hpp"
#include "ila/models/serialize.hpp"
#include "json.hpp"

namespace ila::harness {

using engine::Tensor;
using models::Model;
using models::ModelSpec;

struct TrainConfig {
  int epochs = 30;
  std::size_t batch_size = 128;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  /// "cosine" anneals to zero over the run, "step" divides by 10 at 50% and
  /// 75% of the epochs, "constant" keeps lr.
  std::string schedule = "cosine";
  bool augment = true;
  data::AugmentOptions augment_options;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size == 0) throw ConfigError("batch_size must be > 0");
    if (!(lr > 0)) throw ConfigError("training lr must be > 0");
    if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum must lie in [0, 1)");
    if (weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
    if (schedule != "cosine" && schedule != "step" && schedule != "constant") {
      throw ConfigError("schedule must be cosine, step or constant, got '" + schedule + "'");
    }
  }

  double lr_at(int epoch) const {
    if (schedule == "constant") return lr;
    if (schedule == "step") {
      double f = 1.0;
      if (epoch >= epochs / 2) f *= 0.1;
      if (epoch >= (3 * epochs) / 4) f *= 0.1;
      return lr * f;
    }
    // Cosine over epochs, never reaching exactly zero in the last epoch.
    return 0.5 * lr * (1 + std::cos(std::numbers::pi * epoch / epochs));
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"lr", c.lr},
       {"momentum", c.momentum},
       {"weight_decay", c.weight_decay},
       {"schedule", c.schedule},
       {"augment", c.augment},
       {"flip", c.augment_options.flip},
       {"crop_pad", c.augment_options.crop_pad},
       {"seed", c.seed}};
}
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.momentum = j.value("momentum", c.momentum);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.schedule = j.value("schedule", c.schedule);
  c.augment = j.value("augment", c.augment);
  c.augment_options.flip = j.value("flip", c.augment_options.flip);
  c.augment_options.crop_pad = j.value("crop_pad", c.augment_options.crop_pad);
  c.seed = j.value("seed", c.seed);
}

struct EpochLog {
  int epoch = 0;
  double lr = 0;
  double train_loss = 0;
  double train_accuracy = 0;  // percent, on augmented batches
  double test_accuracy = 0;   // percent
};

inline std::string training_log_csv(const std::vector<EpochLog>& log) {
  std::ostringstream os;
  os << "epoch,lr,train_loss,train_accuracy,test_accuracy\n" << std::fixed
     << std::setprecision(4);
  for (const auto& e : log) {
    os << e.epoch << ',' << std::setprecision(6) << e.lr << std::setprecision(4) << ','
       << e.train_loss << ',' << e.train_accuracy << ',' << e.test_accuracy << '\n';
  }
  return os.str();
}

template <class T>
double accuracy(const Model<T>& model, const Tensor<T>& images, const std::vector<int>& labels) {
  const auto pred = model.classify(images);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) ok += pred[i] == labels[i];
  return 100.0 * static_cast<double>(ok) / static_cast<double>(labels.size());
}

template <class T>
struct TrainResult {
  Model<T> model;  // frozen
  std::vector<EpochLog> log;
};

/// Raised when the loss stops being finite. Carries the last model that
/// completed an epoch cleanly.
template <class T>
class TrainingDiverged : public NumericError {
 public:
  TrainingDiverged(const std::string& what, Model<T> last_good, std::vector<EpochLog> log)
      : NumericError(what), last_good_(std::move(last_good)), log_(std::move(log)) {}
  const Model<T>& last_good() const { return last_good_; }
  const std::vector<EpochLog>& log() const { return log_; }

 private:
  Model<T> last_good_;
  std::vector<EpochLog> log_;
};

/// Mini-batch SGD with cross-entropy. With a checkpoint path, the model is
/// written after every clean epoch, so a divergence leaves the last good
/// weights on disk.
template <class T = float>
TrainResult<T> train_model(const ModelSpec& spec, std::uint64_t init_seed,
                           const data::Dataset& train, const data::Dataset& test,
                           const TrainConfig& cfg,
                           const std::optional<std::filesystem::path>& checkpoint = {},
                           const std::function<void(const EpochLog&)>& on_epoch = {}) {
  cfg.validate();
  train.validate();
  test.validate();
  Model<T> model = models::build_model<T>(spec, init_seed);
  Model<T> last_good = model;
  last_good.freeze();
  engine::Sgd<T> opt({cfg.lr, cfg.momentum, cfg.weight_decay});
  const Tensor<T> test_x = test.images.template cast<T>();
  std::vector<EpochLog> log;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    opt.set_lr(cfg.lr_at(epoch));
    std::mt19937_64 aug_rng(cfg.seed * 1000003ULL + static_cast<std::uint64_t>(epoch));
    data::BatchIter it(train, cfg.batch_size,
                       cfg.seed ^ (0x5851f42d4c957f2dULL * static_cast<std::uint64_t>(epoch + 1)));
    double loss_sum = 0;
    std::size_t seen = 0, correct = 0;
    while (!it.done()) {
      data::Dataset b = it.next();
      if (cfg.augment) data::augment(b.images, aug_rng, cfg.augment_options);
      model.zero_grad();
      engine::Tape<T> tape;
      typename Model<T>::ForwardOptions fo;
      fo.training = true;
      fo.track_params = true;
      auto logits = model.forward_train(tape, tape.constant(b.images.template cast<T>()), fo)
                        .endpoints.back();
      auto loss = engine::softmax_cross_entropy(logits, b.labels);
      const double lv = static_cast<double>(loss.value()[0]);
      if (!std::isfinite(lv)) {
        std::ostringstream msg;
        msg << "training diverged: non-finite loss in epoch " << epoch + 1;
        if (checkpoint) msg << "; last good checkpoint at " << checkpoint->string();
        throw TrainingDiverged<T>(msg.str(), last_good, log);
      }
      tape.backward(loss);
      opt.step(model.mutable_parameters());
      const auto& z = logits.value();
      const std::size_t k = z.dim(1);
      for (std::size_t i = 0; i < b.size(); ++i) {
        const T* row = z.data() + i * k;
        correct += static_cast<int>(std::max_element(row, row + k) - row) == b.labels[i];
      }
      loss_sum += lv * static_cast<double>(b.size());
      seen += b.size();
    }
    for (const auto& p : model.parameters()) {
      if (!p.value.all_finite()) {
        throw TrainingDiverged<T>("training diverged: non-finite weights in " + p.name,
                                  last_good, log);
      }
    }
    Model<T> snapshot = model;
    snapshot.freeze();
    EpochLog e;
    e.epoch = epoch + 1;
    e.lr = opt.lr();
    e.train_loss = loss_sum / static_cast<double>(seen);
    e.train_accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(seen);
    e.test_accuracy = accuracy(snapshot, test_x, test.labels);
    log.push_back(e);
    if (on_epoch) on_epoch(e);
    last_good = std::move(snapshot);
    if (checkpoint) models::save_model(last_good, *checkpoint);
  }
  return {std::move(last_good), std::move(log)};
}

}  // namespace ila::harness
