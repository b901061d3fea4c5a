#pragma once

#include <cstdint>
#include <memory>

#include "advrl/checkpoint.hpp"
#include "advrl/dataset.hpp"
#include "advrl/nn.hpp"

namespace advrl {

enum class VictimArch { Conv, Mlp };

/// Conv: two stride-2 3x3 conv layers + two dense layers. Mlp: two dense
/// hidden layers of width `hidden` + output.
struct VictimSpec {
  nn::ImageShape shape;
  int classes = 3;
  VictimArch arch = VictimArch::Conv;
  int conv1 = 16;
  int conv2 = 32;
  int hidden = 64;
};

/// Default desk-scale architecture for an input geometry (wider for 32x32).
VictimSpec default_victim_spec(const nn::ImageShape& shape, int classes);

class Classifier {
 public:
  Classifier(const VictimSpec& spec, RngStream& rng);

  /// Class probabilities for one input.
  Vec forward(const Vec& x) const;
  /// Logits for a batch (columns are samples).
  Mat logits(const Mat& xs) const;
  int predict(const Vec& x) const;
  double accuracy(const Dataset& data) const;

  const VictimSpec& spec() const { return spec_; }
  Eigen::Index features() const { return spec_.shape.size(); }
  int classes() const { return spec_.classes; }

  nn::Sequential& net() { return net_; }
  Checkpoint to_checkpoint() const;
  static Classifier from_checkpoint(const Checkpoint& ckpt);

 private:
  Classifier(const VictimSpec& spec, nn::Sequential net) : spec_(spec), net_(std::move(net)) {}
  static nn::Sequential build(const VictimSpec& spec);

  VictimSpec spec_;
  nn::Sequential net_;
};

struct VictimTrainConfig {
  int epochs = 60;
  double lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int batch_size = 32;
  double target_acc = 0.85;
  int plateau_patience = 10;
  double plateau_factor = 0.1;
};

struct VictimTrainResult {
  Classifier params;
  double train_acc = 0;
  double test_acc = 0;
  int epochs_run = 0;
};

/// Minibatch SGD with momentum, weight decay and plateau LR reduction on the
/// cross-entropy loss. Throws TrainingFailed if test accuracy ends below
/// config.target_acc.
VictimTrainResult train_victim(const Dataset& train, const Dataset& test, const VictimSpec& spec,
                               const VictimTrainConfig& config, RngStream& rng);

class QueryLedger {
 public:
  void record() {
    ++total_;
    ++episode_;
  }
  void reset_episode() { episode_ = 0; }
  std::uint64_t total() const { return total_; }
  std::uint64_t per_episode() const { return episode_; }

 private:
  std::uint64_t total_ = 0;
  std::uint64_t episode_ = 0;
};

/// The only victim surface reachable by attacks: score-based queries that are
/// counted. No weights or gradients are exposed.
class VictimOracle {
 public:
  explicit VictimOracle(std::shared_ptr<const Classifier> model) : model_(std::move(model)) {}

  Vec query(const Vec& x) {
    Vec probs = model_->forward(x);
    ledger_.record();
    return probs;
  }

  QueryLedger& ledger() { return ledger_; }
  const QueryLedger& ledger() const { return ledger_; }
  Eigen::Index features() const { return model_->features(); }
  int classes() const { return model_->classes(); }

 private:
  std::shared_ptr<const Classifier> model_;
  QueryLedger ledger_;
};

}  // namespace advrl
