#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "advrl/checkpoint.hpp"
#include "advrl/env.hpp"
#include "advrl/nn.hpp"

namespace advrl {

struct PolicyConfig {
  nn::ImageShape shape;
  int classes = 3;
  int num_pairs = 5;
  double theta = 0.05;
  int conv1 = 8;
  int conv2 = 16;
  int hidden1 = 128;
  int hidden2 = 64;
  double init_log_std = 0.0;
};

/// Policy input: the current image plus a side vector [one-hot(y), Z(x_t)].
struct StateEncoding {
  Vec image;
  Vec side;
};

StateEncoding encode_state(const AttackState& state, int classes);

/// An action together with the pre-squash Gaussian draws that produced its
/// magnitudes (delta_j = theta * tanh(u_j)). `pre_squash` may be empty, in
/// which case it is recovered with atanh.
struct PolicyAction {
  SparseAction action;
  std::vector<double> pre_squash;
};

struct ActionSample {
  PolicyAction action;
  double log_prob = 0.0;
  double value = 0.0;
};

struct ActionEval {
  double log_prob = 0.0;
  double entropy = 0.0;
  double value = 0.0;
};

struct BatchEval {
  Vec log_prob;
  Vec entropy;
  Vec value;
};

/// Actor-critic network. A shared extractor (two stride-2 conv layers over the
/// image, then dense 128 -> 64 on [conv features, side]) feeds three heads:
/// categorical logits over the n features (sampled N times), a per-feature
/// Gaussian mean for the magnitude of whichever feature is picked, and the
/// state value. A single learned log-std is shared by all magnitudes.
class Policy {
 public:
  Policy(const PolicyConfig& config, RngStream& rng);

  const PolicyConfig& config() const { return config_; }
  Eigen::Index features() const { return config_.shape.size(); }

  ActionSample sample(const StateEncoding& state, RngStream& rng) const;
  ActionEval evaluate(const StateEncoding& state, const PolicyAction& action) const;
  double value(const StateEncoding& state) const;
  /// Index-head probabilities for one state.
  Vec index_probs(const StateEncoding& state) const;

  /// Differentiable batch evaluation; caches what backward() needs.
  BatchEval forward(const std::vector<const StateEncoding*>& states,
                    const std::vector<const PolicyAction*>& actions);
  /// Accumulates gradients of sum_b (g_lp[b] * log_prob[b] + g_ent[b] *
  /// entropy[b] + g_value[b] * value[b]) for the last forward() batch.
  void backward(const Vec& g_lp, const Vec& g_ent, const Vec& g_value);

  std::vector<nn::ParamBlock> params();
  /// Parameter groups by role: conv, trunk, index_head, magnitude_head,
  /// value_head, log_std.
  std::vector<std::pair<std::string, std::vector<nn::ParamBlock>>> param_groups();
  void zero_grad();
  double log_std() const { return log_std_[0]; }

  Checkpoint to_checkpoint(const std::string& extra_trailer = {}) const;
  static Policy from_checkpoint(const Checkpoint& ckpt);

 private:
  struct Heads {
    Mat logits;
    Mat mean;
    Vec value;
  };

  explicit Policy(const PolicyConfig& config);
  Heads infer(const Mat& images, const Mat& sides) const;
  std::vector<nn::Layer*> weighted_layers();

  PolicyConfig config_;
  nn::Sequential conv_;
  nn::Sequential trunk_;
  nn::Sequential index_head_;
  nn::Sequential mean_head_;
  nn::Sequential value_head_;
  Vec log_std_{Vec::Zero(1)};
  Vec log_std_grad_{Vec::Zero(1)};
  Eigen::Index conv_out_ = 0;

  Heads cache_;
  std::vector<const PolicyAction*> cache_actions_;
};

ActionSample sample_action(const Policy& policy, const AttackState& state, RngStream& rng);
ActionEval action_log_prob(const Policy& policy, const AttackState& state, const PolicyAction& action);

struct PPOConfig {
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_range = 0.1;
  double learning_rate = 2.5e-3;
  int epochs = 10;
  int minibatch = 64;
  int rollout_length = 2048;
  int total_updates = 300;
  double value_coef = 0.5;
  double entropy_coef = 0.0;
  double max_grad_norm = 0.5;
  bool anneal = true;

  void validate() const;
};

/// On-policy storage. done[t] marks that transition t ended its episode;
/// last_value bootstraps the state after the final entry when it is not done.
struct TransitionBuffer {
  std::vector<StateEncoding> states;
  std::vector<PolicyAction> actions;
  std::vector<double> log_probs;
  std::vector<double> rewards;
  std::vector<double> values;
  std::vector<bool> dones;
  double last_value = 0.0;

  void add(StateEncoding s, PolicyAction a, double log_prob, double reward, double value, bool done);
  std::size_t size() const { return rewards.size(); }
  bool empty() const { return rewards.empty(); }
  void clear();
};

struct GaeResult {
  Vec advantages;
  Vec returns;  // advantages + values, computed before any normalisation
};

GaeResult compute_gae(const TransitionBuffer& buffer, double gamma, double lambda,
                      bool normalize = false);

struct UpdateStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  /// max |ratio - 1| on the first minibatch of the first epoch.
  double first_minibatch_ratio_dev = 0.0;
  int minibatches = 0;
};

/// Clipped-surrogate update over epochs x minibatches; clears the buffer.
UpdateStats ppo_update(Policy& policy, nn::Adam& optimizer, TransitionBuffer& buffer,
                       const PPOConfig& config, double learning_rate, double clip_range,
                       RngStream& rng);

struct AnnealPoint {
  double learning_rate;
  double clip_range;
};

/// Linear decay from the initial values at update 0 to 0 at total_updates.
AnnealPoint anneal(int update_index, const PPOConfig& config);

std::string ppo_config_to_text(const PPOConfig& config);
PPOConfig ppo_config_from_text(const std::string& text);

/// Outcome of one attack episode under the shared metric definitions.
struct EpisodeResult {
  std::int64_t source_id = 0;
  bool success = false;
  std::uint64_t queries = 0;
  double l2 = 0.0;
  int steps = 0;
  double total_reward = 0.0;
};

/// Runs one full episode of the attack MDP under `policy` on `sample`.
EpisodeResult run_policy_episode(const Policy& policy, const EnvConfig& env,
                                 const LabeledSample& sample, VictimOracle& oracle,
                                 RngStream& rng, std::vector<TransitionRecord>* log = nullptr,
                                 std::int64_t episode_id = 0);

/// Collects on-policy transitions from episodes whose start samples are drawn
/// uniformly with replacement from a dataset.
class RolloutCollector {
 public:
  RolloutCollector(EnvConfig env, std::shared_ptr<const Classifier> victim, const Dataset& data,
                   RngStream rng);

  /// Appends `steps` transitions to `buffer` and sets its bootstrap fields.
  /// Episodes that finish are appended to `finished` when non-null.
  void collect(const Policy& policy, TransitionBuffer& buffer, int steps,
               std::vector<EpisodeResult>* finished = nullptr);

  const VictimOracle& oracle() const { return oracle_; }

 private:
  void start_episode();

  EnvConfig env_;
  VictimOracle oracle_;
  const Dataset& data_;
  RngStream rng_;
  AttackState state_;
  double episode_reward_ = 0.0;
  bool active_ = false;
  std::vector<EpisodeResult> pending_;
};

/// One-state contextual bandit over the index head: reward 1 iff the first
/// sampled index equals `target`, every transition ends its episode. Returns
/// the exact expected reward (probability of `target`) after each update;
/// entry 0 is the value before training.
std::vector<double> train_index_bandit(const PolicyConfig& config, Eigen::Index target,
                                       const PPOConfig& ppo, RngStream rng);

}  // namespace advrl
