#include "advrl/agent.hpp"

#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

namespace advrl {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;  // log(2*pi)

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

/// log(1 - tanh(u)^2), stable for large |u|.
double log_tanh_jacobian(double u) { return 2.0 * (std::log(2.0) - u - softplus(-2.0 * u)); }

std::vector<double> pre_squash_of(const PolicyAction& a, double theta, Eigen::Index features,
                                  int num_pairs) {
  if (static_cast<int>(a.action.size()) != num_pairs) {
    throw InvalidAction("policy action has " + std::to_string(a.action.size()) + " pairs, expected " +
                        std::to_string(num_pairs));
  }
  for (const auto& [index, delta] : a.action) {
    if (index < 0 || index >= features) throw InvalidAction("policy action index out of range");
    if (!(std::abs(delta) <= theta)) throw InvalidAction("policy action magnitude exceeds theta");
  }
  if (!a.pre_squash.empty()) {
    if (a.pre_squash.size() != a.action.size()) throw InvalidAction("pre_squash length mismatch");
    return a.pre_squash;
  }
  std::vector<double> u(a.action.size());
  for (std::size_t j = 0; j < u.size(); ++j) {
    const double r = std::clamp(a.action[j].delta / theta, -1.0 + 1e-12, 1.0 - 1e-12);
    u[j] = std::atanh(r);
  }
  return u;
}

struct ColumnTerms {
  double log_prob;
  double entropy;
};

ColumnTerms column_terms(const Eigen::Ref<const Vec>& logits, const Eigen::Ref<const Vec>& mean,
                         double log_std, const PolicyAction& a, const std::vector<double>& u,
                         double theta) {
  const double max = logits.maxCoeff();
  const double lse = max + std::log((logits.array() - max).exp().sum());
  const Vec logp = logits.array() - lse;
  const Vec p = logp.array().exp();
  const double n_pairs = static_cast<double>(a.action.size());
  const double sigma = std::exp(log_std);
  double lp = 0.0;
  for (std::size_t j = 0; j < a.action.size(); ++j) {
    const Eigen::Index i = a.action[j].index;
    const double z = (u[j] - mean[i]) / sigma;
    lp += logp[i];
    lp += -0.5 * z * z - log_std - 0.5 * kLog2Pi;
    lp -= std::log(theta) + log_tanh_jacobian(u[j]);
  }
  const double cat_entropy = -(p.array() * logp.array()).sum();
  const double gauss_entropy = 0.5 + 0.5 * kLog2Pi + log_std;
  return {lp, n_pairs * (cat_entropy + gauss_entropy)};
}

}  // namespace

StateEncoding encode_state(const AttackState& state, int classes) {
  if (state.z.size() != classes) throw DimensionMismatch("encode_state: z has wrong length");
  StateEncoding e;
  e.image = state.x;
  e.side = Vec::Zero(2 * classes);
  e.side[state.y] = 1.0;
  e.side.tail(classes) = state.z;
  return e;
}

// ------------------------------------------------------------------ Policy

Policy::Policy(const PolicyConfig& config) : config_(config) {
  if (config.classes < 2 || config.num_pairs < 1 || !(config.theta > 0)) {
    throw InvalidParameter("policy: invalid configuration");
  }
  auto& c1 = conv_.add<nn::Conv2d>(config.shape, config.conv1);
  conv_.add<nn::Tanh>(c1.out_features());
  auto& c2 = conv_.add<nn::Conv2d>(c1.out_shape(), config.conv2);
  conv_.add<nn::Tanh>(c2.out_features());
  conv_out_ = c2.out_features();
  trunk_.add<nn::Dense>(conv_out_ + 2 * config.classes, config.hidden1);
  trunk_.add<nn::Tanh>(config.hidden1);
  trunk_.add<nn::Dense>(config.hidden1, config.hidden2);
  trunk_.add<nn::Tanh>(config.hidden2);
  index_head_.add<nn::Dense>(config.hidden2, features());
  mean_head_.add<nn::Dense>(config.hidden2, features());
  value_head_.add<nn::Dense>(config.hidden2, 1);
  log_std_[0] = config.init_log_std;
}

Policy::Policy(const PolicyConfig& config, RngStream& rng) : Policy(config) {
  const double gain = std::sqrt(2.0);
  for (auto* seq : {&conv_, &trunk_}) {
    for (nn::Layer* layer : seq->weighted_layers()) nn::orthogonal_init(*layer->weight(), gain, rng);
  }
  // Small policy-output gain: near-uniform indices and near-zero magnitude means.
  nn::orthogonal_init(*index_head_[0].weight(), 0.01, rng);
  nn::orthogonal_init(*mean_head_[0].weight(), 0.01, rng);
  nn::orthogonal_init(*value_head_[0].weight(), 1.0, rng);
}

Policy::Heads Policy::infer(const Mat& images, const Mat& sides) const {
  const Mat conv = conv_.infer(images);
  Mat h_in(conv.rows() + sides.rows(), conv.cols());
  h_in << conv, sides;
  const Mat h = trunk_.infer(h_in);
  return {index_head_.infer(h), mean_head_.infer(h), value_head_.infer(h).row(0).transpose()};
}

ActionSample Policy::sample(const StateEncoding& state, RngStream& rng) const {
  const Heads heads = infer(state.image, state.side);
  const Vec logits = heads.logits.col(0);
  const Vec p = softmax(logits);
  // Inverse-CDF sampling on the cumulative distribution.
  std::vector<double> cdf(static_cast<std::size_t>(p.size()));
  std::partial_sum(p.data(), p.data() + p.size(), cdf.begin());
  const double sigma = std::exp(log_std_[0]);
  ActionSample out;
  for (int j = 0; j < config_.num_pairs; ++j) {
    const double r = rng.uniform() * cdf.back();
    auto it = std::upper_bound(cdf.begin(), cdf.end(), r);
    const Eigen::Index i = std::min<Eigen::Index>(it - cdf.begin(), p.size() - 1);
    const double u = heads.mean(i, 0) + sigma * rng.normal();
    out.action.action.push_back({i, config_.theta * std::tanh(u)});
    out.action.pre_squash.push_back(u);
  }
  out.log_prob = column_terms(logits, heads.mean.col(0), log_std_[0], out.action,
                              out.action.pre_squash, config_.theta)
                     .log_prob;
  out.value = heads.value[0];
  return out;
}

ActionEval Policy::evaluate(const StateEncoding& state, const PolicyAction& action) const {
  const auto u = pre_squash_of(action, config_.theta, features(), config_.num_pairs);
  const Heads heads = infer(state.image, state.side);
  const auto terms = column_terms(heads.logits.col(0), heads.mean.col(0), log_std_[0], action, u,
                                  config_.theta);
  return {terms.log_prob, terms.entropy, heads.value[0]};
}

double Policy::value(const StateEncoding& state) const {
  return infer(state.image, state.side).value[0];
}

Vec Policy::index_probs(const StateEncoding& state) const {
  return softmax(infer(state.image, state.side).logits.col(0));
}

BatchEval Policy::forward(const std::vector<const StateEncoding*>& states,
                          const std::vector<const PolicyAction*>& actions) {
  if (states.size() != actions.size() || states.empty()) {
    throw InvalidParameter("policy forward: states/actions size mismatch");
  }
  const auto batch = static_cast<Eigen::Index>(states.size());
  Mat images(features(), batch), sides(2 * config_.classes, batch);
  for (Eigen::Index b = 0; b < batch; ++b) {
    images.col(b) = states[b]->image;
    sides.col(b) = states[b]->side;
  }
  const Mat conv = conv_.forward(images);
  Mat h_in(conv.rows() + sides.rows(), batch);
  h_in << conv, sides;
  const Mat h = trunk_.forward(h_in);
  cache_ = {index_head_.forward(h), mean_head_.forward(h), value_head_.forward(h).row(0).transpose()};
  cache_actions_ = actions;
  BatchEval out{Vec(batch), Vec(batch), cache_.value};
  for (Eigen::Index b = 0; b < batch; ++b) {
    const auto u = pre_squash_of(*actions[b], config_.theta, features(), config_.num_pairs);
    const auto terms = column_terms(cache_.logits.col(b), cache_.mean.col(b), log_std_[0],
                                    *actions[b], u, config_.theta);
    out.log_prob[b] = terms.log_prob;
    out.entropy[b] = terms.entropy;
  }
  return out;
}

void Policy::backward(const Vec& g_lp, const Vec& g_ent, const Vec& g_value) {
  const Eigen::Index batch = cache_.logits.cols();
  if (g_lp.size() != batch || g_ent.size() != batch || g_value.size() != batch) {
    throw DimensionMismatch("policy backward: gradient length mismatch");
  }
  const double sigma = std::exp(log_std_[0]);
  const double n_pairs = static_cast<double>(config_.num_pairs);
  Mat d_logits = Mat::Zero(cache_.logits.rows(), batch);
  Mat d_mean = Mat::Zero(cache_.mean.rows(), batch);
  double d_log_std = 0.0;
  for (Eigen::Index b = 0; b < batch; ++b) {
    const PolicyAction& a = *cache_actions_[b];
    const auto u = pre_squash_of(a, config_.theta, features(), config_.num_pairs);
    const Vec logits = cache_.logits.col(b);
    const double max = logits.maxCoeff();
    const Vec logp = (logits.array() - (max + std::log((logits.array() - max).exp().sum()))).matrix();
    const Vec p = logp.array().exp();
    const double cat_entropy = -(p.array() * logp.array()).sum();
    // d/dlogits of sum_j log p[i_j] = counts - N p.
    d_logits.col(b) -= g_lp[b] * n_pairs * p;
    for (std::size_t j = 0; j < a.action.size(); ++j) {
      const Eigen::Index i = a.action[j].index;
      d_logits(i, b) += g_lp[b];
      const double diff = u[j] - cache_.mean(i, b);
      d_mean(i, b) += g_lp[b] * diff / (sigma * sigma);
      d_log_std += g_lp[b] * (diff * diff / (sigma * sigma) - 1.0);
    }
    // d/dlogits of categorical entropy: -p (log p + H).
    d_logits.col(b).array() -= g_ent[b] * n_pairs * p.array() * (logp.array() + cat_entropy);
    d_log_std += g_ent[b] * n_pairs;
  }
  log_std_grad_[0] += d_log_std;
  Mat d_h = index_head_.backward(d_logits);
  d_h += mean_head_.backward(d_mean);
  d_h += value_head_.backward(g_value.transpose());
  const Mat d_in = trunk_.backward(d_h);
  conv_.backward(d_in.topRows(conv_out_));
}

std::vector<std::pair<std::string, std::vector<nn::ParamBlock>>> Policy::param_groups() {
  return {{"conv", conv_.params()},
          {"trunk", trunk_.params()},
          {"index_head", index_head_.params()},
          {"magnitude_head", mean_head_.params()},
          {"value_head", value_head_.params()},
          {"log_std", {{"log_std", log_std_.data(), log_std_grad_.data(), 1}}}};
}

std::vector<nn::ParamBlock> Policy::params() {
  std::vector<nn::ParamBlock> out;
  for (auto& [name, blocks] : param_groups()) {
    for (auto& b : blocks) {
      b.name = name + "." + b.name;
      out.push_back(b);
    }
  }
  return out;
}

void Policy::zero_grad() {
  for (auto& b : params()) b.grads().setZero();
}

std::vector<nn::Layer*> Policy::weighted_layers() {
  std::vector<nn::Layer*> out;
  for (auto* seq : {&conv_, &trunk_, &index_head_, &mean_head_, &value_head_}) {
    for (nn::Layer* l : seq->weighted_layers()) out.push_back(l);
  }
  return out;
}

Checkpoint Policy::to_checkpoint(const std::string& extra_trailer) const {
  Policy copy = *this;
  Checkpoint ckpt;
  ckpt.magic = kPolicyMagic;
  ckpt.classes = static_cast<std::uint32_t>(config_.classes);
  ckpt.features = static_cast<std::uint32_t>(features());
  for (nn::Layer* l : copy.weighted_layers()) ckpt.layers.push_back({*l->weight(), *l->bias()});
  ckpt.layers.push_back({Mat::Constant(1, 1, log_std_[0]), Vec::Zero(1)});
  std::ostringstream os;
  os << "shape=" << config_.shape.channels << ',' << config_.shape.height << ','
     << config_.shape.width << "\nnum_pairs=" << config_.num_pairs << "\ntheta=" << config_.theta
     << "\nconv1=" << config_.conv1 << "\nconv2=" << config_.conv2
     << "\nhidden1=" << config_.hidden1 << "\nhidden2=" << config_.hidden2 << '\n'
     << extra_trailer;
  ckpt.trailer = os.str();
  return ckpt;
}

Policy Policy::from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.magic != kPolicyMagic) throw MalformedFile("not a policy checkpoint", 0);
  std::map<std::string, std::string> kv;
  std::istringstream in(ckpt.trailer);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw MalformedFile("policy checkpoint: missing '" + key + "'", 0);
    return it->second;
  };
  PolicyConfig cfg;
  cfg.classes = static_cast<int>(ckpt.classes);
  char comma;
  std::istringstream shape(get("shape"));
  shape >> cfg.shape.channels >> comma >> cfg.shape.height >> comma >> cfg.shape.width;
  cfg.num_pairs = std::stoi(get("num_pairs"));
  cfg.theta = std::stod(get("theta"));
  cfg.conv1 = std::stoi(get("conv1"));
  cfg.conv2 = std::stoi(get("conv2"));
  cfg.hidden1 = std::stoi(get("hidden1"));
  cfg.hidden2 = std::stoi(get("hidden2"));
  if (cfg.shape.size() != static_cast<Eigen::Index>(ckpt.features)) {
    throw MalformedFile("policy checkpoint: shape disagrees with feature count", 0);
  }
  Policy policy(cfg);
  auto layers = policy.weighted_layers();
  if (ckpt.layers.size() != layers.size() + 1) throw MalformedFile("policy checkpoint: layer count", 0);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    Mat& w = *layers[i]->weight();
    if (w.rows() != ckpt.layers[i].weight.rows() || w.cols() != ckpt.layers[i].weight.cols()) {
      throw MalformedFile("policy checkpoint: layer " + std::to_string(i) + " shape mismatch", 0);
    }
    w = ckpt.layers[i].weight;
    *layers[i]->bias() = ckpt.layers[i].bias;
  }
  policy.log_std_[0] = ckpt.layers.back().weight(0, 0);
  return policy;
}

ActionSample sample_action(const Policy& policy, const AttackState& state, RngStream& rng) {
  return policy.sample(encode_state(state, policy.config().classes), rng);
}

ActionEval action_log_prob(const Policy& policy, const AttackState& state, const PolicyAction& action) {
  return policy.evaluate(encode_state(state, policy.config().classes), action);
}

// ------------------------------------------------------------------ PPO

void PPOConfig::validate() const {
  if (!(gamma > 0 && gamma <= 1)) throw InvalidParameter("gamma must lie in (0, 1]");
  if (!(gae_lambda >= 0 && gae_lambda <= 1)) throw InvalidParameter("gae_lambda must lie in [0, 1]");
  if (!(clip_range > 0)) throw InvalidParameter("clip_range must be > 0");
  if (!(learning_rate > 0)) throw InvalidParameter("learning_rate must be > 0");
  if (epochs < 1 || minibatch < 1 || rollout_length < 1 || total_updates < 0) {
    throw InvalidParameter("epochs, minibatch and rollout_length must be positive");
  }
}

void TransitionBuffer::add(StateEncoding s, PolicyAction a, double log_prob, double reward,
                           double value, bool done) {
  states.push_back(std::move(s));
  actions.push_back(std::move(a));
  log_probs.push_back(log_prob);
  rewards.push_back(reward);
  values.push_back(value);
  dones.push_back(done);
}

void TransitionBuffer::clear() {
  states.clear();
  actions.clear();
  log_probs.clear();
  rewards.clear();
  values.clear();
  dones.clear();
  last_value = 0.0;
}

GaeResult compute_gae(const TransitionBuffer& buffer, double gamma, double lambda, bool normalize) {
  if (buffer.empty()) throw InvalidParameter("compute_gae: empty buffer");
  const auto steps = static_cast<Eigen::Index>(buffer.size());
  GaeResult out{Vec(steps), Vec(steps)};
  double gae = 0.0;
  for (Eigen::Index t = steps - 1; t >= 0; --t) {
    const double next_value = t == steps - 1 ? buffer.last_value : buffer.values[t + 1];
    const double live = buffer.dones[t] ? 0.0 : 1.0;
    const double delta = buffer.rewards[t] + gamma * next_value * live - buffer.values[t];
    gae = delta + gamma * lambda * live * gae;
    out.advantages[t] = gae;
    out.returns[t] = gae + buffer.values[t];
  }
  if (normalize && steps > 1) {
    const double mean = out.advantages.mean();
    const double sd = std::sqrt((out.advantages.array() - mean).square().sum() / double(steps - 1));
    out.advantages = (out.advantages.array() - mean) / (sd + 1e-8);
  }
  return out;
}

UpdateStats ppo_update(Policy& policy, nn::Adam& optimizer, TransitionBuffer& buffer,
                       const PPOConfig& config, double learning_rate, double clip_range,
                       RngStream& rng) {
  config.validate();
  const GaeResult gae = compute_gae(buffer, config.gamma, config.gae_lambda, true);
  const std::size_t total = buffer.size();
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), std::size_t{0});
  optimizer.set_lr(learning_rate);
  const auto params = policy.params();

  UpdateStats stats;
  double clipped = 0.0, seen = 0.0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < total; start += config.minibatch) {
      const std::size_t count = std::min<std::size_t>(config.minibatch, total - start);
      std::vector<const StateEncoding*> states(count);
      std::vector<const PolicyAction*> actions(count);
      for (std::size_t i = 0; i < count; ++i) {
        states[i] = &buffer.states[order[start + i]];
        actions[i] = &buffer.actions[order[start + i]];
      }
      policy.zero_grad();
      const BatchEval ev = policy.forward(states, actions);
      const auto m = static_cast<Eigen::Index>(count);
      Vec g_lp(m), g_ent = Vec::Constant(m, -config.entropy_coef / double(m)), g_v(m);
      double policy_loss = 0.0, value_loss = 0.0, kl = 0.0, max_dev = 0.0;
      for (Eigen::Index b = 0; b < m; ++b) {
        const std::size_t idx = order[start + b];
        const double log_ratio = ev.log_prob[b] - buffer.log_probs[idx];
        const double ratio = std::exp(log_ratio);
        const double adv = gae.advantages[idx];
        const double s1 = ratio * adv;
        const double s2 = std::clamp(ratio, 1.0 - clip_range, 1.0 + clip_range) * adv;
        policy_loss -= std::min(s1, s2);
        g_lp[b] = s1 <= s2 ? -ratio * adv / double(m) : 0.0;
        const double err = ev.value[b] - gae.returns[idx];
        value_loss += err * err;
        g_v[b] = config.value_coef * 2.0 * err / double(m);
        kl += (ratio - 1.0) - log_ratio;
        max_dev = std::max(max_dev, std::abs(ratio - 1.0));
        if (std::abs(ratio - 1.0) > clip_range) clipped += 1.0;
      }
      seen += double(m);
      policy_loss /= double(m);
      value_loss /= double(m);
      const double entropy = ev.entropy.mean();
      const double loss = policy_loss + config.value_coef * value_loss - config.entropy_coef * entropy;
      if (!std::isfinite(loss)) {
        std::ostringstream os;
        os << "ppo_update: non-finite loss (policy " << policy_loss << ", value " << value_loss
           << ", entropy " << entropy << ") at epoch " << epoch << ", minibatch " << stats.minibatches;
        throw NonFiniteLoss(os.str());
      }
      if (stats.minibatches == 0) stats.first_minibatch_ratio_dev = max_dev;
      policy.backward(g_lp, g_ent, g_v);
      nn::clip_grad_norm(params, config.max_grad_norm);
      optimizer.step(params);
      stats.policy_loss += policy_loss;
      stats.value_loss += value_loss;
      stats.entropy += entropy;
      stats.approx_kl += kl / double(m);
      ++stats.minibatches;
    }
  }
  if (stats.minibatches > 0) {
    stats.policy_loss /= stats.minibatches;
    stats.value_loss /= stats.minibatches;
    stats.entropy /= stats.minibatches;
    stats.approx_kl /= stats.minibatches;
  }
  stats.clip_fraction = seen > 0 ? clipped / seen : 0.0;
  buffer.clear();
  return stats;
}

AnnealPoint anneal(int update_index, const PPOConfig& config) {
  if (update_index < 0 || update_index > config.total_updates) {
    throw InvalidParameter("anneal: update index " + std::to_string(update_index) +
                           " outside [0, " + std::to_string(config.total_updates) + "]");
  }
  if (!config.anneal || config.total_updates == 0) return {config.learning_rate, config.clip_range};
  const double remaining = 1.0 - double(update_index) / double(config.total_updates);
  return {config.learning_rate * remaining, config.clip_range * remaining};
}

std::string ppo_config_to_text(const PPOConfig& c) {
  std::ostringstream os;
  os.precision(17);
  os << "gamma=" << c.gamma << "\ngae_lambda=" << c.gae_lambda << "\nclip_range=" << c.clip_range
     << "\nlearning_rate=" << c.learning_rate << "\nepochs=" << c.epochs
     << "\nminibatch=" << c.minibatch << "\nrollout_length=" << c.rollout_length
     << "\ntotal_updates=" << c.total_updates << "\nvalue_coef=" << c.value_coef
     << "\nentropy_coef=" << c.entropy_coef << "\nmax_grad_norm=" << c.max_grad_norm
     << "\nanneal=" << (c.anneal ? 1 : 0) << '\n';
  return os.str();
}

PPOConfig ppo_config_from_text(const std::string& text) {
  PPOConfig c;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq), v = line.substr(eq + 1);
    if (key == "gamma") c.gamma = std::stod(v);
    else if (key == "gae_lambda") c.gae_lambda = std::stod(v);
    else if (key == "clip_range") c.clip_range = std::stod(v);
    else if (key == "learning_rate") c.learning_rate = std::stod(v);
    else if (key == "epochs") c.epochs = std::stoi(v);
    else if (key == "minibatch") c.minibatch = std::stoi(v);
    else if (key == "rollout_length") c.rollout_length = std::stoi(v);
    else if (key == "total_updates") c.total_updates = std::stoi(v);
    else if (key == "value_coef") c.value_coef = std::stod(v);
    else if (key == "entropy_coef") c.entropy_coef = std::stod(v);
    else if (key == "max_grad_norm") c.max_grad_norm = std::stod(v);
    else if (key == "anneal") c.anneal = v != "0";
  }
  return c;
}

// ------------------------------------------------------------------ rollouts

EpisodeResult run_policy_episode(const Policy& policy, const EnvConfig& env,
                                 const LabeledSample& sample, VictimOracle& oracle, RngStream& rng,
                                 std::vector<TransitionRecord>* log, std::int64_t episode_id) {
  AttackState state = reset(env, sample, oracle);
  EpisodeResult result;
  result.source_id = sample.source_id;
  const int classes = policy.config().classes;
  while (!state.terminal) {
    const ActionSample a = policy.sample(encode_state(state, classes), rng);
    StepOutcome out = step(state, a.action.action, env, oracle);
    if (log != nullptr) log->push_back(make_record(episode_id, state, a.action.action, out, env, oracle));
    result.total_reward += out.reward;
    state = std::move(out.next);
  }
  result.success = state.success;
  result.queries = oracle.ledger().per_episode();
  result.l2 = state.distortion();
  result.steps = state.t;
  return result;
}

RolloutCollector::RolloutCollector(EnvConfig env, std::shared_ptr<const Classifier> victim,
                                   const Dataset& data, RngStream rng)
    : env_(env), oracle_(std::move(victim)), data_(data), rng_(std::move(rng)) {
  env_.validate();
  if (data_.empty()) throw InvalidParameter("RolloutCollector: empty dataset");
}

void RolloutCollector::start_episode() {
  constexpr int kMaxTerminalResets = 100000;
  for (int attempt = 0; attempt < kMaxTerminalResets; ++attempt) {
    const auto& sample = data_.samples[static_cast<std::size_t>(rng_.uniform_int(
        static_cast<std::int64_t>(data_.size())))];
    state_ = reset(env_, sample, oracle_);
    episode_reward_ = 0.0;
    if (!state_.terminal) {
      active_ = true;
      return;
    }
    pending_.push_back({sample.source_id, true, oracle_.ledger().per_episode(), 0.0, 0, 0.0});
  }
  throw TrainingFailed("no attackable samples: the victim misclassifies every drawn input", 0.0);
}

void RolloutCollector::collect(const Policy& policy, TransitionBuffer& buffer, int steps,
                               std::vector<EpisodeResult>* finished) {
  const int classes = policy.config().classes;
  for (int collected = 0; collected < steps; ++collected) {
    if (!active_) start_episode();
    StateEncoding enc = encode_state(state_, classes);
    ActionSample a = policy.sample(enc, rng_);
    StepOutcome out = step(state_, a.action.action, env_, oracle_);
    buffer.add(std::move(enc), std::move(a.action), a.log_prob, out.reward, a.value, out.done);
    episode_reward_ += out.reward;
    state_ = std::move(out.next);
    if (state_.terminal) {
      pending_.push_back({state_.source_id, state_.success, oracle_.ledger().per_episode(),
                          state_.distortion(), state_.t, episode_reward_});
      active_ = false;
    }
  }
  buffer.last_value = active_ ? policy.value(encode_state(state_, classes)) : 0.0;
  if (finished != nullptr) finished->insert(finished->end(), pending_.begin(), pending_.end());
  pending_.clear();
}

std::vector<double> train_index_bandit(const PolicyConfig& config, Eigen::Index target,
                                       const PPOConfig& ppo, RngStream rng) {
  ppo.validate();
  RngStream init = rng.split(1);
  RngStream sampler = rng.split(2);
  RngStream shuffler = rng.split(3);
  Policy policy(config, init);
  if (target < 0 || target >= policy.features()) throw IndexError("train_index_bandit: target out of range");
  StateEncoding state;
  state.image = Vec::Constant(policy.features(), 0.5);
  state.side = Vec::Zero(2 * config.classes);
  state.side[0] = 1.0;
  state.side.tail(config.classes).setConstant(1.0 / config.classes);

  nn::Adam optimizer(ppo.learning_rate);
  TransitionBuffer buffer;
  std::vector<double> expected{policy.index_probs(state)[target]};
  for (int u = 0; u < ppo.total_updates; ++u) {
    for (int t = 0; t < ppo.rollout_length; ++t) {
      ActionSample a = policy.sample(state, sampler);
      const double reward = a.action.action.front().index == target ? 1.0 : 0.0;
      buffer.add(state, std::move(a.action), a.log_prob, reward, a.value, true);
    }
    buffer.last_value = 0.0;
    const AnnealPoint schedule = anneal(u, ppo);
    ppo_update(policy, optimizer, buffer, ppo, schedule.learning_rate, schedule.clip_range, shuffler);
    expected.push_back(policy.index_probs(state)[target]);
  }
  return expected;
}

}  // namespace advrl
