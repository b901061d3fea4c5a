#include <cmath>
#include <limits>

#include "advrl/agent.hpp"
#include "advrl/errors.hpp"
#include "doctest.h"

using namespace advrl;

namespace {

PolicyConfig small_config() {
  PolicyConfig cfg;
  cfg.shape = {3, 8, 8};
  cfg.classes = 3;
  cfg.num_pairs = 3;
  cfg.theta = 0.05;
  cfg.conv1 = 4;
  cfg.conv2 = 6;
  cfg.hidden1 = 16;
  cfg.hidden2 = 12;
  cfg.init_log_std = -0.3;
  return cfg;
}

StateEncoding random_state(const PolicyConfig& cfg, RngStream& rng) {
  StateEncoding s;
  s.image = Vec(cfg.shape.size());
  for (Eigen::Index i = 0; i < s.image.size(); ++i) s.image[i] = rng.uniform();
  s.side = Vec::Zero(2 * cfg.classes);
  s.side[static_cast<Eigen::Index>(rng.uniform_int(cfg.classes))] = 1.0;
  Vec z(cfg.classes);
  for (auto& v : z) v = rng.uniform(-2.0, 2.0);
  s.side.tail(cfg.classes) = softmax(z);
  return s;
}

struct Batch {
  std::vector<StateEncoding> states;
  std::vector<PolicyAction> actions;
  std::vector<const StateEncoding*> state_ptrs;
  std::vector<const PolicyAction*> action_ptrs;
};

Batch make_batch(const Policy& policy, int size, RngStream& rng) {
  Batch b;
  for (int i = 0; i < size; ++i) b.states.push_back(random_state(policy.config(), rng));
  for (int i = 0; i < size; ++i) b.actions.push_back(policy.sample(b.states[i], rng).action);
  for (int i = 0; i < size; ++i) {
    b.state_ptrs.push_back(&b.states[i]);
    b.action_ptrs.push_back(&b.actions[i]);
  }
  return b;
}

// Scalar functional sum_b (a_b lp_b + c_b H_b + d_b V_b), accumulated in long double.
double functional(Policy& policy, const Batch& batch, const Vec& a, const Vec& c, const Vec& d) {
  const BatchEval e = policy.forward(batch.state_ptrs, batch.action_ptrs);
  long double acc = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    acc += (long double)a[i] * e.log_prob[i] + (long double)c[i] * e.entropy[i] +
           (long double)d[i] * e.value[i];
  }
  return static_cast<double>(acc);
}

}  // namespace

TEST_CASE("policy gradients match central finite differences on 32 transitions") {
  RngStream rng(11);
  Policy policy(small_config(), rng);
  const Batch batch = make_batch(policy, 32, rng);
  Vec a(32), c(32), d(32);
  for (int i = 0; i < 32; ++i) {
    a[i] = rng.uniform(-1.0, 1.0);
    c[i] = rng.uniform(-1.0, 1.0);
    d[i] = rng.uniform(-1.0, 1.0);
  }
  policy.zero_grad();
  policy.forward(batch.state_ptrs, batch.action_ptrs);
  policy.backward(a, c, d);

  for (auto& [group, blocks] : policy.param_groups()) {
    double worst = 0.0;
    int checked = 0;
    for (auto& block : blocks) {
      const int probes = std::min<Eigen::Index>(block.size, 12);
      for (int k = 0; k < probes; ++k) {
        const auto idx = static_cast<std::size_t>(rng.uniform_int(block.size));
        const double saved = block.value[idx];
        const double h = 1e-5 * std::max(1.0, std::abs(saved));
        block.value[idx] = saved + h;
        const double up = functional(policy, batch, a, c, d);
        block.value[idx] = saved - h;
        const double down = functional(policy, batch, a, c, d);
        block.value[idx] = saved;
        const double numeric = (up - down) / (2 * h);
        const double analytic = block.grad[idx];
        const double rel = std::abs(analytic - numeric) /
                           std::max({std::abs(analytic), std::abs(numeric), 1e-7});
        worst = std::max(worst, rel);
        ++checked;
      }
    }
    INFO("group " << group << " worst relative error " << worst);
    CHECK(checked > 0);
    CHECK(worst < 1e-4);
  }
}

namespace {

// Direct recursive definition: A_t = sum_k (gamma*lambda)^k delta_{t+k}, cut at episode ends.
std::vector<long double> gae_oracle(const TransitionBuffer& b, double gamma, double lambda) {
  const std::size_t n = b.size();
  std::vector<long double> adv(n);
  for (std::size_t t = 0; t < n; ++t) {
    long double total = 0, weight = 1;
    for (std::size_t k = t; k < n; ++k) {
      const long double next_v = b.dones[k] ? 0.0L : (k + 1 < n ? b.values[k + 1] : b.last_value);
      const long double delta = b.rewards[k] + gamma * next_v - b.values[k];
      total += weight * delta;
      if (b.dones[k]) break;
      weight *= (long double)gamma * lambda;
    }
    adv[t] = total;
  }
  return adv;
}

TransitionBuffer random_buffer(RngStream& rng, std::size_t steps) {
  TransitionBuffer b;
  for (std::size_t t = 0; t < steps; ++t) {
    b.add(StateEncoding{}, PolicyAction{}, 0.0, rng.uniform(-1.0, 1.0), rng.uniform(-2.0, 2.0),
          rng.uniform() < 0.2);
  }
  b.last_value = rng.uniform(-2.0, 2.0);
  return b;
}

}  // namespace

TEST_CASE("compute_gae matches the recursive oracle on 1000 random 20-step buffers") {
  RngStream rng(21);
  for (int trial = 0; trial < 1000; ++trial) {
    const TransitionBuffer b = random_buffer(rng, 20);
    const double gamma = rng.uniform(0.5, 1.0), lambda = rng.uniform(0.0, 1.0);
    const GaeResult g = compute_gae(b, gamma, lambda);
    const auto oracle = gae_oracle(b, gamma, lambda);
    for (std::size_t t = 0; t < 20; ++t) {
      CHECK(std::abs(g.advantages[t] - double(oracle[t])) <= 1e-10);
      CHECK(std::abs(g.returns[t] - (g.advantages[t] + b.values[t])) <= 1e-12);
    }
  }
}

TEST_CASE("compute_gae special cases and normalisation") {
  RngStream rng(22);
  const TransitionBuffer b = random_buffer(rng, 30);
  const GaeResult td = compute_gae(b, 0.9, 0.0);
  for (std::size_t t = 0; t < 30; ++t) {
    const double next_v = b.dones[t] ? 0.0 : (t + 1 < 30 ? b.values[t + 1] : b.last_value);
    CHECK(td.advantages[t] == doctest::Approx(b.rewards[t] + 0.9 * next_v - b.values[t]).epsilon(1e-12));
  }
  TransitionBuffer mc = b;
  std::fill(mc.values.begin(), mc.values.end(), 0.0);
  mc.last_value = 0.0;
  const GaeResult m = compute_gae(mc, 1.0, 1.0);
  for (std::size_t t = 0; t < 30; ++t) {
    double sum = 0.0;
    for (std::size_t k = t; k < 30; ++k) {
      sum += mc.rewards[k];
      if (mc.dones[k]) break;
    }
    CHECK(m.advantages[t] == doctest::Approx(sum).epsilon(1e-12));
  }
  const GaeResult n = compute_gae(b, 0.99, 0.95, true);
  CHECK(std::abs(n.advantages.mean()) < 1e-12);
  const double var = (n.advantages.array() - n.advantages.mean()).square().sum() / 29.0;
  CHECK(std::sqrt(var) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK_THROWS_AS(compute_gae(TransitionBuffer{}, 0.99, 0.95), InvalidParameter);
}

TEST_CASE("sampled actions are env-valid and log-probs recompute exactly") {
  RngStream rng(23);
  PolicyConfig cfg = small_config();
  cfg.num_pairs = 5;
  Policy policy(cfg, rng);
  EnvConfig env;
  env.num_pairs = 5;
  for (int i = 0; i < 200; ++i) {
    const StateEncoding s = random_state(cfg, rng);
    const ActionSample a = policy.sample(s, rng);
    CHECK(a.action.action.size() == 5);
    CHECK_NOTHROW(validate_action(a.action.action, env, policy.features()));
    const ActionEval e = policy.evaluate(s, a.action);
    CHECK(std::abs(e.log_prob - a.log_prob) <= 1e-9);
    CHECK(e.value == a.value);
    CHECK(std::isfinite(e.entropy));
    // Without the stored pre-squash draws the log-prob is recovered via atanh.
    PolicyAction stripped{a.action.action, {}};
    CHECK(std::abs(policy.evaluate(s, stripped).log_prob - a.log_prob) <= 1e-6);
  }
}

TEST_CASE("sampling is deterministic for a fixed stream") {
  RngStream init(24);
  Policy policy(small_config(), init);
  RngStream sr(5);
  const StateEncoding s = random_state(policy.config(), sr);
  RngStream r1(99), r2(99);
  const ActionSample a = policy.sample(s, r1), b = policy.sample(s, r2);
  REQUIRE(a.action.action.size() == b.action.action.size());
  for (std::size_t j = 0; j < a.action.action.size(); ++j) {
    CHECK(a.action.action[j].index == b.action.action[j].index);
    CHECK(a.action.action[j].delta == b.action.action[j].delta);
  }
  CHECK(a.log_prob == b.log_prob);
}

TEST_CASE("uniform index head gives N log(1/n) categorical component") {
  RngStream rng(25);
  Policy policy(small_config(), rng);
  for (auto& [group, blocks] : policy.param_groups()) {
    if (group != "index_head" && group != "magnitude_head") continue;
    for (auto& b : blocks) std::fill(b.value, b.value + b.size, 0.0);
  }
  const StateEncoding s = random_state(policy.config(), rng);
  const Vec p = policy.index_probs(s);
  const double n = static_cast<double>(policy.features());
  CHECK((p.array() - 1.0 / n).abs().maxCoeff() < 1e-15);
  const ActionSample a = policy.sample(s, rng);
  // Zero means: the density is the categorical constant plus closed-form
  // squashed-Gaussian terms.
  const double sigma = std::exp(policy.log_std()), theta = policy.config().theta;
  long double expected = 0;
  for (double u : a.action.pre_squash) {
    const long double t = std::tanh((long double)u);
    expected += std::log(1.0L / n) - 0.5L * (u / sigma) * (u / sigma) - std::log((long double)sigma) -
                0.5L * std::log(2 * (long double)M_PI) - std::log((long double)theta) - std::log(1 - t * t);
  }
  CHECK(a.log_prob == doctest::Approx(double(expected)).epsilon(1e-10));
  const double gauss = policy.config().num_pairs * (0.5 + 0.5 * std::log(2 * M_PI) + policy.log_std());
  CHECK(policy.evaluate(s, a.action).entropy ==
        doctest::Approx(policy.config().num_pairs * std::log(n) + gauss).epsilon(1e-12));
}

TEST_CASE("invalid actions are rejected by log-prob evaluation") {
  RngStream rng(26);
  Policy policy(small_config(), rng);
  const StateEncoding s = random_state(policy.config(), rng);
  PolicyAction a = policy.sample(s, rng).action;
  a.action[0].delta = 0.051;
  a.pre_squash.clear();
  CHECK_THROWS_AS(policy.evaluate(s, a), InvalidAction);
  PolicyAction short_action = policy.sample(s, rng).action;
  short_action.action.pop_back();
  short_action.pre_squash.pop_back();
  CHECK_THROWS_AS(policy.evaluate(s, short_action), InvalidAction);
}

TEST_CASE("first minibatch is on-policy and a positive-advantage action gains probability") {
  RngStream rng(27);
  PolicyConfig cfg = small_config();
  cfg.num_pairs = 1;
  Policy policy(cfg, rng);
  const StateEncoding s = random_state(cfg, rng);
  const ActionSample a = policy.sample(s, rng);
  const Eigen::Index chosen = a.action.action[0].index;
  const double before = policy.index_probs(s)[chosen];

  TransitionBuffer buf;
  buf.add(s, a.action, a.log_prob, 1.0, 0.0, true);
  // A second, zero-reward transition on a different index makes the
  // normalised advantage of the first one positive.
  ActionSample other = policy.sample(s, rng);
  while (other.action.action[0].index == chosen) other = policy.sample(s, rng);
  buf.add(s, other.action, other.log_prob, 0.0, 0.0, true);

  PPOConfig ppo;
  ppo.epochs = 1;
  ppo.minibatch = 2;
  ppo.entropy_coef = 0.0;
  nn::Adam opt(ppo.learning_rate);
  RngStream shuffle(3);
  const UpdateStats stats = ppo_update(policy, opt, buf, ppo, ppo.learning_rate, ppo.clip_range, shuffle);
  CHECK(stats.first_minibatch_ratio_dev < 1e-6);
  CHECK(buf.empty());
  CHECK(policy.index_probs(s)[chosen] > before);
}

TEST_CASE("zero advantages leave the policy loss gradient at zero") {
  RngStream rng(28);
  Policy policy(small_config(), rng);
  const StateEncoding s = random_state(policy.config(), rng);
  TransitionBuffer buf;
  for (int i = 0; i < 8; ++i) {
    const ActionSample a = policy.sample(s, rng);
    buf.add(s, a.action, a.log_prob, 0.0, a.value, false);
  }
  buf.last_value = 0.0;
  // Zero rewards and values equal to the bootstrapped targets would still give
  // nonzero TD errors, so check the surrogate directly: with A = 0 the policy
  // loss is exactly 0.
  PPOConfig ppo;
  ppo.epochs = 1;
  ppo.minibatch = 8;
  ppo.entropy_coef = 0.0;
  TransitionBuffer zero = buf;
  std::fill(zero.values.begin(), zero.values.end(), 0.0);
  nn::Adam opt(ppo.learning_rate);
  RngStream shuffle(1);
  const UpdateStats stats = ppo_update(policy, opt, zero, ppo, ppo.learning_rate, ppo.clip_range, shuffle);
  CHECK(std::abs(stats.policy_loss) < 1e-12);
}

TEST_CASE("anneal schedule endpoints and linearity") {
  PPOConfig ppo;
  ppo.total_updates = 300;
  const AnnealPoint a0 = anneal(0, ppo);
  CHECK(a0.learning_rate == 2.5e-3);
  CHECK(a0.clip_range == 0.1);
  const AnnealPoint end = anneal(300, ppo);
  CHECK(end.learning_rate == 0.0);
  CHECK(end.clip_range == 0.0);
  const AnnealPoint half = anneal(150, ppo);
  CHECK(half.learning_rate == 2.5e-3 / 2);
  CHECK(half.clip_range == 0.1 / 2);
  CHECK_THROWS_AS(anneal(-1, ppo), InvalidParameter);
  CHECK_THROWS_AS(anneal(301, ppo), InvalidParameter);
}

TEST_CASE("PPO config validation and text round-trip") {
  PPOConfig ppo;
  ppo.gamma = 0.97;
  ppo.learning_rate = 1.25e-4;
  ppo.anneal = false;
  const PPOConfig back = ppo_config_from_text(ppo_config_to_text(ppo));
  CHECK(back.gamma == ppo.gamma);
  CHECK(back.learning_rate == ppo.learning_rate);
  CHECK(back.anneal == false);
  CHECK(back.rollout_length == ppo.rollout_length);
  PPOConfig bad;
  bad.gamma = 0.0;
  CHECK_THROWS_AS(bad.validate(), InvalidParameter);
  bad = PPOConfig{};
  bad.gae_lambda = 1.5;
  CHECK_THROWS_AS(bad.validate(), InvalidParameter);
  bad = PPOConfig{};
  bad.clip_range = 0.0;
  CHECK_THROWS_AS(bad.validate(), InvalidParameter);
}

TEST_CASE("policy checkpoint round-trip preserves outputs") {
  RngStream rng(29);
  Policy policy(small_config(), rng);
  const StateEncoding s = random_state(policy.config(), rng);
  const ActionSample a = policy.sample(s, rng);
  const Checkpoint ck = policy.to_checkpoint("note=1");
  const Policy back = Policy::from_checkpoint(decode_checkpoint(encode_checkpoint(ck)));
  const ActionEval e1 = policy.evaluate(s, a.action), e2 = back.evaluate(s, a.action);
  // Weights are stored as f32.
  CHECK(e2.log_prob == doctest::Approx(e1.log_prob).epsilon(1e-5));
  CHECK(e2.value == doctest::Approx(e1.value).epsilon(1e-4));
  CHECK(back.config().num_pairs == policy.config().num_pairs);
  CHECK(back.config().theta == policy.config().theta);
}

TEST_CASE("index bandit reaches high expected reward") {
  PolicyConfig cfg;
  cfg.shape = {3, 4, 4};
  cfg.classes = 3;
  cfg.num_pairs = 1;
  PPOConfig ppo;
  ppo.rollout_length = 64;
  ppo.minibatch = 64;
  ppo.total_updates = 200;
  const auto curve = train_index_bandit(cfg, 17, ppo, RngStream(1));
  CHECK(curve.size() == 201);
  CHECK(curve.front() < 0.1);
  CHECK(*std::max_element(curve.begin(), curve.end()) > 0.9);
}
