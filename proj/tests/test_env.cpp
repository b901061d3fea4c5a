#include <cmath>
#include <filesystem>

#include "advrl/env.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace advrl;
using namespace advrl::testing;

namespace {

EnvConfig max_loss_config(double eps = 0.3) {
  EnvConfig c;
  c.variant = Variant::MaxLoss;
  c.eps = eps;
  return c;
}

EnvConfig min_norm_config(double c_weight = 1e-2) {
  EnvConfig c;
  c.variant = Variant::MinNorm;
  c.c = c_weight;
  return c;
}

}  // namespace

TEST_CASE("EnvConfig validation") {
  EnvConfig c;
  CHECK_NOTHROW(c.validate());
  c.eps = 0.0;
  CHECK_THROWS_AS(c.validate(), InvalidParameter);
  c = min_norm_config(0.0);
  CHECK_THROWS_AS(c.validate(), InvalidParameter);
  c = EnvConfig{};
  c.theta = 1.0;
  CHECK_THROWS_AS(c.validate(), InvalidParameter);
  c = EnvConfig{};
  c.num_pairs = 0;
  CHECK_THROWS_AS(c.validate(), InvalidParameter);
  c = EnvConfig{};
  c.t_max = 0;
  CHECK_THROWS_AS(c.validate(), InvalidParameter);
  CHECK(parse_variant("maxloss") == Variant::MaxLoss);
  CHECK(parse_variant("minnorm") == Variant::MinNorm);
  CHECK_THROWS_AS(parse_variant("other"), InvalidParameter);
}

TEST_CASE("apply_action examples") {
  RngStream rng(1);
  const Vec x = random_image(rng, 20);
  SparseAction zero{{3, 0.0}, {7, 0.0}};
  CHECK(apply_action(x, zero) == x);

  Vec y = x;
  y[4] = 0.99;
  const Vec out = apply_action(y, {{4, 0.05}});
  CHECK(out[4] == 1.0);

  Vec r = Vec::Constant(5, 0.5);
  const Vec rep = apply_action(r, {{2, 0.05}, {2, 0.05}});
  CHECK(rep[2] == doctest::Approx(0.6));
  CHECK_THROWS_AS(apply_action(x, {{20, 0.01}}), InvalidAction);
  CHECK_THROWS_AS(apply_action(x, {{-1, 0.01}}), InvalidAction);
}

TEST_CASE("apply_action changes at most N positions by at most N*theta") {
  RngStream rng(2);
  for (int trial = 0; trial < 2000; ++trial) {
    const Vec x = random_image(rng, 48);
    const SparseAction a = random_action(rng, 48, 5, 0.05);
    const Vec out = apply_action(x, a);
    int changed = 0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      if (out[i] != x[i]) {
        ++changed;
        CHECK(std::abs(out[i] - x[i]) <= 5 * 0.05 + 1e-15);
      }
      CHECK(out[i] >= 0.0);
      CHECK(out[i] <= 1.0);
    }
    CHECK(changed <= 5);
  }
}

TEST_CASE("validate_action rejects malformed actions") {
  EnvConfig c;
  c.num_pairs = 2;
  CHECK_NOTHROW(validate_action({{0, 0.05}, {1, -0.05}}, c, 10));
  CHECK_THROWS_AS(validate_action({{0, 0.05}}, c, 10), InvalidAction);
  CHECK_THROWS_AS(validate_action({{0, 0.06}, {1, 0.0}}, c, 10), InvalidAction);
  CHECK_THROWS_AS(validate_action({{0, 0.01}, {10, 0.0}}, c, 10), InvalidAction);
  CHECK_THROWS_AS(validate_action({{0, std::nan("")}, {1, 0.0}}, c, 10), InvalidAction);
}

TEST_CASE("reset semantics") {
  auto victim = tiny_victim(3);
  VictimOracle oracle(victim);
  RngStream rng(3);
  const LabeledSample s = correct_sample(*victim, rng, 17);
  const AttackState st = reset(max_loss_config(), s, oracle);
  CHECK(oracle.ledger().per_episode() == 1);
  CHECK(!st.terminal);
  CHECK(st.t == 0);
  CHECK(st.x == s.x0);
  CHECK(st.x0 == s.x0);
  CHECK(st.source_id == 17);
  CHECK(std::abs(st.f - std::log(st.z[st.y])) <= 1e-12);

  LabeledSample wrong = s;
  wrong.y = (s.y + 1) % 3;
  const AttackState w = reset(max_loss_config(), wrong, oracle);
  CHECK(w.terminal);
  CHECK(w.success);
  CHECK(w.distortion() == 0.0);
  CHECK(oracle.ledger().per_episode() == 1);
  CHECK(oracle.ledger().total() == 2);

  LabeledSample bad = s;
  bad.x0 = Vec::Zero(5);
  CHECK_THROWS_AS(reset(max_loss_config(), bad, oracle), DimensionMismatch);
  bad = s;
  bad.y = 3;
  CHECK_THROWS(reset(max_loss_config(), bad, oracle));
}

TEST_CASE("Max Loss steps: rejection is a no-op, acceptance rewards the f drop") {
  auto victim = tiny_victim(4);
  VictimOracle oracle(victim);
  RngStream rng(4);
  const EnvConfig cfg = max_loss_config();
  int accepted = 0, rejected = 0;
  for (int ep = 0; ep < 20; ++ep) {
    AttackState st = reset(cfg, correct_sample(*victim, rng), oracle);
    for (int t = 0; t < 50 && !st.terminal; ++t) {
      const auto q_before = oracle.ledger().per_episode();
      const SparseAction a = random_action(rng, victim->features(), cfg.num_pairs, cfg.theta);
      const StepOutcome out = step_max_loss(st, a, cfg, oracle);
      CHECK(oracle.ledger().per_episode() == q_before + 1);
      CHECK(out.next.t == st.t + 1);
      if (out.accepted) {
        ++accepted;
        CHECK(out.reward > 0.0);
        CHECK(std::abs(out.reward - (st.f - out.next.f)) <= 1e-12);
        CHECK(std::abs(out.next.f - log_prob_true_class(victim->forward(out.next.x), st.y)) <= 1e-12);
      } else {
        ++rejected;
        CHECK(out.reward == 0.0);
        CHECK(out.next.x == st.x);
        CHECK(out.next.z == st.z);
      }
      CHECK(out.next.distortion() <= cfg.eps + 1e-9);
      CHECK(out.next.f <= st.f);
      CHECK((!out.success || out.done));
      st = out.next;
    }
  }
  CHECK(accepted > 0);
  CHECK(rejected > 0);
}

TEST_CASE("Min Norm: zero action and distortion-only improvement") {
  auto victim = tiny_victim(5);
  VictimOracle oracle(victim);
  RngStream rng(5);
  const EnvConfig cfg = min_norm_config(1e-4);
  AttackState st = reset(cfg, correct_sample(*victim, rng), oracle);
  SparseAction zero(static_cast<std::size_t>(cfg.num_pairs), PerturbPair{0, 0.0});
  const StepOutcome z = step_min_norm(st, zero, cfg, oracle);
  CHECK(!z.accepted);
  CHECK(z.reward == 0.0);
  CHECK(z.next.x == st.x);

  // Accepted steps: reward equals Δf + c·Δδ on the realized states.
  int accepted = 0;
  for (int t = 0; t < 300 && !st.terminal; ++t) {
    const SparseAction a = random_action(rng, victim->features(), cfg.num_pairs, cfg.theta);
    const StepOutcome out = step_min_norm(st, a, cfg, oracle);
    const double df = st.f - out.f_candidate;
    const double dd = st.distortion() - out.distortion_candidate;
    CHECK(out.accepted == (df + cfg.c * dd > 0));
    if (out.accepted) {
      ++accepted;
      CHECK(std::abs(out.reward - ((st.f - out.next.f) + cfg.c * (st.distortion() - out.next.distortion()))) <=
            1e-12);
    } else {
      CHECK(out.reward == 0.0);
      CHECK(out.next.x == st.x);
    }
    st = out.next;
  }
  CHECK(accepted > 0);
}

TEST_CASE("Min Norm accepts a pure distortion reduction with reward c * delta") {
  // Constant victim: every input yields the same probabilities, so Δf = 0.
  VictimSpec spec;
  spec.shape = {1, 2, 2};
  spec.arch = VictimArch::Mlp;
  spec.hidden = 4;
  RngStream rng(6);
  Classifier model(spec, rng);
  for (auto& p : model.net().params()) {
    for (Eigen::Index i = 0; i < p.size; ++i) p.value[i] = 0.0;
  }
  auto victim = std::make_shared<const Classifier>(model);
  VictimOracle oracle(victim);
  EnvConfig cfg = min_norm_config(0.1);
  cfg.num_pairs = 1;
  LabeledSample s{Vec::Constant(4, 0.5), 0, 0};
  AttackState st = reset(cfg, s, oracle);
  REQUIRE(!st.terminal);  // ties resolve to class 0
  st.x[1] = 0.6;           // start away from x0
  const StepOutcome out = step_min_norm(st, {{1, -0.05}}, cfg, oracle);
  CHECK(out.accepted);
  CHECK(out.reward == doctest::Approx(0.1 * 0.05).epsilon(1e-12));
  CHECK(out.reward > 0.0);
}

TEST_CASE("contract violations and dispatch") {
  auto victim = tiny_victim(7);
  VictimOracle oracle(victim);
  RngStream rng(7);
  LabeledSample s = correct_sample(*victim, rng);
  const EnvConfig ml = max_loss_config();
  AttackState st = reset(ml, s, oracle);
  const SparseAction a = random_action(rng, victim->features(), ml.num_pairs, ml.theta);
  CHECK_THROWS_AS(step_min_norm(st, a, ml, oracle), ContractViolation);
  CHECK_THROWS_AS(step_max_loss(st, SparseAction{{0, 0.01}}, ml, oracle), InvalidAction);
  st.terminal = true;
  CHECK_THROWS_AS(step(st, a, ml, oracle), ContractViolation);
}

TEST_CASE("is_terminal cases and step cap") {
  auto victim = tiny_victim(8);
  VictimOracle oracle(victim);
  RngStream rng(8);
  EnvConfig cfg = max_loss_config();
  cfg.t_max = 3;
  AttackState st = reset(cfg, correct_sample(*victim, rng), oracle);
  CHECK(!is_terminal(st, cfg));
  AttackState flipped = st;
  flipped.y = (st.y + 1) % 3;
  flipped.t = 0;
  CHECK(is_terminal(flipped, cfg));
  SparseAction zero(static_cast<std::size_t>(cfg.num_pairs), PerturbPair{0, 0.0});
  StepOutcome out;
  for (int i = 0; i < 3; ++i) {
    out = step(st, zero, cfg, oracle);
    st = out.next;
  }
  CHECK(out.done);
  CHECK(!out.success);
  CHECK(st.t == 3);
  CHECK(oracle.ledger().per_episode() == 4);
}

TEST_CASE("trajectory records round-trip and verify") {
  auto victim = tiny_victim(9);
  VictimOracle oracle(victim);
  RngStream rng(9);
  std::vector<TransitionRecord> rows;
  for (const EnvConfig& cfg : {max_loss_config(0.2), min_norm_config(0.05)}) {
    for (int ep = 0; ep < 5; ++ep) {
      EnvConfig c = cfg;
      c.t_max = 40;
      AttackState st = reset(c, correct_sample(*victim, rng, ep), oracle);
      while (!st.terminal) {
        const SparseAction a = random_action(rng, victim->features(), c.num_pairs, c.theta);
        StepOutcome out = step(st, a, c, oracle);
        const std::int64_t episode = ep + (c.variant == Variant::MinNorm ? 100 : 0);
        rows.push_back(make_record(episode, st, a, out, c, oracle));
        st = out.next;
      }
    }
  }
  for (const auto& r : rows) {
    const TransitionRecord back = parse_record(format_record(r));
    CHECK(format_record(back) == format_record(r));
    CHECK(back.reward == r.reward);
    CHECK(back.f == r.f);
  }
  const auto path = std::filesystem::temp_directory_path() / "advrl_traj_test.csv";
  write_trajectory(path, rows);
  const auto read = read_trajectory(path);
  REQUIRE(read.size() == rows.size());
  const TraceReport report = verify_traces(read);
  const std::string first = report.violations.empty() ? std::string() : report.violations.front();
  INFO(first);
  CHECK(report.ok());
  CHECK(report.transitions == rows.size());
  CHECK(report.episodes == 10);

  // Tampering is detected.
  auto bad = read;
  bad[3].reward += 1e-6;
  CHECK(!verify_traces(bad).ok());
  bad = read;
  for (auto& r : bad) {
    if (r.variant == Variant::MaxLoss && !r.accepted && !r.done) {
      r.accepted = true;
      break;
    }
  }
  CHECK(!verify_traces(bad).ok());
  std::filesystem::remove(path);
}
