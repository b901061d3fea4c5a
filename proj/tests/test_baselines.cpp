#include "advrl/baselines.hpp"
#include "advrl/errors.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace advrl;

namespace {

const nn::ImageShape kShape{3, 6, 6};

LabeledSample misclassified(const Classifier& victim, RngStream& rng) {
  LabeledSample s = testing::correct_sample(victim, rng);
  s.y = (s.y + 1) % victim.classes();
  return s;
}

}  // namespace

TEST_CASE("square attack keeps every iterate inside the budget") {
  auto victim = testing::tiny_victim(1);
  RngStream rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const LabeledSample s = testing::correct_sample(*victim, rng, trial);
    VictimOracle oracle(victim);
    std::vector<double> trace;
    const double eps = 0.05 + 0.1 * (trial % 5);
    const auto r = square_attack_l2(oracle, s, kShape, eps, 200, rng, {}, &trace);
    CHECK(r.queries == oracle.ledger().total());
    CHECK(r.queries <= 200);
    CHECK(r.distortion <= eps + 1e-6);
    CHECK(r.final_input.minCoeff() >= 0.0);
    CHECK(r.final_input.maxCoeff() <= 1.0);
    CHECK((r.final_input - s.x0).norm() == doctest::Approx(r.distortion));
    CHECK(trace.size() == r.queries);
    for (std::size_t i = 1; i < trace.size(); ++i) CHECK(trace[i] <= trace[i - 1]);
    if (r.success) CHECK(victim->predict(r.final_input) != s.y);
    else CHECK(r.queries == 200);
  }
}

TEST_CASE("square attack trivial outcomes and errors") {
  auto victim = testing::tiny_victim(3);
  RngStream rng(4);
  VictimOracle a(victim);
  const auto done = square_attack_l2(a, misclassified(*victim, rng), kShape, 0.3, 100, rng);
  CHECK(done.success);
  CHECK(done.queries == 1);
  CHECK(done.distortion == 0.0);

  VictimOracle b(victim);
  const auto spent = square_attack_l2(b, testing::correct_sample(*victim, rng), kShape, 0.3, 1, rng);
  CHECK_FALSE(spent.success);
  CHECK(spent.queries == 1);

  VictimOracle c(victim);
  const LabeledSample s = testing::correct_sample(*victim, rng);
  CHECK_THROWS_AS(square_attack_l2(c, s, kShape, 0.0, 10, rng), InvalidParameter);
  CHECK_THROWS_AS(square_attack_l2(c, s, kShape, 0.3, 0, rng), InvalidParameter);
  CHECK_THROWS_AS(square_attack_l2(c, s, {3, 5, 5}, 0.3, 10, rng), DimensionMismatch);
}

TEST_CASE("square window schedule halves at fixed fractions") {
  CHECK(square_p_selection(0.1, 0, 10000) == 0.1);
  CHECK(square_p_selection(0.1, 10, 10000) == 0.1);
  CHECK(square_p_selection(0.1, 11, 10000) == 0.05);
  CHECK(square_p_selection(0.1, 300, 10000) == doctest::Approx(0.1 / 8));
  CHECK(square_p_selection(0.1, 9000, 10000) == doctest::Approx(0.1 / 512));
  CHECK(square_p_selection(0.1, 50, 100) == doctest::Approx(0.1 / 128));
  for (int i = 1; i < 10000; i += 7)
    CHECK(square_p_selection(0.1, i, 10000) <= square_p_selection(0.1, i - 1, 10000));
}

TEST_CASE("random search honours budget and epsilon") {
  auto victim = testing::tiny_victim(5);
  RngStream rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const LabeledSample s = testing::correct_sample(*victim, rng, trial);
    VictimOracle oracle(victim);
    std::vector<TransitionRecord> log;
    const auto r = random_search_attack(oracle, s, 0.2, 5, 0.05, 100, rng, &log);
    CHECK(r.queries == oracle.ledger().total());
    CHECK(r.queries == log.size() + 1);
    CHECK(r.queries <= 100);
    CHECK(r.distortion <= 0.2 + 1e-9);
    if (!r.success) CHECK(r.queries == 100);
  }
}

TEST_CASE("random search trivial outcomes") {
  auto victim = testing::tiny_victim(7);
  RngStream rng(8);
  const ActionDraw zero = [](RngStream&) { return SparseAction{{0, 0.0}, {1, 0.0}}; };
  VictimOracle a(victim);
  const auto stuck =
      random_search_attack(a, testing::correct_sample(*victim, rng), 0.3, 2, 0.05, 50, rng, nullptr, zero);
  CHECK_FALSE(stuck.success);
  CHECK(stuck.queries == 50);
  CHECK(stuck.distortion == 0.0);

  VictimOracle b(victim);
  const auto done = random_search_attack(b, misclassified(*victim, rng), 0.3, 5, 0.05, 50, rng);
  CHECK(done.success);
  CHECK(done.queries == 1);
}
