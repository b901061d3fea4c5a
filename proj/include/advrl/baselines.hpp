#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "advrl/dataset.hpp"
#include "advrl/env.hpp"
#include "advrl/victim.hpp"

namespace advrl {

struct AttackResult {
  bool success = false;
  std::uint64_t queries = 0;
  double distortion = 0.0;
  Vec final_input;
};

struct SquareAttackConfig {
  double p_init = 0.1;  // initial fraction of pixels per square window
  /// Nominal iteration count the window schedule is scaled to.
  int schedule_iterations = 10000;
};

/// Score-based l2 random search with square-shaped updates: each proposal
/// moves mass between two random windows, rescales the full perturbation onto
/// the eps-sphere, queries once and is kept iff the margin loss
/// (log Z_y - max_{j != y} log Z_j) decreases. `loss_trace`, when given,
/// receives the accepted loss after every query.
AttackResult square_attack_l2(VictimOracle& oracle, const LabeledSample& sample,
                              const nn::ImageShape& shape, double eps, std::uint64_t budget,
                              RngStream& rng, const SquareAttackConfig& config = {},
                              std::vector<double>* loss_trace = nullptr);

/// Window-fraction schedule of the square attack (halvings at fixed
/// fractions of the nominal iteration count).
double square_p_selection(double p_init, int iteration, int schedule_iterations);

/// Drives the Max Loss environment with uniformly random actions (indices
/// uniform over n, magnitudes uniform over [-theta, theta]) until success or
/// the query budget is spent. `draw`, when set, replaces the uniform action
/// sampler.
using ActionDraw = std::function<SparseAction(RngStream&)>;

AttackResult random_search_attack(VictimOracle& oracle, const LabeledSample& sample, double eps,
                                  int num_pairs, double theta, std::uint64_t budget,
                                  RngStream& rng, std::vector<TransitionRecord>* log = nullptr,
                                  const ActionDraw& draw = {});

}  // namespace advrl
