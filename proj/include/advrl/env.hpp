#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "advrl/dataset.hpp"
#include "advrl/victim.hpp"

namespace advrl {

enum class Variant { MaxLoss, MinNorm };

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);

struct EnvConfig {
  Variant variant = Variant::MaxLoss;
  double eps = 0.3;    // Max Loss l2 budget
  double c = 1e-2;     // Min Norm distortion weight
  int num_pairs = 5;   // N features perturbed per action
  double theta = 0.05; // per-feature magnitude bound
  int t_max = 500;     // episode step cap

  void validate() const;
};

struct PerturbPair {
  Eigen::Index index = 0;
  double delta = 0.0;
};

/// N (feature index, magnitude) pairs; repeated indices accumulate.
using SparseAction = std::vector<PerturbPair>;

struct AttackState {
  Vec x;    // current input x_t
  Vec x0;   // episode origin
  Vec z;    // victim probabilities Z(x_t)
  int y = 0;
  int t = 0;
  double f = 0.0;  // log Z(x_t)_y (floored)
  std::int64_t source_id = 0;
  bool terminal = false;
  bool success = false;

  double distortion() const { return (x - x0).norm(); }
  bool misclassified() const;
};

struct StepOutcome {
  AttackState next;
  double reward = 0.0;
  bool done = false;
  bool success = false;
  bool accepted = false;
  // Candidate diagnostics for replay checks.
  double f_candidate = 0.0;
  double distortion_candidate = 0.0;
};

/// Adds each delta at its index (repeats accumulate), then clips to [0, 1].
Vec apply_action(const Vec& x, const SparseAction& action);

/// Throws InvalidAction unless the action has exactly N pairs with valid
/// indices and |delta| <= theta.
void validate_action(const SparseAction& action, const EnvConfig& config, Eigen::Index features);

/// Starts an episode with one oracle query on the clean input. A sample the
/// victim already misclassifies gives a terminal, successful s_0.
AttackState reset(const EnvConfig& config, const LabeledSample& sample, VictimOracle& oracle);

StepOutcome step_max_loss(const AttackState& state, const SparseAction& action,
                          const EnvConfig& config, VictimOracle& oracle);
StepOutcome step_min_norm(const AttackState& state, const SparseAction& action,
                          const EnvConfig& config, VictimOracle& oracle);
/// Dispatches on config.variant.
StepOutcome step(const AttackState& state, const SparseAction& action, const EnvConfig& config,
                 VictimOracle& oracle);

bool is_terminal(const AttackState& state, const EnvConfig& config);

// ------------------------------------------------------------- trajectory log

/// One logged transition. Doubles are written with round-trip precision so
/// replayed checks are exact.
struct TransitionRecord {
  std::int64_t episode = 0;
  std::int64_t source_id = 0;
  Variant variant = Variant::MaxLoss;
  double eps = 0.0;
  double c = 0.0;
  int t = 0;  // step index after the transition
  SparseAction action;
  bool accepted = false;
  double reward = 0.0;
  double f_prev = 0.0;
  double f = 0.0;
  double distortion_prev = 0.0;
  double distortion = 0.0;
  double f_candidate = 0.0;
  double distortion_candidate = 0.0;
  std::uint64_t episode_queries = 0;
  std::uint64_t total_queries = 0;
  bool done = false;
  bool success = false;
};

extern const char* const kTrajectoryHeader;

TransitionRecord make_record(std::int64_t episode, const AttackState& before,
                             const SparseAction& action, const StepOutcome& out,
                             const EnvConfig& config, const VictimOracle& oracle);

std::string format_record(const TransitionRecord& r);
TransitionRecord parse_record(const std::string& line);

void write_trajectory(const std::filesystem::path& path, const std::vector<TransitionRecord>& rows);
std::vector<TransitionRecord> read_trajectory(const std::filesystem::path& path);

struct TraceReport {
  std::size_t transitions = 0;
  std::size_t episodes = 0;
  std::vector<std::string> violations;

  bool ok() const { return violations.empty(); }
};

/// Replays logged invariants: Max Loss budget, monotone f and reward
/// telescoping; Min Norm acceptance consistency; rejection is a no-op;
/// per-episode queries equal t + 1.
TraceReport verify_traces(const std::vector<TransitionRecord>& rows);

}  // namespace advrl
