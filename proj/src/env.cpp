#include "advrl/env.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace advrl {

std::string to_string(Variant v) { return v == Variant::MaxLoss ? "maxloss" : "minnorm"; }

Variant parse_variant(const std::string& s) {
  if (s == "maxloss") return Variant::MaxLoss;
  if (s == "minnorm") return Variant::MinNorm;
  throw InvalidParameter("unknown variant '" + s + "' (expected maxloss or minnorm)");
}

void EnvConfig::validate() const {
  if (variant == Variant::MaxLoss && !(eps > 0)) throw InvalidParameter("MaxLoss requires eps > 0");
  if (variant == Variant::MinNorm && !(c > 0)) throw InvalidParameter("MinNorm requires c > 0");
  if (num_pairs < 1) throw InvalidParameter("N must be positive");
  if (!(theta > 0 && theta < 1)) throw InvalidParameter("theta must lie in (0, 1)");
  if (t_max < 1) throw InvalidParameter("t_max must be positive");
}

bool AttackState::misclassified() const {
  Eigen::Index arg;
  z.maxCoeff(&arg);
  return arg != y;
}

Vec apply_action(const Vec& x, const SparseAction& action) {
  Vec out = x;
  for (const auto& [index, delta] : action) {
    if (index < 0 || index >= x.size()) {
      throw InvalidAction("action index " + std::to_string(index) + " outside [0, " +
                          std::to_string(x.size()) + ")");
    }
    out[index] += delta;
  }
  return clip_unit(out);
}

void validate_action(const SparseAction& action, const EnvConfig& config, Eigen::Index features) {
  if (static_cast<int>(action.size()) != config.num_pairs) {
    throw InvalidAction("action has " + std::to_string(action.size()) + " pairs, expected " +
                        std::to_string(config.num_pairs));
  }
  for (const auto& [index, delta] : action) {
    if (index < 0 || index >= features) throw InvalidAction("action index out of range");
    if (!(std::abs(delta) <= config.theta)) {
      throw InvalidAction("action magnitude " + std::to_string(delta) + " exceeds theta");
    }
  }
}

AttackState reset(const EnvConfig& config, const LabeledSample& sample, VictimOracle& oracle) {
  config.validate();
  if (sample.x0.size() != oracle.features()) {
    throw DimensionMismatch("reset: sample has " + std::to_string(sample.x0.size()) +
                            " features, victim expects " + std::to_string(oracle.features()));
  }
  if (sample.y < 0 || sample.y >= oracle.classes()) throw IndexError("reset: label out of range");
  oracle.ledger().reset_episode();
  AttackState s;
  s.x = sample.x0;
  s.x0 = sample.x0;
  s.y = sample.y;
  s.source_id = sample.source_id;
  s.z = oracle.query(s.x);
  s.f = log_prob_true_class(s.z, s.y);
  s.success = s.misclassified();
  s.terminal = s.success;
  return s;
}

namespace {

void require_steppable(const AttackState& state, const EnvConfig& config, Variant expected,
                       const SparseAction& action, const VictimOracle& oracle) {
  if (config.variant != expected) throw ContractViolation("step: config variant mismatch");
  if (state.terminal) throw ContractViolation("step: state is terminal");
  validate_action(action, config, oracle.features());
}

StepOutcome finish(const AttackState& state, const EnvConfig& config, Vec candidate, Vec z_cand,
                   double f_cand, double d_cand, bool accept) {
  StepOutcome out;
  out.next = state;
  out.next.t = state.t + 1;
  out.accepted = accept;
  out.f_candidate = f_cand;
  out.distortion_candidate = d_cand;
  if (accept) {
    out.next.x = std::move(candidate);
    out.next.z = std::move(z_cand);
    out.next.f = f_cand;
  }
  out.success = out.next.misclassified();
  out.done = out.success || out.next.t >= config.t_max;
  out.next.success = out.success;
  out.next.terminal = out.done;
  return out;
}

}  // namespace

StepOutcome step_max_loss(const AttackState& state, const SparseAction& action,
                          const EnvConfig& config, VictimOracle& oracle) {
  require_steppable(state, config, Variant::MaxLoss, action, oracle);
  Vec candidate = clip_unit(project_l2_ball(apply_action(state.x, action) - state.x0, config.eps) +
                            state.x0);
  Vec z_cand = oracle.query(candidate);
  const double f_cand = log_prob_true_class(z_cand, state.y);
  const double d_cand = (candidate - state.x0).norm();
  const bool accept = state.f - f_cand > 0;
  StepOutcome out = finish(state, config, std::move(candidate), std::move(z_cand), f_cand, d_cand, accept);
  out.reward = accept ? state.f - out.next.f : 0.0;
  return out;
}

StepOutcome step_min_norm(const AttackState& state, const SparseAction& action,
                          const EnvConfig& config, VictimOracle& oracle) {
  require_steppable(state, config, Variant::MinNorm, action, oracle);
  Vec candidate = apply_action(state.x, action);
  Vec z_cand = oracle.query(candidate);
  const double f_cand = log_prob_true_class(z_cand, state.y);
  const double d_prev = state.distortion();
  const double d_cand = (candidate - state.x0).norm();
  const bool accept = (state.f - f_cand) + config.c * (d_prev - d_cand) > 0;
  StepOutcome out = finish(state, config, std::move(candidate), std::move(z_cand), f_cand, d_cand, accept);
  out.reward = accept ? (state.f - out.next.f) + config.c * (d_prev - d_cand) : 0.0;
  return out;
}

StepOutcome step(const AttackState& state, const SparseAction& action, const EnvConfig& config,
                 VictimOracle& oracle) {
  return config.variant == Variant::MaxLoss ? step_max_loss(state, action, config, oracle)
                                            : step_min_norm(state, action, config, oracle);
}

bool is_terminal(const AttackState& state, const EnvConfig& config) {
  return state.misclassified() || state.t >= config.t_max;
}

// ------------------------------------------------------------- trajectory log

const char* const kTrajectoryHeader =
    "episode,source_id,variant,eps,c,t,action,accepted,reward,f_prev,f,distortion_prev,"
    "distortion,f_candidate,distortion_candidate,episode_queries,total_queries,done,success";

TransitionRecord make_record(std::int64_t episode, const AttackState& before,
                             const SparseAction& action, const StepOutcome& out,
                             const EnvConfig& config, const VictimOracle& oracle) {
  TransitionRecord r;
  r.episode = episode;
  r.source_id = before.source_id;
  r.variant = config.variant;
  r.eps = config.eps;
  r.c = config.c;
  r.t = out.next.t;
  r.action = action;
  r.accepted = out.accepted;
  r.reward = out.reward;
  r.f_prev = before.f;
  r.f = out.next.f;
  r.distortion_prev = before.distortion();
  r.distortion = out.next.distortion();
  r.f_candidate = out.f_candidate;
  r.distortion_candidate = out.distortion_candidate;
  r.episode_queries = oracle.ledger().per_episode();
  r.total_queries = oracle.ledger().total();
  r.done = out.done;
  r.success = out.success;
  return r;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw InvalidParameter("trajectory: bad number '" + s + "'");
  }
  return v;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

std::string format_record(const TransitionRecord& r) {
  std::ostringstream os;
  std::string action;
  for (std::size_t j = 0; j < r.action.size(); ++j) {
    if (j) action += '|';
    action += std::to_string(r.action[j].index) + ':' + fmt(r.action[j].delta);
  }
  os << r.episode << ',' << r.source_id << ',' << to_string(r.variant) << ',' << fmt(r.eps) << ','
     << fmt(r.c) << ',' << r.t << ',' << action << ',' << int(r.accepted) << ',' << fmt(r.reward)
     << ',' << fmt(r.f_prev) << ',' << fmt(r.f) << ',' << fmt(r.distortion_prev) << ','
     << fmt(r.distortion) << ',' << fmt(r.f_candidate) << ',' << fmt(r.distortion_candidate) << ','
     << r.episode_queries << ',' << r.total_queries << ',' << int(r.done) << ',' << int(r.success);
  return os.str();
}

TransitionRecord parse_record(const std::string& line) {
  const auto f = split(line, ',');
  if (f.size() != 19) throw InvalidParameter("trajectory: expected 19 fields, got " + std::to_string(f.size()));
  TransitionRecord r;
  r.episode = std::stoll(f[0]);
  r.source_id = std::stoll(f[1]);
  r.variant = parse_variant(f[2]);
  r.eps = parse_double(f[3]);
  r.c = parse_double(f[4]);
  r.t = std::stoi(f[5]);
  if (!f[6].empty()) {
    for (const auto& pair : split(f[6], '|')) {
      const auto colon = pair.find(':');
      if (colon == std::string::npos) throw InvalidParameter("trajectory: bad action pair");
      r.action.push_back({std::stoll(pair.substr(0, colon)), parse_double(pair.substr(colon + 1))});
    }
  }
  r.accepted = f[7] == "1";
  r.reward = parse_double(f[8]);
  r.f_prev = parse_double(f[9]);
  r.f = parse_double(f[10]);
  r.distortion_prev = parse_double(f[11]);
  r.distortion = parse_double(f[12]);
  r.f_candidate = parse_double(f[13]);
  r.distortion_candidate = parse_double(f[14]);
  r.episode_queries = std::stoull(f[15]);
  r.total_queries = std::stoull(f[16]);
  r.done = f[17] == "1";
  r.success = f[18] == "1";
  return r;
}

void write_trajectory(const std::filesystem::path& path, const std::vector<TransitionRecord>& rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write trajectory log " + path.string());
  out << kTrajectoryHeader << '\n';
  for (const auto& r : rows) out << format_record(r) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<TransitionRecord> read_trajectory(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open trajectory log " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kTrajectoryHeader) {
    throw IoError(path.string() + ": missing or unexpected trajectory header");
  }
  std::vector<TransitionRecord> rows;
  while (std::getline(in, line)) {
    if (!line.empty()) rows.push_back(parse_record(line));
  }
  return rows;
}

TraceReport verify_traces(const std::vector<TransitionRecord>& rows) {
  TraceReport report;
  report.transitions = rows.size();
  std::map<std::int64_t, std::vector<const TransitionRecord*>> episodes;
  for (const auto& r : rows) episodes[r.episode].push_back(&r);
  report.episodes = episodes.size();
  auto fail = [&](const TransitionRecord& r, const std::string& what) {
    report.violations.push_back("episode " + std::to_string(r.episode) + " t=" +
                                std::to_string(r.t) + ": " + what);
  };
  for (const auto& [id, steps] : episodes) {
    double reward_sum = 0.0;
    for (std::size_t i = 0; i < steps.size(); ++i) {
      const TransitionRecord& r = *steps[i];
      reward_sum += r.reward;
      if (r.t != static_cast<int>(i) + 1) fail(r, "non-consecutive step index");
      if (r.episode_queries != static_cast<std::uint64_t>(r.t) + 1) fail(r, "episode queries != t + 1");
      if (i > 0 && (r.f_prev != steps[i - 1]->f || r.distortion_prev != steps[i - 1]->distortion)) {
        fail(r, "state discontinuity");
      }
      if (r.success && !r.done) fail(r, "success without done");
      if (r.done && i + 1 != steps.size()) fail(r, "transitions after done");
      if (r.variant == Variant::MaxLoss) {
        const bool should_accept = r.f_prev - r.f_candidate > 0;
        if (should_accept != r.accepted) fail(r, "acceptance disagrees with f_prev - f_candidate > 0");
        if (r.distortion > r.eps + 1e-9) fail(r, "distortion exceeds eps");
        if (r.f > r.f_prev) fail(r, "f increased");
        if (r.reward != (r.accepted ? r.f_prev - r.f : 0.0)) fail(r, "reward != delta f");
      } else {
        const double margin = (r.f_prev - r.f_candidate) + r.c * (r.distortion_prev - r.distortion_candidate);
        if ((margin > 0) != r.accepted) fail(r, "acceptance disagrees with df + c*dd > 0");
        if (r.accepted) {
          const double expected = (r.f_prev - r.f) + r.c * (r.distortion_prev - r.distortion);
          if (std::abs(r.reward - expected) > 1e-12) fail(r, "reward != df + c*dd");
        }
      }
      if (!r.accepted && (r.f != r.f_prev || r.distortion != r.distortion_prev || r.reward != 0.0)) {
        fail(r, "rejected step changed state or paid reward");
      }
    }
    if (steps.front()->variant == Variant::MaxLoss) {
      const double telescoped = steps.front()->f_prev - steps.back()->f;
      if (std::abs(reward_sum - telescoped) > 1e-9) {
        fail(*steps.back(), "reward sum does not telescope to f_0 - f_T");
      }
    }
  }
  return report;
}

}  // namespace advrl
