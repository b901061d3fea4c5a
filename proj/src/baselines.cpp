#include "advrl/baselines.hpp"

#include <cmath>

namespace advrl {

namespace {

double margin_loss(const Vec& probs, int y) {
  double other = -std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < probs.size(); ++j) {
    if (j != y) other = std::max(other, std::log(std::max(probs[j], kProbFloor)));
  }
  return log_prob_true_class(probs, y) - other;
}

/// Concentric-rectangle bump of size rows x cols, unit l2 norm.
Mat pseudo_gaussian_rectangles(int rows, int cols) {
  Mat delta = Mat::Zero(rows, cols);
  const int rc = rows / 2 + 1, cc = cols / 2 + 1;
  int r0 = rc - 1, c0 = cc - 1;
  for (int k = 0; k < std::max(rc, cc); ++k) {
    const int r_lo = std::max(r0, 0), r_hi = std::min(r0 + 2 * k + 1, rows);
    const int c_lo = std::max(c0, 0), c_hi = std::min(c0 + 2 * k + 1, cols);
    if (r_hi > r_lo && c_hi > c_lo) {
      delta.block(r_lo, c_lo, r_hi - r_lo, c_hi - c_lo).array() += 1.0 / double((k + 1) * (k + 1));
    }
    --r0;
    --c0;
  }
  const double norm = delta.norm();
  return norm > 0 ? Mat(delta / norm) : delta;
}

/// Two opposite-signed rectangle bumps stacked, randomly transposed.
Mat meta_pseudo_gaussian(int s, RngStream& rng) {
  Mat delta = Mat::Zero(s, s);
  const int top = s / 2;
  if (top > 0) delta.topRows(top) = pseudo_gaussian_rectangles(top, s);
  delta.bottomRows(s - top) = -pseudo_gaussian_rectangles(s - top, s);
  delta /= delta.norm();
  if (rng.uniform() > 0.5) delta.transposeInPlace();
  return delta;
}

double window_norm(const Vec& d, const nn::ImageShape& shape, int ch, int r, int c, int s) {
  double sq = 0.0;
  for (int i = 0; i < s; ++i) {
    for (int j = 0; j < s; ++j) {
      const double v = d[(Eigen::Index(ch) * shape.height + r + i) * shape.width + c + j];
      sq += v * v;
    }
  }
  return std::sqrt(sq);
}

Vec rescale_to_sphere(const Vec& x0, const Vec& delta, double eps) {
  const double norm = delta.norm();
  if (norm == 0.0) return x0;
  Vec x = clip_unit(x0 + delta * (eps / norm));
  // Clipping only pulls coordinates toward x0; rounding in x0 + d can still
  // overshoot by an ulp, so shrink d by a step larger than the rounding error.
  Vec d = x - x0;
  while ((x - x0).norm() > eps) {
    d *= 1.0 - 1e-9;
    x = x0 + d;
  }
  return x;
}

}  // namespace

double square_p_selection(double p_init, int iteration, int schedule_iterations) {
  const int it = static_cast<int>(double(iteration) / schedule_iterations * 10000);
  if (it <= 10) return p_init;
  if (it <= 50) return p_init / 2;
  if (it <= 200) return p_init / 4;
  if (it <= 500) return p_init / 8;
  if (it <= 1000) return p_init / 16;
  if (it <= 2000) return p_init / 32;
  if (it <= 4000) return p_init / 64;
  if (it <= 6000) return p_init / 128;
  if (it <= 8000) return p_init / 256;
  return p_init / 512;
}

AttackResult square_attack_l2(VictimOracle& oracle, const LabeledSample& sample,
                              const nn::ImageShape& shape, double eps, std::uint64_t budget,
                              RngStream& rng, const SquareAttackConfig& config,
                              std::vector<double>* loss_trace) {
  if (!(eps > 0)) throw InvalidParameter("square_attack_l2: eps must be > 0");
  if (budget < 1) throw InvalidParameter("square_attack_l2: budget must be >= 1");
  if (shape.size() != sample.x0.size()) throw DimensionMismatch("square_attack_l2: shape mismatch");
  const Vec& x0 = sample.x0;
  const int y = sample.y;
  const int h = shape.height, w = shape.width, channels = shape.channels;

  AttackResult result;
  oracle.ledger().reset_episode();
  auto finish = [&](const Vec& x, const Vec& probs) {
    Eigen::Index arg;
    probs.maxCoeff(&arg);
    result.success = arg != y;
    result.queries = oracle.ledger().per_episode();
    result.final_input = x;
    result.distortion = (x - x0).norm();
    return result;
  };

  Vec probs = oracle.query(x0);
  double loss = margin_loss(probs, y);
  if (loss_trace) loss_trace->push_back(loss);
  if (loss < 0 || budget == 1) return finish(x0, probs);

  // Initialisation: a grid of alternating-sign bumps rescaled to the sphere.
  Vec delta = Vec::Zero(x0.size());
  const int block = std::max(h / 5, 1);
  const int start = (h - block * 5) / 2;
  for (int ch = 0; ch < channels; ++ch) {
    for (int r = std::max(start, 0); r + block <= h; r += block) {
      for (int c = std::max(start, 0); c + block <= w; c += block) {
        const Mat bump = meta_pseudo_gaussian(block, rng) * rng.sign();
        for (int i = 0; i < block; ++i) {
          for (int j = 0; j < block; ++j) delta[(Eigen::Index(ch) * h + r + i) * w + c + j] += bump(i, j);
        }
      }
    }
  }
  Vec x_best = rescale_to_sphere(x0, delta, eps);
  Vec p_best = oracle.query(x_best);
  double candidate_loss = margin_loss(p_best, y);
  if (candidate_loss < loss) {
    loss = candidate_loss;
  } else {
    x_best = x0;
    p_best = probs;
  }
  if (loss_trace) loss_trace->push_back(loss);

  const double n_features = double(h) * w * channels;
  for (int iteration = 0; loss >= 0 && oracle.ledger().per_episode() < budget; ++iteration) {
    const double p = square_p_selection(config.p_init, iteration, config.schedule_iterations);
    int s = std::max(static_cast<int>(std::lround(std::sqrt(p * n_features / channels))), 3);
    if (s % 2 == 0) ++s;
    s = std::min(s, std::min(h, w) - 1);
    const int r1 = static_cast<int>(rng.uniform_int(h - s + 1));
    const int c1 = static_cast<int>(rng.uniform_int(w - s + 1));
    const int r2 = static_cast<int>(rng.uniform_int(h - s + 1));
    const int c2 = static_cast<int>(rng.uniform_int(w - s + 1));

    Vec d = x_best - x0;
    const double curr_norm = d.norm();
    Vec cand_delta = d;
    for (int ch = 0; ch < channels; ++ch) {
      const double norm_w1 = window_norm(d, shape, ch, r1, c1, s);
      // Norm over the union of both windows for this channel.
      double union_sq = 0.0;
      for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
          const bool in1 = i >= r1 && i < r1 + s && j >= c1 && j < c1 + s;
          const bool in2 = i >= r2 && i < r2 + s && j >= c2 && j < c2 + s;
          if (in1 || in2) {
            const double v = d[(Eigen::Index(ch) * h + i) * w + j];
            union_sq += v * v;
          }
        }
      }
      Mat update = meta_pseudo_gaussian(s, rng) * rng.sign();
      for (int i = 0; i < s; ++i) {
        for (int j = 0; j < s; ++j) {
          update(i, j) += d[(Eigen::Index(ch) * h + r1 + i) * w + c1 + j] / (1e-10 + norm_w1);
        }
      }
      const double target = std::sqrt(std::max(eps * eps - curr_norm * curr_norm, 0.0) / channels + union_sq);
      const double un = update.norm();
      if (un > 0) update *= target / un;
      for (int i = 0; i < s; ++i) {
        for (int j = 0; j < s; ++j) cand_delta[(Eigen::Index(ch) * h + r2 + i) * w + c2 + j] = 0.0;
      }
      for (int i = 0; i < s; ++i) {
        for (int j = 0; j < s; ++j) cand_delta[(Eigen::Index(ch) * h + r1 + i) * w + c1 + j] = update(i, j);
      }
    }
    const Vec x_new = rescale_to_sphere(x0, cand_delta, eps);
    const Vec p_new = oracle.query(x_new);
    const double new_loss = margin_loss(p_new, y);
    if (new_loss < loss) {
      loss = new_loss;
      x_best = x_new;
      p_best = p_new;
    }
    if (loss_trace) loss_trace->push_back(loss);
  }
  return finish(x_best, p_best);
}

AttackResult random_search_attack(VictimOracle& oracle, const LabeledSample& sample, double eps,
                                  int num_pairs, double theta, std::uint64_t budget,
                                  RngStream& rng, std::vector<TransitionRecord>* log,
                                  const ActionDraw& draw) {
  if (budget < 1) throw InvalidParameter("random_search_attack: budget must be >= 1");
  EnvConfig env;
  env.variant = Variant::MaxLoss;
  env.eps = eps;
  env.num_pairs = num_pairs;
  env.theta = theta;
  // Query budget = reset query + t_max transitions.
  env.t_max = static_cast<int>(std::min<std::uint64_t>(budget - 1, std::numeric_limits<int>::max()));
  AttackState state;
  if (env.t_max == 0) {
    env.t_max = 1;
    state = reset(env, sample, oracle);
    return {state.success, oracle.ledger().per_episode(), 0.0, state.x};
  }
  state = reset(env, sample, oracle);
  const auto n = static_cast<std::int64_t>(sample.x0.size());
  while (!state.terminal) {
    SparseAction action(static_cast<std::size_t>(num_pairs));
    if (draw) {
      action = draw(rng);
    } else {
      for (auto& pair : action) {
        pair.index = rng.uniform_int(n);
        pair.delta = rng.uniform(-theta, theta);
      }
    }
    StepOutcome out = step_max_loss(state, action, env, oracle);
    if (log) log->push_back(make_record(0, state, action, out, env, oracle));
    state = std::move(out.next);
  }
  return {state.success, oracle.ledger().per_episode(), state.distortion(), state.x};
}

}  // namespace advrl
