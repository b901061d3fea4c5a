#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include <Eigen/Dense>

#include "advrl/errors.hpp"

namespace advrl {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Probability floor applied before taking logs of victim outputs.
inline constexpr double kProbFloor = 1e-12;

template <typename Derived>
typename Derived::Scalar l2_norm(const Eigen::MatrixBase<Derived>& v) {
  return v.norm();
}

/// Projects a difference vector onto the closed l2 ball of radius `eps`.
/// Vectors already inside the ball are returned unchanged.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> project_l2_ball(
    const Eigen::MatrixBase<Derived>& d, typename Derived::Scalar eps) {
  if (!(eps > 0)) throw InvalidParameter("project_l2_ball: eps must be > 0");
  const auto norm = d.norm();
  if (norm <= eps) return d;
  Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> out = d * (eps / norm);
  // Rounding can leave the rescaled norm a few ulps above eps.
  while (out.norm() > eps) out *= (1 - 1e-15);
  return out;
}

/// Numerically stable softmax (max-subtracted).
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> softmax(
    const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> e = (logits.array() - logits.maxCoeff()).exp().matrix();
  e /= e.sum();
  return e;
}

/// log(probs[y]) with probs[y] floored at kProbFloor.
double log_prob_true_class(const Vec& probs, Eigen::Index y);

/// Element-wise clamp into [0, 1].
template <typename Derived>
auto clip_unit(const Eigen::MatrixBase<Derived>& v) {
  return v.cwiseMax(typename Derived::Scalar(0)).cwiseMin(typename Derived::Scalar(1));
}

void require_same_size(const Vec& a, const Vec& b, const char* what);
bool all_finite(const Vec& v);

/// Seeded random stream. Identical (seed, stream) pairs yield identical draw
/// sequences; children created by split() depend only on the parent's
/// identity, never on how many draws the parent has made.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

  RngStream split(std::uint64_t child) const;

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::int64_t uniform_int(std::int64_t n);
  double normal();
  /// +1 or -1 with equal probability.
  double sign() { return (next_u64() >> 63) ? 1.0 : -1.0; }

  template <typename Container>
  void shuffle(Container& c) {
    for (std::int64_t i = static_cast<std::int64_t>(c.size()) - 1; i > 0; --i) {
      std::swap(c[i], c[uniform_int(i + 1)]);
    }
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
};

}  // namespace advrl
