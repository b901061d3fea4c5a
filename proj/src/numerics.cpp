#include "advrl/numerics.hpp"

#include <string>

namespace advrl {

double log_prob_true_class(const Vec& probs, Eigen::Index y) {
  if (y < 0 || y >= probs.size()) {
    throw IndexError("log_prob_true_class: class " + std::to_string(y) + " outside [0, " +
                     std::to_string(probs.size()) + ")");
  }
  return std::log(std::max(probs[y], kProbFloor));
}

void require_same_size(const Vec& a, const Vec& b, const char* what) {
  if (a.size() != b.size()) {
    throw DimensionMismatch(std::string(what) + ": length " + std::to_string(a.size()) +
                            " vs " + std::to_string(b.size()));
  }
}

bool all_finite(const Vec& v) { return v.allFinite(); }

namespace {

// splitmix64 finalizer
std::uint64_t mix(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::mt19937_64 make_engine(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed), stream_(stream), engine_(make_engine(seed, stream)) {}

RngStream RngStream::split(std::uint64_t child) const {
  return RngStream(seed_, mix(mix(stream_) ^ mix(child + 0x632be59bd9b4e019ULL)));
}

double RngStream::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::int64_t RngStream::uniform_int(std::int64_t n) {
  if (n <= 0) throw InvalidParameter("uniform_int: n must be positive");
  const auto un = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % un;
  std::uint64_t r;
  do {
    r = engine_();
  } while (r >= limit);
  return static_cast<std::int64_t>(r % un);
}

double RngStream::normal() {
  // Box-Muller; avoids implementation-defined std::normal_distribution.
  double u1;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

}  // namespace advrl
