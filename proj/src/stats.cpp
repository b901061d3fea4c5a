#include "advrl/stats.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>

namespace advrl::stats {

double mean(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  return std::accumulate(xs.begin(), xs.end(), 0.0) / double(xs.size());
}

double stderr_of_mean(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return std::sqrt(ss / double(xs.size() - 1)) / std::sqrt(double(xs.size()));
}

Interval ci95(const std::vector<double>& xs) {
  const double m = mean(xs);
  const double half = 1.96 * stderr_of_mean(xs);
  return {m, m - half, m + half};
}

namespace {

double jt_statistic(const std::vector<double>& values, const std::vector<int>& labels) {
  double j = 0.0;
  for (std::size_t a = 0; a < values.size(); ++a) {
    for (std::size_t b = 0; b < values.size(); ++b) {
      if (labels[a] < labels[b]) {
        if (values[a] < values[b]) j += 1.0;
        else if (values[a] == values[b]) j += 0.5;
      }
    }
  }
  return j;
}

}  // namespace

double jonckheere_increasing_p(const std::vector<std::vector<double>>& groups) {
  std::vector<double> values;
  std::vector<int> labels, sizes;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    sizes.push_back(static_cast<int>(groups[g].size()));
    for (double v : groups[g]) {
      values.push_back(v);
      labels.push_back(static_cast<int>(g));
    }
  }
  if (values.size() > 16) throw std::invalid_argument("jonckheere: too many observations to enumerate");
  const double observed = jt_statistic(values, labels);
  // Enumerate every assignment of observations to groups with the given sizes.
  std::vector<int> assign(values.size(), -1);
  std::vector<int> remaining = sizes;
  double total = 0.0, extreme = 0.0;
  std::function<void(std::size_t)> rec = [&](std::size_t i) {
    if (i == values.size()) {
      total += 1.0;
      if (jt_statistic(values, assign) >= observed - 1e-12) extreme += 1.0;
      return;
    }
    for (std::size_t g = 0; g < remaining.size(); ++g) {
      if (remaining[g] == 0) continue;
      --remaining[g];
      assign[i] = static_cast<int>(g);
      rec(i + 1);
      ++remaining[g];
    }
  };
  rec(0);
  return extreme / total;
}

}  // namespace advrl::stats
