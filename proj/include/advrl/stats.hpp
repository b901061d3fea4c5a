#pragma once

#include <vector>

namespace advrl::stats {

double mean(const std::vector<double>& xs);
/// Sample standard error of the mean (n - 1 denominator); 0 for n < 2.
double stderr_of_mean(const std::vector<double>& xs);

struct Interval {
  double mean;
  double lo;
  double hi;
};

/// mean +/- 1.96 * stderr.
Interval ci95(const std::vector<double>& xs);

/// Exact one-sided Jonckheere-Terpstra test for an increasing trend across
/// ordered groups; ties count one half. Returns P(J >= J_observed) under
/// random relabelling, by full enumeration of group assignments.
double jonckheere_increasing_p(const std::vector<std::vector<double>>& groups);

}  // namespace advrl::stats
