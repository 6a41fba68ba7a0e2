#pragma once

#include <utility>
#include <vector>

namespace rlim::metrics {

/// Linear-interpolation percentile on order statistics: h = (n-1) q,
/// interpolating between the two bracketing sorted values. q in [0, 1].
double percentile(const std::vector<double>& series, double q);

/// Mean of the last half (ceil(n/2) entries) of the per-step return series.
double aer(const std::vector<double>& series);

/// Longest run of entries >= threshold divided by the series length.
double consecutive_stable(const std::vector<double>& series, double threshold);

/// 1 - (first index where a run of k consecutive entries >= threshold
/// begins) / n; zero when no such run exists.
double sample_efficiency(const std::vector<double>& series, double threshold,
                         int k = 500);

/// beta * AER + (1 - beta) * mean of entries at or below the 10th
/// percentile.
double stable_aer(const std::vector<double>& series, double beta);

/// Kendall tau-a over ordered distinct pairs, sign(0) = 0, no tie
/// correction: sum of sign(g1-g2) sign(s1-s2) / (n (n-1)).
double kendall_tau(const std::vector<std::pair<double, double>>& pairs);

struct PearsonResult {
  double r = 0.0;
  double p_value = 1.0;
};

/// Sample correlation with a two-sided p-value from the exact Student-t
/// transform t = r sqrt((n-2)/(1-r^2)). Requires length >= 3 and nonzero
/// variance in both series.
PearsonResult pearson_r(const std::vector<double>& xs,
                        const std::vector<double>& ys);

/// Two-sided tail probability of Student's t with `dof` degrees of freedom.
double student_t_two_sided_p(double t, int dof);

}  // namespace rlim::metrics
