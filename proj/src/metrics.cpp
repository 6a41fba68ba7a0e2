#include "rlim/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace rlim::metrics {

namespace {

void require(bool cond, const char* what) {
  if (!cond) throw std::invalid_argument(what);
}

/// Continued fraction for the regularized incomplete beta function.
double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-14;
  constexpr double kFpMin = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

double betai(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double bt = std::exp(std::lgamma(a + b) - std::lgamma(a) -
                             std::lgamma(b) + a * std::log(x) +
                             b * std::log(1.0 - x));
  if (x < (a + 1.0) / (a + b + 2.0)) return bt * betacf(a, b, x) / a;
  return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

}  // namespace

double percentile(const std::vector<double>& series, double q) {
  require(!series.empty(), "percentile of empty series");
  require(q >= 0.0 && q <= 1.0, "percentile level outside [0, 1]");
  std::vector<double> sorted = series;
  std::sort(sorted.begin(), sorted.end());
  const double h = double(sorted.size() - 1) * q;
  const size_t lo = size_t(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  const double frac = h - double(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

double aer(const std::vector<double>& series) {
  require(!series.empty(), "aer of empty series");
  const size_t n = series.size();
  const size_t count = (n + 1) / 2;  // ceil(n/2)
  double sum = 0.0;
  for (size_t i = n - count; i < n; ++i) sum += series[i];
  return sum / double(count);
}

double consecutive_stable(const std::vector<double>& series,
                          double threshold) {
  require(!series.empty(), "stability of empty series");
  size_t best = 0, run = 0;
  for (const double v : series) {
    run = v >= threshold ? run + 1 : 0;
    best = std::max(best, run);
  }
  return double(best) / double(series.size());
}

double sample_efficiency(const std::vector<double>& series, double threshold,
                         int k) {
  require(!series.empty(), "efficiency of empty series");
  require(k >= 1, "window length must be positive");
  const size_t n = series.size();
  size_t run = 0;
  for (size_t i = 0; i < n; ++i) {
    run = series[i] >= threshold ? run + 1 : 0;
    if (run >= size_t(k)) {
      const size_t start = i + 1 - size_t(k);
      return 1.0 - double(start) / double(n);
    }
  }
  return 0.0;  // never reaches the threshold: sample complexity is one
}

double stable_aer(const std::vector<double>& series, double beta) {
  require(!series.empty(), "stable AER of empty series");
  require(beta >= 0.0 && beta <= 1.0, "beta outside [0, 1]");
  const double cutoff = percentile(series, 0.1);
  double sum = 0.0;
  size_t count = 0;
  for (const double v : series) {
    if (v <= cutoff) {
      sum += v;
      count += 1;
    }
  }
  const double tail_mean = sum / double(count);
  return beta * aer(series) + (1.0 - beta) * tail_mean;
}

double kendall_tau(const std::vector<std::pair<double, double>>& pairs) {
  require(pairs.size() >= 2, "kendall tau needs at least two pairs");
  const size_t n = pairs.size();
  auto sign = [](double v) { return v > 0.0 ? 1 : (v < 0.0 ? -1 : 0); };
  long sum = 0;
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      sum += sign(pairs[i].first - pairs[j].first) *
             sign(pairs[i].second - pairs[j].second);
    }
  return double(sum) / double(n * (n - 1));
}

PearsonResult pearson_r(const std::vector<double>& xs,
                        const std::vector<double>& ys) {
  require(xs.size() == ys.size(), "series lengths differ");
  require(xs.size() >= 3, "pearson r needs at least three points");
  const size_t n = xs.size();
  double mean_x = 0.0, mean_y = 0.0;
  for (size_t i = 0; i < n; ++i) {
    mean_x += xs[i];
    mean_y += ys[i];
  }
  mean_x /= double(n);
  mean_y /= double(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double dx = xs[i] - mean_x;
    const double dy = ys[i] - mean_y;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  require(sxx > 0.0 && syy > 0.0, "pearson r undefined for zero variance");

  PearsonResult result;
  result.r = sxy / (std::sqrt(sxx) * std::sqrt(syy));
  const int dof = int(n) - 2;
  if (std::abs(result.r) >= 1.0) {
    result.r = result.r > 0 ? 1.0 : -1.0;
    result.p_value = 0.0;
    return result;
  }
  const double t = result.r *
                   std::sqrt(double(dof) / (1.0 - result.r * result.r));
  result.p_value = student_t_two_sided_p(t, dof);
  return result;
}

double student_t_two_sided_p(double t, int dof) {
  require(dof >= 1, "degrees of freedom must be positive");
  const double df = double(dof);
  return betai(0.5 * df, 0.5, df / (df + t * t));
}

}  // namespace rlim::metrics
