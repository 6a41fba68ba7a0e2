#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <vector>

#include "rlim/metrics.hpp"
#include "rlim/rng.hpp"

using namespace rlim;
using namespace rlim::metrics;

namespace {

const std::vector<double> kOneToTen = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};

std::vector<double> random_series(Rng& rng, int n, double lo = -5.0,
                                  double hi = 5.0) {
  std::vector<double> out(n);
  for (auto& v : out) v = rng.uniform(lo, hi);
  return out;
}

}  // namespace

TEST_CASE("percentile hand values") {
  CHECK(percentile(kOneToTen, 0.0) == 1.0);
  CHECK(percentile(kOneToTen, 1.0) == 10.0);
  CHECK(percentile(kOneToTen, 0.25) == doctest::Approx(3.25));
  CHECK(percentile(kOneToTen, 0.75) == doctest::Approx(7.75));
  CHECK(percentile(kOneToTen, 0.9) == doctest::Approx(9.1));
  CHECK(percentile({4.2}, 0.0) == 4.2);
  CHECK(percentile({4.2}, 0.37) == 4.2);
  CHECK(percentile({4.2}, 1.0) == 4.2);
  CHECK_THROWS_AS(percentile({}, 0.5), std::invalid_argument);
}

TEST_CASE("percentile is monotone in q") {
  Rng rng(1);
  const auto series = random_series(rng, 37);
  double prev = percentile(series, 0.0);
  for (int i = 1; i <= 40; ++i) {
    const double cur = percentile(series, double(i) / 40.0);
    CHECK(cur >= prev);
    prev = cur;
  }
}

TEST_CASE("aer hand values") {
  CHECK(aer({3.5, 3.5, 3.5}) == doctest::Approx(3.5));
  CHECK(aer({0, 0, 2, 4}) == doctest::Approx(3.0));
  // First-half values never matter.
  CHECK(aer({100, -100, 2, 4}) == doctest::Approx(3.0));
  CHECK_THROWS_AS(aer({}), std::invalid_argument);
}

TEST_CASE("consecutive stability hand values") {
  CHECK(consecutive_stable({5, 5, 5}, 1.0) == doctest::Approx(1.0));
  CHECK(consecutive_stable({0, 0, 0}, 1.0) == doctest::Approx(0.0));
  CHECK(consecutive_stable({2, 2, 0, 2}, 1.0) == doctest::Approx(0.5));
  // Threshold is inclusive.
  CHECK(consecutive_stable({1, 1}, 1.0) == doctest::Approx(1.0));
}

TEST_CASE("sample efficiency hand values") {
  // Qualifies from step 0.
  CHECK(sample_efficiency({5, 5, 5, 5}, 1.0, 3) == doctest::Approx(1.0));
  // Never qualifies.
  CHECK(sample_efficiency({0, 0, 0, 0}, 1.0, 3) == doctest::Approx(0.0));
  // Run of k starts exactly at n/2.
  std::vector<double> series(20, 0.0);
  for (int i = 10; i < 20; ++i) series[i] = 2.0;
  CHECK(sample_efficiency(series, 1.0, 3) == doctest::Approx(0.5));
  // k longer than the series can never qualify.
  CHECK(sample_efficiency({5, 5}, 1.0, 3) == doctest::Approx(0.0));
}

TEST_CASE("stable aer hand values") {
  Rng rng(2);
  const auto series = random_series(rng, 25);
  CHECK(stable_aer(series, 1.0) == aer(series));
  CHECK(stable_aer({2.5, 2.5, 2.5, 2.5}, 0.3) == doctest::Approx(2.5));
  // P10 of 1..10 is 1.9; only {1} falls at or below it.
  CHECK(stable_aer(kOneToTen, 0.0) == doctest::Approx(1.0));
}

TEST_CASE("kendall tau hand values") {
  CHECK(kendall_tau({{1, 1}, {2, 2}, {3, 3}}) == doctest::Approx(1.0));
  CHECK(kendall_tau({{1, 3}, {2, 2}, {3, 1}}) == doctest::Approx(-1.0));
  CHECK(kendall_tau({{1, 1}, {2, 3}, {3, 2}}) == doctest::Approx(1.0 / 3.0));
  CHECK_THROWS_AS(kendall_tau({{1, 1}}), std::invalid_argument);
}

TEST_CASE("kendall tau symmetry and affine invariance") {
  Rng rng(3);
  std::vector<std::pair<double, double>> pairs, swapped, scaled;
  for (int i = 0; i < 15; ++i) {
    const double g = rng.uniform(-1, 1), s = rng.uniform(-1, 1);
    pairs.push_back({g, s});
    swapped.push_back({s, g});
    scaled.push_back({3.0 * g + 2.0, 0.5 * s - 4.0});
  }
  CHECK(kendall_tau(pairs) == doctest::Approx(kendall_tau(swapped)));
  CHECK(kendall_tau(pairs) == doctest::Approx(kendall_tau(scaled)));
}

TEST_CASE("pearson r exact cases") {
  const std::vector<double> xs = {1, 2, 3, 4, 5};
  std::vector<double> ys;
  for (double x : xs) ys.push_back(2.0 * x + 1.0);
  const PearsonResult pos = pearson_r(xs, ys);
  CHECK(pos.r == doctest::Approx(1.0));
  CHECK(pos.p_value == doctest::Approx(0.0).epsilon(1e-12));

  std::vector<double> neg;
  for (double x : xs) neg.push_back(-x);
  CHECK(pearson_r(xs, neg).r == doctest::Approx(-1.0));
}

TEST_CASE("pearson r and p-value match the reference computation") {
  // Frozen references computed with an independent statistics library.
  const std::vector<double> xs = {0.5, 1.25, 2.0, 3.5, 4.75};
  const std::vector<double> ys = {1.1, 0.4, 2.6, 2.2, 4.9};
  const PearsonResult res = pearson_r(xs, ys);
  CHECK(res.r == doctest::Approx(0.8723735109316499).epsilon(1e-12));
  CHECK(res.p_value == doctest::Approx(0.05367243213835484).epsilon(1e-10));

  const std::vector<double> xs2 = {1, 2, 3, 4, 5, 6, 7, 8};
  const std::vector<double> ys2 = {2.1, 1.9, 3.7, 3.1, 5.2, 4.4, 7.3, 6.2};
  const PearsonResult res2 = pearson_r(xs2, ys2);
  CHECK(res2.r == doctest::Approx(0.909856389964439).epsilon(1e-12));
  CHECK(res2.p_value == doctest::Approx(0.001709664479638832).epsilon(1e-10));
}

TEST_CASE("student t tail matches the reference computation") {
  CHECK(student_t_two_sided_p(1.8257418583505538, 10) ==
        doctest::Approx(0.09785461425781246).epsilon(1e-10));
  CHECK(student_t_two_sided_p(0.0, 5) == doctest::Approx(1.0));
}

TEST_CASE("pearson r error paths") {
  CHECK_THROWS_AS(pearson_r({1, 2}, {1, 2}), std::invalid_argument);
  CHECK_THROWS_AS(pearson_r({1, 2, 3}, {1, 2}), std::invalid_argument);
  CHECK_THROWS_AS(pearson_r({1, 1, 1}, {1, 2, 3}), std::invalid_argument);
}

TEST_CASE("pearson r affine invariance") {
  Rng rng(4);
  const auto xs = random_series(rng, 20);
  const auto ys = random_series(rng, 20);
  std::vector<double> xs_aff;
  for (double x : xs) xs_aff.push_back(2.5 * x - 7.0);
  CHECK(pearson_r(xs, ys).r == doctest::Approx(pearson_r(xs_aff, ys).r));
}

TEST_CASE("metric outputs stay in range") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto series = random_series(rng, 30);
    const double threshold = rng.uniform(-5, 5);
    const double stable = consecutive_stable(series, threshold);
    const double eff = sample_efficiency(series, threshold, 3);
    CHECK(stable >= 0.0);
    CHECK(stable <= 1.0);
    CHECK(eff >= 0.0);
    CHECK(eff <= 1.0);
    const auto pairs = [&] {
      std::vector<std::pair<double, double>> p;
      for (int i = 0; i < 10; ++i)
        p.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1)});
      return p;
    }();
    const double tau = kendall_tau(pairs);
    CHECK(tau >= -1.0);
    CHECK(tau <= 1.0);
  }
}
