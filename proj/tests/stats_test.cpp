#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "metersentry/errors.hpp"
#include "metersentry/rng.hpp"
#include "metersentry/stats.hpp"

using namespace metersentry;
using namespace metersentry::stats;

namespace {

Eigen::VectorXd iota(int n) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = i + 1;
  return v;
}

Eigen::VectorXd normal_sample(int n, double mean, double std, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = rng.normal(mean, std);
  return v;
}

// Bisection inverse of the normal CDF, independent of normal_quantile.
double probit_bisect(double p) {
  double lo = -40.0, hi = 40.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (normal_cdf(mid) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

TEST_CASE("summarize of a constant sequence") {
  Eigen::VectorXd v(4);
  v << 5, 5, 5, 5;
  const SummaryStats s = summarize(v);
  CHECK(s.count == 4);
  CHECK(s.mean == 5.0);
  CHECK(s.std == 0.0);
  CHECK(s.min == 5.0);
  CHECK(s.max == 5.0);
  CHECK(s.q25 == 5.0);
  CHECK(s.median == 5.0);
  CHECK(s.q75 == 5.0);
}

TEST_CASE("summarize quantiles interpolate between order statistics") {
  const SummaryStats s = summarize(iota(100));
  CHECK(s.median == doctest::Approx(50.5).epsilon(1e-12));
  CHECK(s.q25 == doctest::Approx(25.75).epsilon(1e-12));
  CHECK(s.q75 == doctest::Approx(75.25).epsilon(1e-12));
  CHECK(s.min == 1.0);
  CHECK(s.max == 100.0);
}

TEST_CASE("summarize rejects empty input") {
  Eigen::VectorXd empty(0);
  CHECK_THROWS_AS(summarize(empty), InsufficientDataError);
}

TEST_CASE("summaries are affine equivariant") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 5 + static_cast<int>(rng.next() % 50);
    Eigen::VectorXd x(n);
    for (int i = 0; i < n; ++i) x[i] = rng.normal(0, 3);
    const double a = rng.uniform(-4.0, 4.0);
    if (std::abs(a) < 0.1) continue;
    const double b = rng.uniform(-10.0, 10.0);
    const SummaryStats sx = summarize(x);
    const SummaryStats sy = summarize((a * x.array() + b).matrix());
    CHECK(sy.mean == doctest::Approx(a * sx.mean + b).epsilon(1e-9));
    CHECK(sy.std == doctest::Approx(std::abs(a) * sx.std).epsilon(1e-9));
  }
}

TEST_CASE("iqr_outliers flags only the gross outlier") {
  Eigen::VectorXd v(11);
  v << 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 100;
  // Sorted order statistics give q25 = 3.5, q75 = 8.5, fences [-4, 16].
  const auto mask = iqr_outliers(v);
  for (int i = 0; i < 10; ++i) CHECK_FALSE(mask[i]);
  CHECK(mask[10]);
}

TEST_CASE("iqr_outliers on constants flags nothing") {
  Eigen::VectorXd v = Eigen::VectorXd::Constant(8, 3.25);
  CHECK((iqr_outliers(v).count()) == 0);
}

TEST_CASE("iqr_outliers with a huge multiplier flags nothing") {
  Eigen::VectorXd v(10);
  v << -5, -4, -3, -2, -1, 1, 2, 3, 4, 5;
  CHECK(iqr_outliers(v, 1e12).count() == 0);
}

TEST_CASE("iqr_outliers mask is shift invariant") {
  Rng rng(11);
  Eigen::VectorXd v(40);
  for (int i = 0; i < 40; ++i) v[i] = rng.normal(0, 2) + (i % 13 == 0 ? 25.0 : 0.0);
  const auto base = iqr_outliers(v);
  for (double shift : {-1e3, -1.0, 0.5, 1e4}) {
    const auto shifted = iqr_outliers((v.array() + shift).matrix());
    CHECK((shifted == base).all());
  }
}

TEST_CASE("iqr_outliers needs at least 4 values") {
  Eigen::VectorXd v(3);
  v << 1, 2, 3;
  CHECK_THROWS_AS(iqr_outliers(v), InsufficientDataError);
}

TEST_CASE("normal quantile inverts the cdf") {
  for (double p : {1e-6, 0.01, 0.1, 0.25, 0.5, 0.77, 0.95, 0.999, 1 - 1e-7}) {
    const double z = normal_quantile(p);
    CHECK(normal_cdf(z) == doctest::Approx(p).epsilon(1e-12));
    CHECK(z == doctest::Approx(probit_bisect(p)).epsilon(1e-10));
  }
}

TEST_CASE("ks statistic on exact plug-in quantiles is minimal") {
  const int n = 1000;
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) {
    v[i] = normal_quantile((static_cast<double>(i) + 0.5) / n);
  }
  const NormalityResult r = ks_normality(v, KsReference::StandardNormal);
  CHECK(r.statistic <= 0.5 / n + 1e-12);
}

TEST_CASE("ks accepts samples drawn from the fitted normal") {
  const Eigen::VectorXd v = normal_sample(10000, 135.68, 50.08, 20240501);
  const NormalityResult r = ks_normality(v, KsReference::FittedNormal);
  REQUIRE(r.p_value.has_value());
  CHECK(*r.p_value > 0.05);
  CHECK(r.appears_normal_5pct);
}

TEST_CASE("ks statistic stays within [0,1]") {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::VectorXd v(64);
    for (int i = 0; i < 64; ++i) v[i] = rng.uniform(-100.0, 100.0);
    for (KsReference ref : {KsReference::FittedNormal, KsReference::StandardNormal}) {
      const NormalityResult r = ks_normality(v, ref);
      CHECK(r.statistic >= 0.0);
      CHECK(r.statistic <= 1.0);
    }
  }
}

TEST_CASE("ks raw variant saturates on far-off-center data") {
  // Data living hundreds of sigmas from the standard normal: the statistic
  // approaches 1 against N(0,1) yet stays small against the fitted normal.
  const Eigen::VectorXd v = normal_sample(5000, 135.0, 50.0, 99);
  const NormalityResult raw = ks_normality(v, KsReference::StandardNormal);
  const NormalityResult fitted = ks_normality(v, KsReference::FittedNormal);
  CHECK(raw.statistic > 0.9);
  CHECK(*raw.p_value < 1e-6);
  CHECK(fitted.statistic < 0.05);
}

TEST_CASE("ks rejects zero variance") {
  Eigen::VectorXd v = Eigen::VectorXd::Constant(16, 2.0);
  CHECK_THROWS_AS(ks_normality(v), DegenerateDistributionError);
}

TEST_CASE("anderson-darling carries the fixed critical value table") {
  const Eigen::VectorXd v = normal_sample(256, 0, 1, 5);
  const NormalityResult r = anderson_darling(v);
  REQUIRE(r.critical_values.size() == 5);
  const double expected_sig[] = {15.0, 10.0, 5.0, 2.5, 1.0};
  const double expected_val[] = {0.576, 0.656, 0.787, 0.918, 1.092};
  for (int i = 0; i < 5; ++i) {
    CHECK(r.critical_values[static_cast<std::size_t>(i)].first == expected_sig[i]);
    CHECK(r.critical_values[static_cast<std::size_t>(i)].second == expected_val[i]);
  }
  CHECK_FALSE(r.p_value.has_value());
}

TEST_CASE("anderson-darling accepts a large true-normal sample") {
  const Eigen::VectorXd v = normal_sample(5000, 10.0, 2.5, 77);
  const NormalityResult r = anderson_darling(v);
  CHECK(r.statistic >= 0.0);
  CHECK(r.statistic < 0.787);
  CHECK(r.appears_normal_5pct);
}

TEST_CASE("anderson-darling rejects heavily skewed data") {
  Rng rng(13);
  Eigen::VectorXd v(5000);
  for (int i = 0; i < 5000; ++i) v[i] = -std::log(1.0 - rng.uniform());
  const NormalityResult r = anderson_darling(v);
  CHECK(r.statistic > 1.092);
  CHECK_FALSE(r.appears_normal_5pct);
}

TEST_CASE("anderson-darling rejects zero variance") {
  Eigen::VectorXd v = Eigen::VectorXd::Constant(16, 1.0);
  CHECK_THROWS_AS(anderson_darling(v), DegenerateDistributionError);
}

TEST_CASE("correlation of a column with itself and its negation") {
  Rng rng(17);
  Eigen::MatrixXd data(50, 2);
  for (int i = 0; i < 50; ++i) {
    data(i, 0) = rng.normal(0, 1);
    data(i, 1) = -data(i, 0);
  }
  const Eigen::MatrixXd corr = correlation_matrix(data);
  CHECK(corr(0, 0) == 1.0);
  CHECK(corr(1, 1) == 1.0);
  CHECK(corr(0, 1) == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(corr(1, 0) == corr(0, 1));
}

TEST_CASE("correlation matrix names the zero-variance column") {
  Eigen::MatrixXd data(10, 2);
  data.col(0).setLinSpaced(10, 0, 9);
  data.col(1).setConstant(4.0);
  CHECK_THROWS_WITH_AS(correlation_matrix(data, {"x", "flat"}),
                       doctest::Contains("flat"), SchemaError);
}

TEST_CASE("correlation matrices are positive semidefinite") {
  Rng rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    const int cols = 2 + static_cast<int>(rng.next() % 6);
    Eigen::MatrixXd data(30, cols);
    for (int i = 0; i < data.size(); ++i) data(i / cols, i % cols) = rng.normal(0, 1);
    const Eigen::MatrixXd corr = correlation_matrix(data);
    CHECK((corr - corr.transpose()).cwiseAbs().maxCoeff() == 0.0);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(corr);
    CHECK(eig.eigenvalues().minCoeff() >= -1e-9);
  }
}

TEST_CASE("histogram bins cover every value exactly once") {
  Rng rng(29);
  Eigen::VectorXd v(500);
  for (int i = 0; i < 500; ++i) v[i] = rng.normal(3, 2);
  const auto bins = histogram(v, 50);
  REQUIRE(bins.size() == 50);
  std::int64_t total = 0;
  for (const auto& b : bins) {
    CHECK(b.right > b.left);
    total += b.count;
  }
  CHECK(total == 500);
  CHECK(bins.front().left == v.minCoeff());
  CHECK(bins.back().right == v.maxCoeff());
}
