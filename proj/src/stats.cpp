#include "metersentry/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "metersentry/errors.hpp"

namespace metersentry::stats {

namespace {

Eigen::VectorXd sorted_copy(Eigen::Ref<const Eigen::VectorXd> values) {
  Eigen::VectorXd s = values;
  std::sort(s.data(), s.data() + s.size());
  return s;
}

void require_finite(Eigen::Ref<const Eigen::VectorXd> values, const char* op) {
  if (!values.allFinite()) {
    throw NumericError(std::string(op) + ": input contains non-finite values");
  }
}

double sample_std(Eigen::Ref<const Eigen::VectorXd> values, double mean) {
  const Eigen::Index n = values.size();
  if (n < 2) return 0.0;
  const double ss = (values.array() - mean).square().sum();
  return std::sqrt(ss / static_cast<double>(n - 1));
}

}  // namespace

double quantile_sorted(Eigen::Ref<const Eigen::VectorXd> sorted, double p) {
  const Eigen::Index n = sorted.size();
  if (n == 0) {
    throw InsufficientDataError("quantile of empty input");
  }
  if (n == 1) return sorted[0];
  const double h = p * static_cast<double>(n - 1);
  const Eigen::Index lo = static_cast<Eigen::Index>(std::floor(h));
  if (lo >= n - 1) return sorted[n - 1];
  const double frac = h - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

SummaryStats summarize(Eigen::Ref<const Eigen::VectorXd> values) {
  if (values.size() == 0) {
    throw InsufficientDataError("summarize: empty input");
  }
  require_finite(values, "summarize");
  const Eigen::VectorXd s = sorted_copy(values);
  SummaryStats out;
  out.count = values.size();
  out.mean = values.mean();
  out.std = sample_std(values, out.mean);
  out.min = s[0];
  out.max = s[s.size() - 1];
  out.q25 = quantile_sorted(s, 0.25);
  out.median = quantile_sorted(s, 0.50);
  out.q75 = quantile_sorted(s, 0.75);
  return out;
}

Eigen::Array<bool, Eigen::Dynamic, 1> iqr_outliers(
    Eigen::Ref<const Eigen::VectorXd> values, double k) {
  if (values.size() < 4) {
    throw InsufficientDataError("iqr_outliers needs at least 4 values, got " +
                                std::to_string(values.size()));
  }
  require_finite(values, "iqr_outliers");
  const Eigen::VectorXd s = sorted_copy(values);
  const double q25 = quantile_sorted(s, 0.25);
  const double q75 = quantile_sorted(s, 0.75);
  const double iqr = q75 - q25;
  const double lo = q25 - k * iqr;
  const double hi = q75 + k * iqr;
  return values.array() < lo || values.array() > hi;
}

// ---------------------------------------------------------------------------
// Normal distribution helpers
// ---------------------------------------------------------------------------

double normal_cdf(double z) {
  return 0.5 * std::erfc(-z / std::numbers::sqrt2);
}

namespace {

double normal_pdf(double z) {
  constexpr double inv_sqrt_2pi = 0.3989422804014326779;
  return inv_sqrt_2pi * std::exp(-0.5 * z * z);
}

// Acklam's rational approximation for the probit function.
double normal_quantile_approx(double p) {
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
           (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  }
  const double q = std::sqrt(-2.0 * std::log(1.0 - p));
  return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
         ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
}

}  // namespace

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    if (p == 0.0) return -std::numeric_limits<double>::infinity();
    if (p == 1.0) return std::numeric_limits<double>::infinity();
    throw ContractError("normal_quantile: p outside [0,1]");
  }
  double z = normal_quantile_approx(p);
  // Two Halley refinements drive the residual to machine precision.
  for (int i = 0; i < 2; ++i) {
    const double e = normal_cdf(z) - p;
    const double u = e / normal_pdf(z);
    z -= u / (1.0 + 0.5 * z * u);
  }
  return z;
}

// ---------------------------------------------------------------------------
// Kolmogorov-Smirnov
// ---------------------------------------------------------------------------

namespace {

// Asymptotic Kolmogorov survival function, series capped at 100 terms with a
// 1e-10 stopping tolerance.
double kolmogorov_sf(double lambda) {
  if (lambda <= 0.0) return 1.0;
  double sum = 0.0;
  double sign = 1.0;
  for (int j = 1; j <= 100; ++j) {
    const double term = std::exp(-2.0 * j * j * lambda * lambda);
    sum += sign * term;
    if (term < 1e-10) break;
    sign = -sign;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

}  // namespace

NormalityResult ks_normality(Eigen::Ref<const Eigen::VectorXd> values,
                             KsReference reference) {
  const Eigen::Index n = values.size();
  if (n < 8) {
    throw InsufficientDataError("ks_normality needs at least 8 values, got " +
                                std::to_string(n));
  }
  require_finite(values, "ks_normality");

  Eigen::VectorXd z = sorted_copy(values);
  if (reference == KsReference::FittedNormal) {
    const double mean = z.mean();
    const double sd = sample_std(z, mean);
    if (sd == 0.0) {
      throw DegenerateDistributionError("ks_normality: zero variance");
    }
    z = (z.array() - mean) / sd;
  }

  double d = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double f = normal_cdf(z[i]);
    const double upper = static_cast<double>(i + 1) / static_cast<double>(n) - f;
    const double lower = f - static_cast<double>(i) / static_cast<double>(n);
    d = std::max({d, upper, lower});
  }

  const double sqrt_n = std::sqrt(static_cast<double>(n));
  const double lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;

  NormalityResult out;
  out.statistic = d;
  out.p_value = kolmogorov_sf(lambda);
  out.appears_normal_5pct = *out.p_value > 0.05;
  return out;
}

// ---------------------------------------------------------------------------
// Anderson-Darling
// ---------------------------------------------------------------------------

NormalityResult anderson_darling(Eigen::Ref<const Eigen::VectorXd> values) {
  const Eigen::Index n = values.size();
  if (n < 8) {
    throw InsufficientDataError("anderson_darling needs at least 8 values, got " +
                                std::to_string(n));
  }
  require_finite(values, "anderson_darling");

  Eigen::VectorXd z = sorted_copy(values);
  const double mean = z.mean();
  const double sd = sample_std(z, mean);
  if (sd == 0.0) {
    throw DegenerateDistributionError("anderson_darling: zero variance");
  }
  z = (z.array() - mean) / sd;

  const double nd = static_cast<double>(n);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    // Clamp probabilities away from 0/1 so the logs stay finite.
    const double p_lo = std::clamp(normal_cdf(z[i]), 1e-300, 1.0 - 1e-16);
    const double p_hi = std::clamp(normal_cdf(z[n - 1 - i]), 1e-300, 1.0 - 1e-16);
    acc += (2.0 * static_cast<double>(i) + 1.0) *
           (std::log(p_lo) + std::log1p(-p_hi));
  }
  const double a2 = -nd - acc / nd;
  const double corrected = a2 * (1.0 + 0.75 / nd + 2.25 / (nd * nd));

  NormalityResult out;
  out.statistic = corrected;
  out.critical_values = {{15.0, 0.576}, {10.0, 0.656}, {5.0, 0.787},
                         {2.5, 0.918},  {1.0, 1.092}};
  out.appears_normal_5pct = corrected < 0.787;
  return out;
}

// ---------------------------------------------------------------------------
// Correlation
// ---------------------------------------------------------------------------

Eigen::MatrixXd correlation_matrix(const Eigen::MatrixXd& data,
                                   const std::vector<std::string>& names) {
  const Eigen::Index n = data.rows();
  const Eigen::Index d = data.cols();
  if (n < 2) {
    throw InsufficientDataError("correlation_matrix needs at least 2 rows, got " +
                                std::to_string(n));
  }
  if (!data.allFinite()) {
    throw NumericError("correlation_matrix: non-finite input");
  }

  const Eigen::MatrixXd centered = data.rowwise() - data.colwise().mean();
  const Eigen::VectorXd norms = centered.colwise().norm();
  for (Eigen::Index j = 0; j < d; ++j) {
    if (norms[j] == 0.0) {
      const std::string name = static_cast<std::size_t>(j) < names.size()
                                   ? names[static_cast<std::size_t>(j)]
                                   : std::to_string(j);
      throw SchemaError("correlation_matrix: column '" + name +
                        "' has zero variance");
    }
  }

  Eigen::MatrixXd corr(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    corr(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < d; ++j) {
      const double r = centered.col(i).dot(centered.col(j)) / (norms[i] * norms[j]);
      corr(i, j) = r;
      corr(j, i) = r;
    }
  }
  return corr;
}

// ---------------------------------------------------------------------------
// Histogram
// ---------------------------------------------------------------------------

std::vector<HistogramBin> histogram(Eigen::Ref<const Eigen::VectorXd> values,
                                    int bins) {
  if (bins < 1) {
    throw ContractError("histogram: bins must be >= 1");
  }
  if (values.size() == 0) {
    throw InsufficientDataError("histogram: empty input");
  }
  require_finite(values, "histogram");
  const double lo = values.minCoeff();
  double hi = values.maxCoeff();
  if (hi == lo) hi = lo + 1.0;  // degenerate range: single populated bin
  const double width = (hi - lo) / static_cast<double>(bins);

  std::vector<HistogramBin> out(static_cast<std::size_t>(bins));
  for (int b = 0; b < bins; ++b) {
    out[static_cast<std::size_t>(b)].left = lo + width * b;
    out[static_cast<std::size_t>(b)].right = lo + width * (b + 1);
  }
  out.back().right = hi;
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    int b = static_cast<int>((values[i] - lo) / width);
    b = std::clamp(b, 0, bins - 1);
    out[static_cast<std::size_t>(b)].count += 1;
  }
  return out;
}

}  // namespace metersentry::stats
