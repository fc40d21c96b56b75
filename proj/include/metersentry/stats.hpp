#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace metersentry::stats {

struct SummaryStats {
  Eigen::Index count = 0;
  double mean = 0, std = 0;  // sample standard deviation (n-1)
  double min = 0, max = 0;
  double q25 = 0, median = 0, q75 = 0;
};

/// Quantiles interpolate linearly between closest order statistics
/// (h = (n-1)p). Throws InsufficientDataError on empty input.
SummaryStats summarize(Eigen::Ref<const Eigen::VectorXd> values);

/// Linear-interpolation quantile of an already sorted vector, p in [0,1].
double quantile_sorted(Eigen::Ref<const Eigen::VectorXd> sorted, double p);

/// mask[i] = value lies outside [q25 - k*IQR, q75 + k*IQR]. Needs >= 4 values.
Eigen::Array<bool, Eigen::Dynamic, 1> iqr_outliers(
    Eigen::Ref<const Eigen::VectorXd> values, double k = 1.5);

struct NormalityResult {
  double statistic = 0;
  std::optional<double> p_value;  // absent for Anderson-Darling
  std::vector<std::pair<double, double>> critical_values;  // (significance %, value)
  bool appears_normal_5pct = false;
};

enum class KsReference {
  FittedNormal,    // normal with the sample's mean and std
  StandardNormal,  // N(0,1), data used as-is
};

/// One-sample Kolmogorov-Smirnov statistic with the asymptotic p-value.
/// Needs >= 8 values; the fitted variant rejects zero variance.
NormalityResult ks_normality(Eigen::Ref<const Eigen::VectorXd> values,
                             KsReference reference = KsReference::FittedNormal);

/// Anderson-Darling A-squared with Stephens' small-sample correction,
/// checked against fixed critical values
/// [0.576, 0.656, 0.787, 0.918, 1.092] at [15, 10, 5, 2.5, 1] percent.
NormalityResult anderson_darling(Eigen::Ref<const Eigen::VectorXd> values);

/// Pearson correlations of the columns of `data`. Diagonal is exactly 1 and
/// the matrix is exactly symmetric. Zero-variance columns raise a SchemaError
/// naming the column (by `names` when given, by index otherwise).
Eigen::MatrixXd correlation_matrix(const Eigen::MatrixXd& data,
                                   const std::vector<std::string>& names = {});

struct HistogramBin {
  double left = 0, right = 0;
  std::int64_t count = 0;
};

/// Equal-width bins over [min, max]; the top edge is inclusive.
std::vector<HistogramBin> histogram(Eigen::Ref<const Eigen::VectorXd> values,
                                    int bins = 50);

/// Standard normal CDF and its inverse (accurate to ~1e-15).
double normal_cdf(double z);
double normal_quantile(double p);

}  // namespace metersentry::stats
