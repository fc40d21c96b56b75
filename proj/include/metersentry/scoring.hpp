#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <array>
#include <filesystem>
#include <span>
#include <vector>

#include "metersentry/calendar.hpp"
#include "metersentry/errors.hpp"
#include "metersentry/ingest.hpp"
#include "metersentry/neuralnet.hpp"

namespace metersentry::scoring {

/// Context feature order, fixed everywhere a GaussianModel is used.
inline constexpr std::array<const char*, 7> kContextFeatureNames = {
    "temperature", "holiday", "month_shift", "weekday", "hour", "month", "day"};

/// Mean vector and ridge-regularized covariance with its Cholesky factor.
struct GaussianModel {
  Eigen::VectorXd mu;
  Eigen::MatrixXd sigma;  // sample covariance
  Eigen::MatrixXd chol;   // lower factor of sigma + lambda*I
  double lambda = 0.0;

  Eigen::Index dim() const { return mu.size(); }
};

/// Mean squared elementwise difference (symmetric in its arguments).
double reconstruction_error(Eigen::Ref<const Eigen::VectorXd> original,
                            Eigen::Ref<const Eigen::VectorXd> reconstructed);

/// Column means and sample covariance of `rows`, factorized with a ridge that
/// starts at 1e-6 times the mean diagonal and escalates tenfold up to 1e-2 of
/// it if the factorization fails. Needs >= 8 rows.
GaussianModel fit_gaussian(const Eigen::MatrixXd& rows);

/// sqrt((x-mu)' (sigma+lambda I)^-1 (x-mu)) via a triangular solve against the
/// stored factor; the covariance is never explicitly inverted.
template <typename Derived>
double mahalanobis(const Eigen::MatrixBase<Derived>& x, const GaussianModel& model) {
  if (x.size() != model.dim()) {
    throw ShapeError("mahalanobis: point has " + std::to_string(x.size()) +
                     " entries, model expects " + std::to_string(model.dim()));
  }
  if (!x.allFinite()) {
    throw NumericError("mahalanobis: non-finite input");
  }
  const Eigen::VectorXd diff = x - model.mu;
  return model.chol.template triangularView<Eigen::Lower>().solve(diff).norm();
}

/// Exact sum per the combined-score definition. Both addends must be
/// non-negative and finite.
double combined_score(double mse, double md);

struct ScoreRecord {
  UnixTime ts = 0;
  double mse = 0;
  double md = 0;
  double cs = 0;
};

/// One record per window, ordered by timestamp. Reconstruction runs in
/// inference mode one window at a time so batch scoring and streaming produce
/// bit-identical numbers. Context features come from the window-end frame row.
std::vector<ScoreRecord> score_series(const nn::ConvAutoencoder& model,
                                      const GaussianModel& gaussian,
                                      const ingest::FeatureFrame& frame,
                                      const nn::WindowSet& windows);

/// Scores one standardized window that ends at `row`. The workhorse shared by
/// score_series and the streaming detector.
ScoreRecord score_window(const nn::ConvAutoencoder& model,
                         const GaussianModel& gaussian,
                         Eigen::Ref<const Eigen::VectorXd> standardized_window,
                         const ingest::FeatureRow& end_row);

/// Optional variant: replaces cs with z(mse) + z(md), both standardized over
/// the scored batch. Off by default; requires >= 2 records and nonzero
/// spread in both columns. Resulting cs values may be negative.
void standardize_scores(std::span<ScoreRecord> records);

/// JSON persistence for the context model. The stored feature-name list must
/// match kContextFeatureNames on load; the Cholesky factor is recomputed from
/// the round-tripped sigma and lambda, so loading is bit-stable.
void save_gaussian(const GaussianModel& model, const std::filesystem::path& path);
GaussianModel load_gaussian(const std::filesystem::path& path);

}  // namespace metersentry::scoring
