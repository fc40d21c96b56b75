#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "metersentry/errors.hpp"
#include "metersentry/rng.hpp"
#include "metersentry/scoring.hpp"
#include "test_util.hpp"

using namespace metersentry;
using namespace metersentry::scoring;

namespace {

// Model with the given covariance and zero ridge, bypassing fit_gaussian.
GaussianModel exact_model(const Eigen::VectorXd& mu, const Eigen::MatrixXd& sigma) {
  GaussianModel m;
  m.mu = mu;
  m.sigma = sigma;
  m.lambda = 0.0;
  m.chol = Eigen::LLT<Eigen::MatrixXd>(sigma).matrixL();
  return m;
}

Eigen::MatrixXd random_spd(Eigen::Index d, Rng& rng) {
  Eigen::MatrixXd a(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) a(i, j) = rng.normal(0, 1);
  }
  return a * a.transpose() + 0.5 * Eigen::MatrixXd::Identity(d, d);
}

}  // namespace

TEST_CASE("reconstruction error of identical windows is zero") {
  Eigen::VectorXd w(5);
  w << 1, 2, 3, 4, 5;
  CHECK(reconstruction_error(w, w) == 0.0);
}

TEST_CASE("reconstruction error averages squared differences") {
  Eigen::VectorXd a(3), b(3);
  a << 1, 2, 3;
  b << 1, 2, 6;
  CHECK(reconstruction_error(a, b) == 3.0);
}

TEST_CASE("reconstruction error is symmetric") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd a(8), b(8);
    for (int i = 0; i < 8; ++i) {
      a[i] = rng.normal(0, 2);
      b[i] = rng.normal(0, 2);
    }
    CHECK(reconstruction_error(a, b) == reconstruction_error(b, a));
  }
}

TEST_CASE("reconstruction error rejects mismatched lengths") {
  Eigen::VectorXd a(3), b(4);
  a.setZero();
  b.setZero();
  CHECK_THROWS_AS(reconstruction_error(a, b), ShapeError);
}

TEST_CASE("fit_gaussian survives perfectly collinear features") {
  Rng rng(3);
  Eigen::MatrixXd rows(200, 3);
  for (int i = 0; i < 200; ++i) {
    rows(i, 0) = rng.normal(0, 1);
    rows(i, 1) = 2.0 * rows(i, 0);  // collinear
    rows(i, 2) = rng.normal(5, 2);
  }
  const GaussianModel model = fit_gaussian(rows);
  CHECK(model.lambda > 0.0);
  // The factor reproduces sigma + lambda*I.
  const Eigen::MatrixXd reconstructed =
      model.chol * model.chol.transpose() -
      model.lambda * Eigen::MatrixXd::Identity(3, 3);
  CHECK((reconstructed - model.sigma).cwiseAbs().maxCoeff() <
        1e-8 * model.sigma.cwiseAbs().maxCoeff());
}

TEST_CASE("fit_gaussian recovers a known diagonal covariance") {
  const Eigen::VectorXd diag = (Eigen::VectorXd(7) << 4, 1, 2, 0.5, 3, 1.5, 2.5).finished();
  Rng rng(20240502);
  Eigen::MatrixXd rows(100000, 7);
  for (int i = 0; i < rows.rows(); ++i) {
    for (int j = 0; j < 7; ++j) rows(i, j) = rng.normal(0, std::sqrt(diag[j]));
  }
  const GaussianModel model = fit_gaussian(rows);
  for (int j = 0; j < 7; ++j) {
    CHECK(model.sigma(j, j) == doctest::Approx(diag[j]).epsilon(0.05));
  }
}

TEST_CASE("fit_gaussian handles constant columns through the ridge") {
  Rng rng(7);
  Eigen::MatrixXd rows(100, 2);
  for (int i = 0; i < 100; ++i) {
    rows(i, 0) = rng.normal(0, 1);
    rows(i, 1) = 3.25;  // constant (a holiday flag outside holidays)
  }
  const GaussianModel model = fit_gaussian(rows);
  CHECK(model.mu[1] == doctest::Approx(3.25).epsilon(1e-12));
  CHECK(model.sigma(1, 1) <= model.lambda);
}

TEST_CASE("mahalanobis distance of the mean is exactly zero") {
  Rng rng(9);
  const Eigen::MatrixXd sigma = random_spd(7, rng);
  Eigen::VectorXd mu(7);
  for (int i = 0; i < 7; ++i) mu[i] = rng.normal(0, 3);
  const GaussianModel model = exact_model(mu, sigma);
  CHECK(mahalanobis(mu, model) == 0.0);
}

TEST_CASE("mahalanobis reduces to euclidean distance under identity covariance") {
  const GaussianModel model =
      exact_model(Eigen::VectorXd::Zero(7), Eigen::MatrixXd::Identity(7, 7));
  Eigen::VectorXd x = Eigen::VectorXd::Zero(7);
  x[0] = 3;
  x[1] = 4;
  CHECK(mahalanobis(x, model) == doctest::Approx(5.0).epsilon(1e-14));
}

TEST_CASE("cholesky path matches the explicit inverse on random spd matrices") {
  Rng rng(20240503);
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Index d = 2 + static_cast<Eigen::Index>(rng.next() % 6);
    const Eigen::MatrixXd sigma = random_spd(d, rng);
    Eigen::VectorXd mu(d), x(d);
    for (Eigen::Index i = 0; i < d; ++i) {
      mu[i] = rng.normal(0, 2);
      x[i] = rng.normal(0, 4);
    }
    const GaussianModel model = exact_model(mu, sigma);
    const double md = mahalanobis(x, model);
    const double quad = (x - mu).dot(sigma.inverse() * (x - mu));
    CHECK(md * md == doctest::Approx(quad).epsilon(1e-8));
  }
}

TEST_CASE("mahalanobis is invariant under a feature rescaling") {
  Rng rng(31);
  Eigen::MatrixXd rows(500, 4);
  for (int i = 0; i < 500; ++i) {
    for (int j = 0; j < 4; ++j) rows(i, j) = rng.normal(j, 1.0 + j);
  }
  Eigen::VectorXd x(4);
  for (int j = 0; j < 4; ++j) x[j] = rng.normal(0, 2);

  auto sample_model = [](const Eigen::MatrixXd& data) {
    const Eigen::VectorXd mu = data.colwise().mean();
    const Eigen::MatrixXd centered = data.rowwise() - mu.transpose();
    const Eigen::MatrixXd sigma =
        centered.transpose() * centered / static_cast<double>(data.rows() - 1);
    return exact_model(mu, sigma);
  };

  const double base = mahalanobis(x, sample_model(rows));
  for (double c : {7.0, -0.25, 1e3}) {
    Eigen::MatrixXd scaled = rows;
    scaled.col(2) *= c;
    Eigen::VectorXd xs = x;
    xs[2] *= c;
    const double scaled_md = mahalanobis(xs, sample_model(scaled));
    CHECK(std::abs(scaled_md - base) <= 1e-8 * (1.0 + base));
  }
}

TEST_CASE("squared distance of in-distribution samples averages the dimension") {
  Rng rng(20240504);
  Eigen::MatrixXd rows(2000, 7);
  const Eigen::MatrixXd shape = random_spd(7, rng);
  const Eigen::MatrixXd l = Eigen::LLT<Eigen::MatrixXd>(shape).matrixL();
  for (int i = 0; i < rows.rows(); ++i) {
    Eigen::VectorXd z(7);
    for (int j = 0; j < 7; ++j) z[j] = rng.normal();
    rows.row(i) = (l * z).transpose();
  }
  const GaussianModel model = fit_gaussian(rows);

  double sum_sq = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd z(7);
    for (int j = 0; j < 7; ++j) z[j] = rng.normal();
    const Eigen::VectorXd x = model.mu + model.chol * z;
    const double md = mahalanobis(x, model);
    sum_sq += md * md;
  }
  CHECK(sum_sq / n == doctest::Approx(7.0).epsilon(0.10));
}

TEST_CASE("combined score is the exact sum") {
  CHECK(combined_score(0.5, 2.0) == 2.5);
  CHECK(combined_score(0.0, 0.0) == 0.0);
}

TEST_CASE("combined score dominates both addends") {
  Rng rng(13);
  for (int i = 0; i < 50; ++i) {
    const double mse = rng.uniform(0.0, 10.0);
    const double md = rng.uniform(0.0, 10.0);
    const double cs = combined_score(mse, md);
    CHECK(cs >= std::max(mse, md));
    CHECK(cs == mse + md);
  }
}

TEST_CASE("combined score rejects negative or non-finite inputs") {
  CHECK_THROWS_AS(combined_score(-0.1, 1.0), ContractError);
  CHECK_THROWS_AS(combined_score(1.0, -2.0), ContractError);
  CHECK_THROWS_AS(combined_score(std::nan(""), 1.0), ContractError);
}

namespace {

struct ScoredFixture {
  ingest::FeatureFrame frame;
  nn::ConvAutoencoder model;
  GaussianModel gaussian;
  nn::WindowSet windows;

  explicit ScoredFixture(int rows = 300, std::uint64_t seed = 23) {
    Rng rng(seed);
    frame = testutil::make_hourly_frame(rows, [&](Eigen::Index i) {
      return 100.0 + 20.0 * std::sin(2.0 * std::numbers::pi *
                                     static_cast<double>(i) / 24.0) +
             rng.normal(0, 3);
    });
    // Give the context columns some spread.
    for (Eigen::Index i = 0; i < frame.rows(); ++i) {
      frame.month_shift[i] = frame.consumption[i] * 0.9 + rng.normal(0, 1);
      frame.temperature[i] = 10.0 + rng.normal(0, 2);
    }
    model = nn::ConvAutoencoder::canonical();
    model.init_weights(seed);
    const nn::NormalizationConstants norm = nn::fit_normalization(frame.consumption);
    model.normalization = norm;
    windows = nn::make_windows(frame, 24, 1, norm);
    gaussian = fit_gaussian(frame.context_features());
  }
};

}  // namespace

TEST_CASE("score_series yields one ordered record per window") {
  const ScoredFixture fx;
  const auto records = score_series(fx.model, fx.gaussian, fx.frame, fx.windows);
  REQUIRE(static_cast<Eigen::Index>(records.size()) == fx.windows.windows.batch);
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (i > 0) CHECK(records[i].ts > records[i - 1].ts);
    CHECK(records[i].mse >= 0.0);
    CHECK(records[i].md >= 0.0);
    CHECK(records[i].cs == records[i].mse + records[i].md);
  }
}

TEST_CASE("scoring is pure") {
  const ScoredFixture fx;
  const auto a = score_series(fx.model, fx.gaussian, fx.frame, fx.windows);
  const auto b = score_series(fx.model, fx.gaussian, fx.frame, fx.windows);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].ts == b[i].ts);
    CHECK(a[i].mse == b[i].mse);
    CHECK(a[i].md == b[i].md);
    CHECK(a[i].cs == b[i].cs);
  }
}

TEST_CASE("score_series rejects misaligned windows") {
  const ScoredFixture fx;
  nn::WindowSet broken = fx.windows;
  broken.end_timestamps[5] += 1;
  CHECK_THROWS_AS(score_series(fx.model, fx.gaussian, fx.frame, broken),
                  AlignmentError);
}

TEST_CASE("reconstruction errors on normal data skew right after training") {
  ScoredFixture fx(24 * 15, 29);
  nn::TrainConfig config;
  config.epochs = 15;
  config.batch_size = 64;
  config.seed = 29;
  nn::train(fx.model, fx.windows, config);
  const auto records = score_series(fx.model, fx.gaussian, fx.frame, fx.windows);

  std::vector<double> mses;
  for (const auto& r : records) mses.push_back(r.mse);
  std::sort(mses.begin(), mses.end());
  const double median = mses[mses.size() / 2];
  const double mean =
      std::accumulate(mses.begin(), mses.end(), 0.0) / static_cast<double>(mses.size());
  CHECK(median < mean);
}

TEST_CASE("standardized variant recenters both addends") {
  const ScoredFixture fx;
  auto records = score_series(fx.model, fx.gaussian, fx.frame, fx.windows);
  const auto raw = records;
  standardize_scores(records);
  double mean_cs = 0.0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(records[i].mse == raw[i].mse);  // addends stay raw, only cs changes
    CHECK(records[i].md == raw[i].md);
    mean_cs += records[i].cs;
  }
  mean_cs /= static_cast<double>(records.size());
  CHECK(mean_cs == doctest::Approx(0.0).epsilon(1e-9));
}
