#include "metersentry/scoring.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

namespace metersentry::scoring {

double reconstruction_error(Eigen::Ref<const Eigen::VectorXd> original,
                            Eigen::Ref<const Eigen::VectorXd> reconstructed) {
  if (original.size() != reconstructed.size()) {
    throw ShapeError("reconstruction_error: length mismatch (" +
                     std::to_string(original.size()) + " vs " +
                     std::to_string(reconstructed.size()) + ")");
  }
  if (original.size() == 0) {
    throw ShapeError("reconstruction_error: empty windows");
  }
  return (original - reconstructed).squaredNorm() /
         static_cast<double>(original.size());
}

GaussianModel fit_gaussian(const Eigen::MatrixXd& rows) {
  const Eigen::Index n = rows.rows();
  const Eigen::Index d = rows.cols();
  if (n < 8) {
    throw InsufficientDataError("fit_gaussian needs at least 8 rows, got " +
                                std::to_string(n));
  }
  if (!rows.allFinite()) {
    throw NumericError("fit_gaussian: non-finite input");
  }

  GaussianModel model;
  model.mu = rows.colwise().mean();
  const Eigen::MatrixXd centered = rows.rowwise() - model.mu.transpose();
  model.sigma = centered.transpose() * centered / static_cast<double>(n - 1);

  double mean_diag = model.sigma.trace() / static_cast<double>(d);
  if (mean_diag <= 0.0) mean_diag = 1.0;  // all-constant columns
  for (double scale = 1e-6; scale <= 1e-2 + 1e-12; scale *= 10.0) {
    const double lambda = scale * mean_diag;
    const Eigen::MatrixXd ridged =
        model.sigma + lambda * Eigen::MatrixXd::Identity(d, d);
    const Eigen::LLT<Eigen::MatrixXd> llt(ridged);
    if (llt.info() == Eigen::Success) {
      model.lambda = lambda;
      model.chol = llt.matrixL();
      return model;
    }
  }
  throw SingularCovarianceError(
      "covariance not factorizable even at the maximum ridge");
}

double combined_score(double mse, double md) {
  if (!(mse >= 0.0) || !(md >= 0.0) || !std::isfinite(mse) || !std::isfinite(md)) {
    throw ContractError("combined_score: addends must be finite and non-negative");
  }
  return mse + md;
}

ScoreRecord score_window(const nn::ConvAutoencoder& model,
                         const GaussianModel& gaussian,
                         Eigen::Ref<const Eigen::VectorXd> standardized_window,
                         const ingest::FeatureRow& end_row) {
  nn::Tensor3 input = nn::Tensor3::zeros(1, standardized_window.size(), 1);
  input.data.col(0) = standardized_window;
  const nn::Tensor3 recon = model.infer(input);

  ScoreRecord rec;
  rec.ts = end_row.ts;
  rec.mse = reconstruction_error(input.data.col(0), recon.data.col(0));
  rec.md = mahalanobis(end_row.context(), gaussian);
  rec.cs = combined_score(rec.mse, rec.md);
  return rec;
}

std::vector<ScoreRecord> score_series(const nn::ConvAutoencoder& model,
                                      const GaussianModel& gaussian,
                                      const ingest::FeatureFrame& frame,
                                      const nn::WindowSet& windows) {
  const Eigen::Index n = windows.windows.batch;
  const Eigen::Index length = windows.windows.length;
  std::vector<ScoreRecord> records;
  records.reserve(static_cast<std::size_t>(n));
  for (Eigen::Index w = 0; w < n; ++w) {
    const Eigen::Index end_row = windows.end_rows[static_cast<std::size_t>(w)];
    if (end_row >= frame.rows() ||
        frame.timestamps[static_cast<std::size_t>(end_row)] !=
            windows.end_timestamps[static_cast<std::size_t>(w)]) {
      throw AlignmentError(
          "window end " +
          format_iso8601_utc(windows.end_timestamps[static_cast<std::size_t>(w)]) +
          " has no matching frame row");
    }
    records.push_back(score_window(model, gaussian,
                                   windows.windows.data.col(0).segment(w * length, length),
                                   ingest::frame_row(frame, end_row)));
  }
  return records;
}

void standardize_scores(std::span<ScoreRecord> records) {
  const std::size_t n = records.size();
  if (n < 2) {
    throw InsufficientDataError("standardize_scores needs at least 2 records");
  }
  double mse_mean = 0, md_mean = 0;
  for (const ScoreRecord& r : records) {
    mse_mean += r.mse;
    md_mean += r.md;
  }
  mse_mean /= static_cast<double>(n);
  md_mean /= static_cast<double>(n);
  double mse_ss = 0, md_ss = 0;
  for (const ScoreRecord& r : records) {
    mse_ss += (r.mse - mse_mean) * (r.mse - mse_mean);
    md_ss += (r.md - md_mean) * (r.md - md_mean);
  }
  const double mse_std = std::sqrt(mse_ss / static_cast<double>(n - 1));
  const double md_std = std::sqrt(md_ss / static_cast<double>(n - 1));
  if (mse_std == 0.0 || md_std == 0.0) {
    throw DegenerateDistributionError(
        "standardize_scores: a score column has zero spread");
  }
  for (ScoreRecord& r : records) {
    r.cs = (r.mse - mse_mean) / mse_std + (r.md - md_mean) / md_std;
  }
}

void save_gaussian(const GaussianModel& model, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["feature_names"] = kContextFeatureNames;
  j["mu"] = std::vector<double>(model.mu.data(), model.mu.data() + model.mu.size());
  nlohmann::ordered_json sigma = nlohmann::ordered_json::array();
  for (Eigen::Index r = 0; r < model.sigma.rows(); ++r) {
    std::vector<double> row(model.sigma.cols());
    for (Eigen::Index c = 0; c < model.sigma.cols(); ++c) row[c] = model.sigma(r, c);
    sigma.push_back(row);
  }
  j["sigma"] = sigma;
  j["lambda"] = model.lambda;

  std::ofstream out(path);
  if (!out) throw IoError("cannot write file: " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

GaussianModel load_gaussian(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open file: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("invalid gaussian file " + path.string() + ": " + e.what());
  }
  try {
    const auto names = j.at("feature_names").get<std::vector<std::string>>();
    if (names.size() != kContextFeatureNames.size()) {
      throw SchemaError("gaussian file has " + std::to_string(names.size()) +
                        " features, expected 7: " + path.string());
    }
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (names[i] != kContextFeatureNames[i]) {
        throw SchemaError("gaussian feature order mismatch at '" + names[i] +
                          "': " + path.string());
      }
    }
    GaussianModel model;
    const auto mu = j.at("mu").get<std::vector<double>>();
    const Eigen::Index d = static_cast<Eigen::Index>(mu.size());
    model.mu = Eigen::Map<const Eigen::VectorXd>(mu.data(), d);
    model.sigma.resize(d, d);
    const auto& sigma = j.at("sigma");
    if (static_cast<Eigen::Index>(sigma.size()) != d) {
      throw SchemaError("gaussian sigma is not square: " + path.string());
    }
    for (Eigen::Index r = 0; r < d; ++r) {
      const auto row = sigma.at(static_cast<std::size_t>(r)).get<std::vector<double>>();
      if (static_cast<Eigen::Index>(row.size()) != d) {
        throw SchemaError("gaussian sigma is not square: " + path.string());
      }
      for (Eigen::Index c = 0; c < d; ++c) model.sigma(r, c) = row[c];
    }
    model.lambda = j.at("lambda").get<double>();
    const Eigen::LLT<Eigen::MatrixXd> llt(
        model.sigma + model.lambda * Eigen::MatrixXd::Identity(d, d));
    if (llt.info() != Eigen::Success) {
      throw SingularCovarianceError("stored covariance does not factor: " +
                                    path.string());
    }
    model.chol = llt.matrixL();
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("invalid gaussian file " + path.string() + ": " + e.what());
  }
}

}  // namespace metersentry::scoring
