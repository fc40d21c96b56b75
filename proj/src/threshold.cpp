#include "metersentry/threshold.hpp"

#include <cmath>
#include <limits>

#include "metersentry/errors.hpp"

namespace metersentry::threshold {

ThresholdState::ThresholdState(Index window_size, double k)
    : w_(window_size), k_(k) {
  if (window_size < 1) {
    throw ContractError("threshold window size must be >= 1");
  }
  if (!std::isfinite(k)) {
    throw ContractError("threshold multiplier must be finite");
  }
  buffer_.resize(static_cast<std::size_t>(window_size), 0.0);
}

void ThresholdState::reset() {
  head_ = 0;
  count_ = 0;
}

ThresholdState::MovingStats ThresholdState::moving_stats() const {
  if (count_ == 0) {
    throw StateError("moving_stats on an empty buffer (still warming up)");
  }
  // Two-pass recomputation over at most w values: numerically stable and
  // immune to eviction drift.
  double sum = 0.0;
  for (Index i = 0; i < count_; ++i) sum += buffer_[static_cast<std::size_t>(i)];
  const double mean = sum / static_cast<double>(count_);
  double ss = 0.0;
  for (Index i = 0; i < count_; ++i) {
    const double d = buffer_[static_cast<std::size_t>(i)] - mean;
    ss += d * d;
  }
  return MovingStats{mean, std::sqrt(ss / static_cast<double>(count_))};
}

ThresholdState::PushResult ThresholdState::push(double score) {
  if (!std::isfinite(score)) {
    throw NumericError("threshold push: non-finite score");
  }
  PushResult result;
  if (count_ < w_) {
    result.threshold = std::numeric_limits<double>::infinity();
    result.is_anomaly = false;
  } else {
    const MovingStats stats = moving_stats();
    result.threshold = stats.mean + k_ * stats.std;
    result.is_anomaly = score > result.threshold;  // strict
  }
  // Insert after the decision, evicting the oldest when full.
  buffer_[static_cast<std::size_t>(head_)] = score;
  head_ = (head_ + 1) % w_;
  if (count_ < w_) count_ += 1;
  return result;
}

std::vector<AnomalyRecord> detect(std::span<const scoring::ScoreRecord> records,
                                  Index w, double k, DetectSummary* summary) {
  for (std::size_t i = 1; i < records.size(); ++i) {
    if (records[i].ts <= records[i - 1].ts) {
      throw OrderingError("score records out of order at " +
                          format_iso8601_utc(records[i].ts));
    }
  }
  ThresholdState state(w, k);
  std::vector<AnomalyRecord> out;
  out.reserve(records.size());
  std::int64_t flagged = 0;
  for (const scoring::ScoreRecord& r : records) {
    const ThresholdState::PushResult p = state.push(r.cs);
    out.push_back(AnomalyRecord{r.ts, r.cs, p.threshold, r.mse, r.md, p.is_anomaly});
    flagged += p.is_anomaly ? 1 : 0;
  }
  if (summary != nullptr) {
    summary->records = static_cast<std::int64_t>(records.size());
    summary->flagged = flagged;
    summary->w = w;
    summary->k = k;
  }
  return out;
}

StreamSummary stream_detect(const nn::ConvAutoencoder& model,
                            const scoring::GaussianModel& gaussian,
                            const FeatureRowSource& source, Index w, double k,
                            StreamSink& sink, std::int64_t expected_interval,
                            Index window_length) {
  ThresholdState state(w, k);
  const nn::NormalizationConstants norm = model.normalization;
  if (norm.std == 0.0 || !std::isfinite(norm.std)) {
    throw DegenerateDistributionError(
        "stream_detect: model carries no usable normalization constants");
  }

  // Rolling standardized window, filled oldest-to-newest.
  Eigen::VectorXd window(window_length);
  Index filled = 0;
  bool have_prev = false;
  UnixTime prev_ts = 0;

  StreamSummary summary;
  while (true) {
    const std::optional<ingest::FeatureRow> next = source();
    if (!next.has_value()) break;
    const ingest::FeatureRow& row = *next;
    summary.rows += 1;

    if (have_prev) {
      if (row.ts <= prev_ts) {
        throw OrderingError("stream rows out of order at " +
                            format_iso8601_utc(row.ts));
      }
      if (row.ts - prev_ts != expected_interval) {
        // Stale context: restart the input window at this row.
        filled = 0;
        summary.resets += 1;
        sink.on_reset(row.ts);
      }
    }
    have_prev = true;
    prev_ts = row.ts;

    if (filled == window_length) {
      window.head(window_length - 1) = window.tail(window_length - 1).eval();
      filled -= 1;
    }
    window[filled] = (row.consumption - norm.mean) / norm.std;
    filled += 1;
    if (filled < window_length) continue;

    const scoring::ScoreRecord score =
        scoring::score_window(model, gaussian, window, row);
    const ThresholdState::PushResult p = state.push(score.cs);
    summary.records += 1;
    summary.flagged += p.is_anomaly ? 1 : 0;
    sink.on_record(AnomalyRecord{score.ts, score.cs, p.threshold, score.mse,
                                 score.md, p.is_anomaly});
  }
  return summary;
}

}  // namespace metersentry::threshold
