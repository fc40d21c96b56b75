#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "metersentry/calendar.hpp"
#include "metersentry/ingest.hpp"
#include "metersentry/neuralnet.hpp"
#include "metersentry/scoring.hpp"

namespace metersentry::threshold {

using Eigen::Index;

/// Sliding window of the last w combined scores driving the dynamic
/// threshold: threshold = mean + k * population-std of the buffered scores,
/// always computed *before* the incoming score is inserted so a spike cannot
/// raise its own bar. While the buffer is filling the threshold is +infinity
/// and nothing is flagged. Single-writer sequential state.
class ThresholdState {
 public:
  ThresholdState(Index window_size, double k);

  struct PushResult {
    double threshold = 0;
    bool is_anomaly = false;
  };

  /// Throws NumericError on a non-finite score.
  PushResult push(double score);

  struct MovingStats {
    double mean = 0;
    double std = 0;  // population
  };

  /// Stats of the current buffer; throws StateError while the buffer is empty.
  MovingStats moving_stats() const;

  Index size() const { return count_; }
  Index window_size() const { return w_; }
  double k() const { return k_; }
  void reset();

 private:
  Index w_;
  double k_;
  std::vector<double> buffer_;  // ring
  Index head_ = 0;
  Index count_ = 0;
};

struct AnomalyRecord {
  UnixTime ts = 0;
  double cs = 0;
  double threshold = 0;  // +infinity during warm-up
  double mse = 0;
  double md = 0;
  bool is_anomaly = false;
};

struct DetectSummary {
  std::int64_t records = 0;
  std::int64_t flagged = 0;
  Index w = 0;
  double k = 0;
};

/// Batch thresholding of pre-computed scores. One output record per input;
/// input must be ordered by timestamp (OrderingError otherwise).
std::vector<AnomalyRecord> detect(std::span<const scoring::ScoreRecord> records,
                                  Index w, double k,
                                  DetectSummary* summary = nullptr);

/// Pull-based row source: return records in timestamp order, std::nullopt at
/// end of stream.
using FeatureRowSource = std::function<std::optional<ingest::FeatureRow>()>;

/// Receives detector output. Called only from the detector's thread.
class StreamSink {
 public:
  virtual ~StreamSink() = default;
  virtual void on_record(const AnomalyRecord& record) = 0;
  /// A gap exceeded the tolerance; the input window restarts at `ts`.
  virtual void on_reset(UnixTime ts) { (void)ts; }
};

struct StreamSummary {
  std::int64_t rows = 0;
  std::int64_t records = 0;
  std::int64_t flagged = 0;
  std::int64_t resets = 0;
};

/// Online detector: keeps a rolling 24-sample standardized input window,
/// scores it on completion, and thresholds the combined score. Holds only
/// the window and threshold buffers, so state is O(w + window length) no
/// matter how long the stream runs. A replayed file produces exactly the
/// batch pipeline's records. Gaps larger than the expected interval reset
/// the input window (threshold history is kept); out-of-order rows throw
/// OrderingError.
StreamSummary stream_detect(const nn::ConvAutoencoder& model,
                            const scoring::GaussianModel& gaussian,
                            const FeatureRowSource& source, Index w, double k,
                            StreamSink& sink,
                            std::int64_t expected_interval = kSecondsPerHour,
                            Index window_length = 24);

}  // namespace metersentry::threshold
