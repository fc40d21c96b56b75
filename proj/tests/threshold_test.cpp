#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <deque>
#include <numbers>
#include <set>

#include "metersentry/errors.hpp"
#include "metersentry/rng.hpp"
#include "metersentry/threshold.hpp"
#include "test_util.hpp"

using namespace metersentry;
using namespace metersentry::threshold;
using testutil::kT0;

namespace {

std::vector<scoring::ScoreRecord> score_stream(const std::vector<double>& cs) {
  std::vector<scoring::ScoreRecord> records;
  for (std::size_t i = 0; i < cs.size(); ++i) {
    records.push_back({kT0 + static_cast<UnixTime>(i) * kSecondsPerHour,
                       cs[i] / 2, cs[i] / 2, cs[i]});
  }
  return records;
}

std::set<UnixTime> flagged_set(const std::vector<AnomalyRecord>& records) {
  std::set<UnixTime> out;
  for (const auto& r : records) {
    if (r.is_anomaly) out.insert(r.ts);
  }
  return out;
}

}  // namespace

TEST_CASE("a constant stream never alarms") {
  ThresholdState state(16, 3.0);
  for (int i = 0; i < 200; ++i) {
    const auto result = state.push(5.0);
    CHECK_FALSE(result.is_anomaly);
    if (i >= 16) CHECK(result.threshold == 5.0);  // mean 5, std 0
  }
}

TEST_CASE("a spike over a zero-variance buffer is flagged at the exact bar") {
  ThresholdState state(4, 3.0);
  for (int i = 0; i < 4; ++i) state.push(1.0);
  const auto result = state.push(10.0);
  CHECK(result.threshold == 1.0);
  CHECK(result.is_anomaly);
}

TEST_CASE("warm-up keeps the threshold infinite and flags nothing") {
  ThresholdState state(8, 2.0);
  for (int i = 0; i < 8; ++i) {
    const auto result = state.push(100.0 * i);
    CHECK(std::isinf(result.threshold));
    CHECK_FALSE(result.is_anomaly);
  }
  CHECK_FALSE(std::isinf(state.push(0.0).threshold));
}

TEST_CASE("a point cannot raise its own threshold") {
  // The spike enters the buffer only after its own decision: with the spike
  // at the bar's computation time excluded, an immediate second spike sees a
  // raised bar from the first one.
  ThresholdState state(4, 3.0);
  for (int i = 0; i < 4; ++i) state.push(1.0);
  const auto first = state.push(50.0);
  CHECK(first.threshold == 1.0);
  const auto second = state.push(50.0);
  CHECK(second.threshold > first.threshold);
}

TEST_CASE("standard normal scores trip a three-sigma bar rarely") {
  Rng rng(20240505);
  ThresholdState state(100, 3.0);
  const int n = 100000;
  int flagged = 0;
  for (int i = 0; i < n; ++i) {
    flagged += state.push(rng.normal()) .is_anomaly ? 1 : 0;
  }
  CHECK(flagged < n / 100);
}

TEST_CASE("moving stats of a short buffer by hand") {
  ThresholdState state(3, 1.0);
  state.push(2.0);
  state.push(4.0);
  state.push(6.0);
  const auto stats = state.moving_stats();
  CHECK(stats.mean == 4.0);
  CHECK(stats.std == doctest::Approx(std::sqrt(8.0 / 3.0)).epsilon(1e-15));
}

TEST_CASE("moving stats of identical values has zero spread") {
  ThresholdState state(5, 1.0);
  for (int i = 0; i < 9; ++i) state.push(7.5);
  CHECK(state.moving_stats().std == 0.0);
}

TEST_CASE("moving stats on an empty buffer is a state error") {
  ThresholdState state(5, 1.0);
  CHECK_THROWS_AS(state.moving_stats(), StateError);
}

TEST_CASE("push rejects non-finite scores") {
  ThresholdState state(5, 1.0);
  CHECK_THROWS_AS(state.push(std::nan("")), NumericError);
  CHECK_THROWS_AS(state.push(std::numeric_limits<double>::infinity()), NumericError);
}

TEST_CASE("threshold state agrees with brute-force recomputation") {
  Rng rng(41);
  const Index w = 37;
  ThresholdState state(w, 2.5);
  std::deque<double> window;
  double max_diff = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double score = rng.uniform(0.0, 50.0);
    if (static_cast<Index>(window.size()) == w) {
      double sum = 0.0, ss = 0.0;
      for (double v : window) sum += v;
      const double mean = sum / static_cast<double>(w);
      for (double v : window) ss += (v - mean) * (v - mean);
      const double expected = mean + 2.5 * std::sqrt(ss / static_cast<double>(w));
      const auto result = state.push(score);
      max_diff = std::max(max_diff, std::abs(result.threshold - expected));
    } else {
      state.push(score);
    }
    window.push_back(score);
    if (static_cast<Index>(window.size()) > w) window.pop_front();
  }
  CHECK(max_diff < 1e-9);
}

TEST_CASE("detect flags nothing on a constant score stream") {
  const auto records = score_stream(std::vector<double>(500, 3.0));
  DetectSummary summary;
  const auto out = detect(records, 168, 3.0, &summary);
  CHECK(out.size() == records.size());
  CHECK(summary.flagged == 0);
}

TEST_CASE("detect finds injected ten-sigma spikes with few false alarms") {
  Rng rng(20240506);
  std::vector<double> cs(2000);
  for (auto& v : cs) v = 10.0 + rng.normal();
  std::vector<std::size_t> spike_at;
  for (int s = 0; s < 10; ++s) {
    const std::size_t pos = 300 + static_cast<std::size_t>(s) * 160;
    cs[pos] += 10.0;  // ten sigmas over the unit-noise baseline
    spike_at.push_back(pos);
  }
  const auto records = score_stream(cs);
  DetectSummary summary;
  const auto out = detect(records, 168, 3.0, &summary);

  int hits = 0;
  int extras = 0;
  for (const auto& r : out) {
    if (!r.is_anomaly) continue;
    const bool is_spike =
        std::any_of(spike_at.begin(), spike_at.end(), [&](std::size_t pos) {
          return records[pos].ts == r.ts;
        });
    (is_spike ? hits : extras) += 1;
  }
  CHECK(hits == 10);
  CHECK(extras <= 2);
}

TEST_CASE("detect requires ordered input") {
  auto records = score_stream({1, 2, 3, 4, 5});
  std::swap(records[1], records[3]);
  CHECK_THROWS_AS(detect(records, 4, 3.0, nullptr), OrderingError);
}

TEST_CASE("larger multipliers flag strictly fewer points") {
  Rng rng(61);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> cs(600);
    for (auto& v : cs) v = 5.0 + rng.normal() + (rng.uniform() < 0.02 ? 8.0 : 0.0);
    const auto records = score_stream(cs);
    const auto loose = flagged_set(detect(records, 100, 1.5, nullptr));
    const auto tight = flagged_set(detect(records, 100, 3.0, nullptr));
    for (const UnixTime ts : tight) {
      CHECK(loose.count(ts) == 1);
    }
    CHECK(tight.size() <= loose.size());
  }
}

TEST_CASE("shifting every score shifts every threshold and nothing else") {
  Rng rng(67);
  std::vector<double> cs(500);
  for (auto& v : cs) v = 20.0 + 3.0 * rng.normal();
  const double shift = 123.5;
  std::vector<double> shifted = cs;
  for (auto& v : shifted) v += shift;

  const auto base = detect(score_stream(cs), 80, 2.0, nullptr);
  const auto moved = detect(score_stream(shifted), 80, 2.0, nullptr);
  REQUIRE(base.size() == moved.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    CHECK(base[i].is_anomaly == moved[i].is_anomaly);
    if (!std::isinf(base[i].threshold)) {
      CHECK(moved[i].threshold - base[i].threshold ==
            doctest::Approx(shift).epsilon(1e-9));
    }
  }
}

TEST_CASE("no anomaly is ever emitted during the first w points") {
  Rng rng(71);
  for (Index w : {5, 50, 168}) {
    std::vector<double> cs(static_cast<std::size_t>(w) + 40);
    for (auto& v : cs) v = rng.uniform(0.0, 1000.0);
    const auto out = detect(score_stream(cs), w, 0.0, nullptr);
    for (Index i = 0; i < w; ++i) {
      CHECK_FALSE(out[static_cast<std::size_t>(i)].is_anomaly);
      CHECK(std::isinf(out[static_cast<std::size_t>(i)].threshold));
    }
  }
}

// ---------------------------------------------------------------------------
// Streaming
// ---------------------------------------------------------------------------

namespace {

struct CollectingSink : StreamSink {
  std::vector<AnomalyRecord> records;
  std::vector<UnixTime> resets;
  void on_record(const AnomalyRecord& r) override { records.push_back(r); }
  void on_reset(UnixTime ts) override { resets.push_back(ts); }
};

struct StreamFixture {
  ingest::FeatureFrame frame;
  nn::ConvAutoencoder model;
  scoring::GaussianModel gaussian;

  explicit StreamFixture(int rows, std::uint64_t seed = 77) {
    Rng rng(seed);
    frame = testutil::make_hourly_frame(rows, [&](Eigen::Index i) {
      return 100.0 + 15.0 * std::sin(2.0 * std::numbers::pi *
                                     static_cast<double>(i) / 24.0) +
             rng.normal(0, 4);
    });
    for (Eigen::Index i = 0; i < frame.rows(); ++i) {
      frame.month_shift[i] = frame.consumption[i] + rng.normal(0, 1);
      frame.temperature[i] = 8.0 + rng.normal(0, 3);
    }
    model = nn::ConvAutoencoder::canonical();
    model.init_weights(seed);
    model.normalization = nn::fit_normalization(frame.consumption);
    gaussian = scoring::fit_gaussian(frame.context_features());
  }

  FeatureRowSource row_source() const {
    return [this, i = Eigen::Index{0}]() mutable -> std::optional<ingest::FeatureRow> {
      if (i >= frame.rows()) return std::nullopt;
      return ingest::frame_row(frame, i++);
    };
  }
};

}  // namespace

TEST_CASE("stream replay reproduces batch detection record for record") {
  const StreamFixture fx(400);
  const Index w = 48;
  const double k = 2.5;

  const nn::WindowSet windows = nn::make_windows(fx.frame, 24, 1, fx.model.normalization);
  const auto scores = scoring::score_series(fx.model, fx.gaussian, fx.frame, windows);
  DetectSummary batch_summary;
  const auto batch = detect(scores, w, k, &batch_summary);

  CollectingSink sink;
  const StreamSummary stream_summary =
      stream_detect(fx.model, fx.gaussian, fx.row_source(), w, k, sink);

  REQUIRE(sink.records.size() == batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    CHECK(sink.records[i].ts == batch[i].ts);
    CHECK(sink.records[i].cs == batch[i].cs);
    CHECK(sink.records[i].mse == batch[i].mse);
    CHECK(sink.records[i].md == batch[i].md);
    CHECK(sink.records[i].threshold == batch[i].threshold);
    CHECK(sink.records[i].is_anomaly == batch[i].is_anomaly);
  }
  CHECK(stream_summary.flagged == batch_summary.flagged);
  CHECK(stream_summary.resets == 0);
}

TEST_CASE("a gap resets the input window instead of scoring stale context") {
  StreamFixture fx(300);
  // Open a 3-hour gap after row 149.
  for (Eigen::Index i = 150; i < fx.frame.rows(); ++i) {
    fx.frame.timestamps[static_cast<std::size_t>(i)] += 2 * kSecondsPerHour;
  }
  CollectingSink sink;
  const StreamSummary summary =
      stream_detect(fx.model, fx.gaussian, fx.row_source(), 48, 3.0, sink);

  CHECK(summary.resets == 1);
  REQUIRE(sink.resets.size() == 1);
  CHECK(sink.resets[0] == fx.frame.timestamps[150]);
  // No record may end inside the first 23 rows after the reset.
  for (const auto& r : sink.records) {
    if (r.ts >= fx.frame.timestamps[150]) {
      CHECK(r.ts >= fx.frame.timestamps[150 + 23]);
    }
  }
  // Windows before the gap and full windows after it are all scored.
  CHECK(summary.records == (150 - 23) + (150 - 23));
}

TEST_CASE("out-of-order stream rows throw") {
  StreamFixture fx(60);
  std::swap(fx.frame.timestamps[30], fx.frame.timestamps[31]);
  CollectingSink sink;
  CHECK_THROWS_AS(
      stream_detect(fx.model, fx.gaussian, fx.row_source(), 24, 3.0, sink),
      OrderingError);
}
