#include <doctest.h>

#include <algorithm>
#include <vector>

#include "metersentry/errors.hpp"
#include "metersentry/ingest.hpp"
#include "metersentry/rng.hpp"
#include "metersentry/synth.hpp"
#include "test_util.hpp"

using namespace metersentry;
using namespace metersentry::synth;
using testutil::kT0;

namespace {

SynthConfig base_config() {
  SynthConfig config;
  config.days = 60;
  config.base_level = 200;
  config.daily_amplitude = 30;
  config.weekly_amplitude = 15;
  config.noise_std = 10;
  config.seed = 42;
  return config;
}

std::vector<threshold::AnomalyRecord> records_at(
    const LabeledSeries& truth, const std::vector<Eigen::Index>& flagged) {
  std::vector<threshold::AnomalyRecord> out;
  for (Eigen::Index i = 0; i < truth.size(); ++i) {
    threshold::AnomalyRecord r;
    r.ts = truth.timestamps[static_cast<std::size_t>(i)];
    r.is_anomaly = std::find(flagged.begin(), flagged.end(), i) != flagged.end();
    out.push_back(r);
  }
  return out;
}

}  // namespace

TEST_CASE("identical configs generate bit-identical series") {
  const LabeledSeries a = generate(base_config());
  const LabeledSeries b = generate(base_config());
  CHECK(a.consumption == b.consumption);
  CHECK(a.temperature == b.temperature);
  CHECK(a.timestamps == b.timestamps);
  CHECK(a.label == b.label);
}

TEST_CASE("different seeds generate different noise") {
  SynthConfig other = base_config();
  other.seed = 43;
  CHECK(generate(base_config()).consumption != generate(other).consumption);
}

TEST_CASE("zero amplitudes and zero noise give a constant series") {
  SynthConfig config = base_config();
  config.daily_amplitude = 0;
  config.weekly_amplitude = 0;
  config.noise_std = 0;
  const LabeledSeries series = generate(config);
  CHECK(series.consumption.minCoeff() == config.base_level);
  CHECK(series.consumption.maxCoeff() == config.base_level);
}

TEST_CASE("a spike adds exactly its magnitude") {
  SynthConfig config = base_config();
  SynthConfig clean = config;
  config.anomalies.push_back({1000, AnomalyKind::Spike, 100.0, 1});
  const LabeledSeries spiked = generate(config);
  const LabeledSeries base = generate(clean);
  CHECK(spiked.consumption[1000] - base.consumption[1000] == 100.0);
  for (Eigen::Index i = 0; i < spiked.size(); ++i) {
    if (i != 1000) CHECK(spiked.consumption[i] == base.consumption[i]);
  }
  CHECK(spiked.label[1000] == 1);
}

TEST_CASE("dropouts zero the affected hours") {
  SynthConfig config = base_config();
  config.anomalies.push_back({500, AnomalyKind::Dropout, 0.0, 4});
  const LabeledSeries series = generate(config);
  for (Eigen::Index i = 500; i < 504; ++i) {
    CHECK(series.consumption[i] == 0.0);
    CHECK(series.label[static_cast<std::size_t>(i)] == 1);
  }
}

TEST_CASE("label count equals the sum of injected durations") {
  SynthConfig config = base_config();
  config.anomalies.push_back({100, AnomalyKind::Spike, 50.0, 1});
  config.anomalies.push_back({400, AnomalyKind::Dropout, 0.0, 6});
  config.anomalies.push_back({900, AnomalyKind::LevelShift, 30.0, 12});
  const LabeledSeries series = generate(config);
  std::int64_t labels = 0;
  for (std::uint8_t l : series.label) labels += l;
  CHECK(labels == 1 + 6 + 12);
}

TEST_CASE("injections outside the span are rejected") {
  SynthConfig config = base_config();
  config.anomalies.push_back({config.days * 24 - 2, AnomalyKind::Spike, 10.0, 5});
  CHECK_THROWS_AS(generate(config), InvalidInjectionError);
  config.anomalies = {{-1, AnomalyKind::Spike, 10.0, 1}};
  CHECK_THROWS_AS(generate(config), InvalidInjectionError);
  config.anomalies = {{10, AnomalyKind::Spike, 10.0, 0}};
  CHECK_THROWS_AS(generate(config), InvalidInjectionError);
}

TEST_CASE("the raw-series view differences back to the generated consumption") {
  SynthConfig config = base_config();
  config.days = 10;
  const LabeledSeries series = generate(config);
  const ingest::RawSeries raw = to_raw_series(series);
  REQUIRE(static_cast<Eigen::Index>(raw.points.size()) == series.size() + 1);
  const ingest::DiffResult diff = ingest::diff_consumption(raw);
  REQUIRE(diff.frame.rows() == series.size());
  for (Eigen::Index i = 0; i < series.size(); ++i) {
    CHECK(diff.frame.consumption[i] ==
          doctest::Approx(series.consumption[i]).epsilon(1e-9));
    CHECK(diff.frame.timestamps[static_cast<std::size_t>(i)] ==
          series.timestamps[static_cast<std::size_t>(i)]);
  }
}

TEST_CASE("perfect predictions score perfectly") {
  SynthConfig config = base_config();
  config.anomalies.push_back({100, AnomalyKind::Spike, 50.0, 1});
  config.anomalies.push_back({700, AnomalyKind::Spike, 50.0, 1});
  const LabeledSeries truth = generate(config);
  const auto predictions = records_at(truth, {100, 700});
  const Metrics m = evaluate(predictions, truth, 0);
  CHECK(m.precision == 1.0);
  CHECK(m.recall == 1.0);
  CHECK(m.f1 == 1.0);
  CHECK(m.matched == 2);
}

TEST_CASE("no predictions: recall zero, precision one by convention") {
  SynthConfig config = base_config();
  config.anomalies.push_back({100, AnomalyKind::Spike, 50.0, 1});
  const LabeledSeries truth = generate(config);
  const Metrics m = evaluate(records_at(truth, {}), truth, 0);
  CHECK(m.precision == 1.0);
  CHECK(m.recall == 0.0);
  CHECK(m.f1 == 0.0);
}

TEST_CASE("eight of ten hits with two extras scores 0.8 either way") {
  SynthConfig config = base_config();
  std::vector<Eigen::Index> spikes;
  for (int s = 0; s < 10; ++s) {
    const Eigen::Index at = 100 + 120 * s;
    spikes.push_back(at);
    config.anomalies.push_back({at, AnomalyKind::Spike, 50.0, 1});
  }
  const LabeledSeries truth = generate(config);
  // Flag 8 true spikes plus 2 positions far from any label.
  std::vector<Eigen::Index> flagged(spikes.begin(), spikes.begin() + 8);
  flagged.push_back(50);
  flagged.push_back(1390);
  const Metrics m = evaluate(records_at(truth, flagged), truth, 0);
  CHECK(m.recall == doctest::Approx(0.8));
  CHECK(m.precision == doctest::Approx(0.8));
  CHECK(m.matched == 8);
}

TEST_CASE("a sustained detector response to one cause counts once") {
  SynthConfig config = base_config();
  config.anomalies.push_back({300, AnomalyKind::Spike, 80.0, 1});
  const LabeledSeries truth = generate(config);
  // The detector stays latched for a dozen consecutive hours.
  std::vector<Eigen::Index> flagged;
  for (Eigen::Index i = 300; i < 312; ++i) flagged.push_back(i);
  const Metrics m = evaluate(records_at(truth, flagged), truth, 0);
  CHECK(m.predicted_events == 1);
  CHECK(m.precision == 1.0);
  CHECK(m.recall == 1.0);
}

TEST_CASE("metrics ignore prediction order") {
  Rng rng(83);
  std::vector<UnixTime> flagged, labeled;
  for (int i = 0; i < 30; ++i) {
    flagged.push_back(kT0 + (rng.next() % 2000) * kSecondsPerHour);
    labeled.push_back(kT0 + (rng.next() % 2000) * kSecondsPerHour);
  }
  const Metrics ordered = evaluate_events(flagged, labeled, 2);
  for (int shuffle = 0; shuffle < 5; ++shuffle) {
    rng.shuffle(flagged);
    rng.shuffle(labeled);
    const Metrics shuffled = evaluate_events(flagged, labeled, 2);
    CHECK(shuffled.precision == ordered.precision);
    CHECK(shuffled.recall == ordered.recall);
    CHECK(shuffled.matched == ordered.matched);
  }
}

TEST_CASE("tolerance widens the match window") {
  SynthConfig config = base_config();
  config.anomalies.push_back({500, AnomalyKind::Spike, 50.0, 1});
  const LabeledSeries truth = generate(config);
  const auto predictions = records_at(truth, {503});
  CHECK(evaluate(predictions, truth, 0).matched == 0);
  CHECK(evaluate(predictions, truth, 3).matched == 1);
}

TEST_CASE("disjoint prediction and truth ranges are an alignment error") {
  const LabeledSeries truth = generate(base_config());
  std::vector<threshold::AnomalyRecord> far;
  threshold::AnomalyRecord r;
  r.ts = truth.timestamps.back() + 1000 * kSecondsPerHour;
  r.is_anomaly = true;
  far.push_back(r);
  CHECK_THROWS_AS(evaluate(far, truth, 0), AlignmentError);
}

TEST_CASE("csv emissions match the ingest schemas") {
  testutil::TempDir dir;
  SynthConfig config = base_config();
  config.days = 5;
  config.anomalies.push_back({30, AnomalyKind::Spike, 40.0, 1});
  const LabeledSeries series = generate(config);
  write_meter_csv(series, dir.file("meter.csv"));
  write_weather_csv(series, dir.file("weather.csv"));
  write_labels_csv(series, dir.file("labels.csv"));

  const ingest::RawSeries meter = ingest::load_meter_csv(dir.file("meter.csv"));
  CHECK(static_cast<Eigen::Index>(meter.points.size()) == series.size() + 1);
  const ingest::WeatherTable weather = ingest::load_weather_csv(dir.file("weather.csv"));
  CHECK(static_cast<Eigen::Index>(weather.timestamps.size()) == series.size() + 1);

  const std::string labels = testutil::read_text(dir.file("labels.csv"));
  CHECK(labels.starts_with("timestamp,label\n"));
  CHECK(std::count(labels.begin(), labels.end(), '\n') ==
        static_cast<std::ptrdiff_t>(series.size()) + 1);
}
