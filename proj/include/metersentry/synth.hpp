#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "metersentry/calendar.hpp"
#include "metersentry/ingest.hpp"
#include "metersentry/threshold.hpp"

namespace metersentry::synth {

enum class AnomalyKind { Spike, Dropout, LevelShift };

struct Injection {
  std::int64_t offset_hours = 0;  // from the series start
  AnomalyKind kind = AnomalyKind::Spike;
  double magnitude = 0;        // consumption units; ignored for dropout
  std::int64_t duration_hours = 1;
};

struct SynthConfig {
  std::int64_t days = 90;
  double base_level = 200;
  double daily_amplitude = 30;
  double weekly_amplitude = 15;
  double noise_std = 30;
  UnixTime start = 1388534400;  // 2014-01-01T00:00Z
  std::uint64_t seed = 42;
  std::vector<Injection> anomalies;
};

/// Hourly consumption with ground-truth labels: exactly the injected hours
/// carry label 1.
struct LabeledSeries {
  std::vector<UnixTime> timestamps;
  Eigen::VectorXd consumption;
  Eigen::VectorXd temperature;  // deterministic sinusoidal context
  std::vector<std::uint8_t> label;

  Eigen::Index size() const { return consumption.size(); }
};

/// base + daily sinusoid (trough in the small hours, peak past midday) +
/// weekly sinusoid + seeded Gaussian noise, clamped at zero, then anomalies:
/// spikes and level shifts add their magnitude, dropouts zero the hours.
/// Bit-identical for identical configs. Throws InvalidInjectionError when an
/// injection leaves the generated span or has duration < 1.
LabeledSeries generate(const SynthConfig& config);

/// The series as a cumulative meter series (anchored one interval before the
/// first hour) so that differencing reproduces the consumption exactly.
ingest::RawSeries to_raw_series(const LabeledSeries& series,
                                const std::string& meter_id = "synth-1");

void write_meter_csv(const LabeledSeries& series, const std::filesystem::path& path,
                     const std::string& meter_id = "synth-1");
void write_weather_csv(const LabeledSeries& series, const std::filesystem::path& path);
void write_labels_csv(const LabeledSeries& series, const std::filesystem::path& path);

struct Metrics {
  double precision = 1;
  double recall = 1;
  double f1 = 0;
  std::int64_t matched = 0;
  std::int64_t predicted_events = 0;
  std::int64_t truth_events = 0;
};

/// Event-level precision/recall: flagged hours closer than merge_gap_hours
/// collapse into one predicted event anchored at the run's first timestamp (a
/// sustained or intermittently re-firing detector response to one cause
/// counts once), labeled runs collapse the same way, and events match truth
/// one-to-one, greedily in time order, when within tolerance_hours. Empty
/// sides score 1.0 by convention. Throws AlignmentError when the prediction
/// and truth timestamp ranges are disjoint.
Metrics evaluate(std::span<const threshold::AnomalyRecord> predictions,
                 const LabeledSeries& truth, std::int64_t tolerance_hours = 0,
                 std::int64_t merge_gap_hours = 1);

/// Same matching for timestamp lists already extracted from files.
Metrics evaluate_events(std::span<const UnixTime> flagged,
                        std::span<const UnixTime> labeled,
                        std::int64_t tolerance_hours,
                        std::int64_t merge_gap_hours = 1);

}  // namespace metersentry::synth
