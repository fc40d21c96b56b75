#include "metersentry/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "metersentry/csv.hpp"
#include "metersentry/errors.hpp"
#include "metersentry/rng.hpp"

namespace metersentry::synth {

LabeledSeries generate(const SynthConfig& config) {
  if (config.days < 1) {
    throw ContractError("synth: days must be >= 1");
  }
  const std::int64_t n = config.days * 24;
  for (const Injection& inj : config.anomalies) {
    if (inj.duration_hours < 1) {
      throw InvalidInjectionError("injection duration must be >= 1 hour");
    }
    if (inj.offset_hours < 0 || inj.offset_hours + inj.duration_hours > n) {
      throw InvalidInjectionError(
          "injection at offset " + std::to_string(inj.offset_hours) +
          " (duration " + std::to_string(inj.duration_hours) +
          ") leaves the " + std::to_string(n) + "-hour span");
    }
  }

  LabeledSeries series;
  series.timestamps.resize(static_cast<std::size_t>(n));
  series.consumption.resize(n);
  series.temperature.resize(n);
  series.label.assign(static_cast<std::size_t>(n), 0);

  Rng rng(config.seed);
  constexpr double two_pi = 2.0 * std::numbers::pi;
  for (std::int64_t h = 0; h < n; ++h) {
    const UnixTime ts = config.start + h * kSecondsPerHour;
    series.timestamps[static_cast<std::size_t>(h)] = ts;
    const double hour_of_day = static_cast<double>((ts / kSecondsPerHour) % 24);
    // Daily trough around 01:00, peak around 13:00.
    const double daily = std::sin(two_pi * (hour_of_day - 7.0) / 24.0);
    const double weekly = std::sin(two_pi * static_cast<double>(h) / 168.0);
    double value = config.base_level + config.daily_amplitude * daily +
                   config.weekly_amplitude * weekly +
                   rng.normal(0.0, config.noise_std);
    series.consumption[h] = std::max(0.0, value);
    series.temperature[h] = 12.0 + 8.0 * std::sin(two_pi * (hour_of_day - 3.0) / 24.0) +
                            6.0 * std::sin(two_pi * static_cast<double>(h) / 8760.0);
  }

  for (const Injection& inj : config.anomalies) {
    for (std::int64_t h = inj.offset_hours; h < inj.offset_hours + inj.duration_hours;
         ++h) {
      switch (inj.kind) {
        case AnomalyKind::Spike:
        case AnomalyKind::LevelShift:
          series.consumption[h] += inj.magnitude;
          break;
        case AnomalyKind::Dropout:
          series.consumption[h] = 0.0;
          break;
      }
      series.label[static_cast<std::size_t>(h)] = 1;
    }
  }
  return series;
}

ingest::RawSeries to_raw_series(const LabeledSeries& series,
                                const std::string& meter_id) {
  ingest::RawSeries raw;
  raw.meter_id = meter_id;
  raw.points.reserve(static_cast<std::size_t>(series.size()) + 1);

  ingest::MeterPoint anchor;
  anchor.ts = series.timestamps.empty()
                  ? 0
                  : series.timestamps.front() - kSecondsPerHour;
  anchor.reading = 0.0;
  anchor.temperature = series.temperature.size() > 0 ? series.temperature[0] : 0.0;
  raw.points.push_back(anchor);

  double cumulative = 0.0;
  for (Eigen::Index i = 0; i < series.size(); ++i) {
    cumulative += series.consumption[i];
    ingest::MeterPoint p;
    p.ts = series.timestamps[static_cast<std::size_t>(i)];
    p.reading = cumulative;
    p.temperature = series.temperature[i];
    raw.points.push_back(p);
  }
  return raw;
}

void write_meter_csv(const LabeledSeries& series, const std::filesystem::path& path,
                     const std::string& meter_id) {
  const ingest::RawSeries raw = to_raw_series(series, meter_id);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write file: " + path.string());
  out << "timestamp,meter_id,reading\n";
  std::string line;
  for (const ingest::MeterPoint& p : raw.points) {
    line.clear();
    line += format_iso8601_utc(p.ts);
    line += ',';
    line += meter_id;
    line += ',';
    csv::append_double(line, *p.reading);
    line += '\n';
    out << line;
  }
  if (!out) throw IoError("write failed: " + path.string());
}

void write_weather_csv(const LabeledSeries& series, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write file: " + path.string());
  out << "timestamp,temperature\n";
  std::string line;
  // One extra hour in front covers the meter anchor row.
  if (!series.timestamps.empty()) {
    line += format_iso8601_utc(series.timestamps.front() - kSecondsPerHour);
    line += ',';
    csv::append_double(line, series.temperature[0]);
    line += '\n';
    out << line;
  }
  for (Eigen::Index i = 0; i < series.size(); ++i) {
    line.clear();
    line += format_iso8601_utc(series.timestamps[static_cast<std::size_t>(i)]);
    line += ',';
    csv::append_double(line, series.temperature[i]);
    line += '\n';
    out << line;
  }
  if (!out) throw IoError("write failed: " + path.string());
}

void write_labels_csv(const LabeledSeries& series, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write file: " + path.string());
  out << "timestamp,label\n";
  for (Eigen::Index i = 0; i < series.size(); ++i) {
    out << format_iso8601_utc(series.timestamps[static_cast<std::size_t>(i)]) << ','
        << static_cast<int>(series.label[static_cast<std::size_t>(i)]) << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

namespace {

// Collapses timestamps within merge_gap of their predecessor into events
// anchored at each run's first timestamp.
std::vector<UnixTime> collapse_events(std::span<const UnixTime> stamps,
                                      std::int64_t merge_gap) {
  std::vector<UnixTime> events;
  for (std::size_t i = 0; i < stamps.size(); ++i) {
    if (i == 0 || stamps[i] - stamps[i - 1] > merge_gap) {
      events.push_back(stamps[i]);
    }
  }
  return events;
}

}  // namespace

Metrics evaluate_events(std::span<const UnixTime> flagged,
                        std::span<const UnixTime> labeled,
                        std::int64_t tolerance_hours,
                        std::int64_t merge_gap_hours) {
  std::vector<UnixTime> flagged_sorted(flagged.begin(), flagged.end());
  std::vector<UnixTime> labeled_sorted(labeled.begin(), labeled.end());
  std::sort(flagged_sorted.begin(), flagged_sorted.end());
  std::sort(labeled_sorted.begin(), labeled_sorted.end());
  const std::int64_t merge_gap = merge_gap_hours * kSecondsPerHour;
  const std::vector<UnixTime> predicted =
      collapse_events(flagged_sorted, merge_gap);
  const std::vector<UnixTime> truth = collapse_events(labeled_sorted, merge_gap);
  const std::int64_t tolerance = tolerance_hours * kSecondsPerHour;

  std::vector<bool> used(truth.size(), false);
  std::int64_t matched = 0;
  for (const UnixTime p : predicted) {
    std::size_t best = truth.size();
    std::int64_t best_dist = tolerance + 1;
    for (std::size_t t = 0; t < truth.size(); ++t) {
      if (used[t]) continue;
      const std::int64_t dist = std::abs(p - truth[t]);
      if (dist <= tolerance && dist < best_dist) {
        best = t;
        best_dist = dist;
      }
    }
    if (best < truth.size()) {
      used[best] = true;
      matched += 1;
    }
  }

  Metrics m;
  m.matched = matched;
  m.predicted_events = static_cast<std::int64_t>(predicted.size());
  m.truth_events = static_cast<std::int64_t>(truth.size());
  m.precision = predicted.empty()
                    ? 1.0
                    : static_cast<double>(matched) / static_cast<double>(predicted.size());
  m.recall = truth.empty()
                 ? 1.0
                 : static_cast<double>(matched) / static_cast<double>(truth.size());
  m.f1 = (m.precision + m.recall) > 0.0
             ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
             : 0.0;
  return m;
}

Metrics evaluate(std::span<const threshold::AnomalyRecord> predictions,
                 const LabeledSeries& truth, std::int64_t tolerance_hours,
                 std::int64_t merge_gap_hours) {
  if (!predictions.empty() && truth.size() > 0) {
    const UnixTime pred_lo = predictions.front().ts;
    const UnixTime pred_hi = predictions.back().ts;
    const UnixTime truth_lo = truth.timestamps.front();
    const UnixTime truth_hi = truth.timestamps.back();
    if (pred_hi < truth_lo || truth_hi < pred_lo) {
      throw AlignmentError("prediction and truth timestamp ranges are disjoint");
    }
  }
  std::vector<UnixTime> flagged;
  for (const threshold::AnomalyRecord& r : predictions) {
    if (r.is_anomaly) flagged.push_back(r.ts);
  }
  std::vector<UnixTime> labeled;
  for (std::size_t i = 0; i < truth.label.size(); ++i) {
    if (truth.label[i] != 0) labeled.push_back(truth.timestamps[i]);
  }
  return evaluate_events(flagged, labeled, tolerance_hours, merge_gap_hours);
}

}  // namespace metersentry::synth
