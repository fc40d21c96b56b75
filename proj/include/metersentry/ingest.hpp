#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "metersentry/calendar.hpp"

namespace metersentry::ingest {

/// One raw meter observation, after joining weather and holiday context.
/// `reading` is the cumulative register value; consumption is derived later
/// by differencing.
struct MeterPoint {
  UnixTime ts = 0;
  std::optional<double> reading;      // cumulative, kWh-equivalent units
  std::optional<double> temperature;  // degrees C
  bool is_holiday = false;
};

struct RawSeries {
  std::string meter_id;
  std::vector<MeterPoint> points;  // strictly increasing timestamps
};

struct WeatherTable {
  std::vector<UnixTime> timestamps;  // sorted ascending
  std::vector<double> temperature;
};

struct HolidayTable {
  std::set<UnixTime> dates;  // midnight UTC of each holiday
};

struct Gap {
  UnixTime start = 0;  // first missing grid instant
  UnixTime end = 0;    // next observed instant
  std::int64_t expected_points = 0;
};

struct GapReport {
  std::vector<Gap> gaps;
  std::int64_t irregular_count = 0;  // deltas != expected interval
};

/// Per-timestamp consumption plus the lag and calendar features. Absent
/// temperatures are carried as NaN until engineer_features drops them.
struct FeatureFrame {
  std::vector<UnixTime> timestamps;
  Eigen::VectorXd consumption;
  Eigen::VectorXd lag1, lag2, day_shift, month_shift;
  Eigen::VectorXd temperature;
  Eigen::VectorXd holiday;  // 0/1
  Eigen::VectorXd weekday;  // Monday = 0 .. Sunday = 6
  Eigen::VectorXd hour;     // 0-23
  Eigen::VectorXd month;    // 1-12
  Eigen::VectorXd day;      // 1-31

  Eigen::Index rows() const { return static_cast<Eigen::Index>(timestamps.size()); }

  void resize(Eigen::Index n);

  /// The seven context columns used for distance scoring, in fixed order:
  /// temperature, holiday, month_shift, weekday, hour, month, day.
  Eigen::MatrixXd context_features() const;
  Eigen::Matrix<double, 7, 1> context_row(Eigen::Index i) const;

  static constexpr std::array<const char*, 12> kColumnNames = {
      "timestamp", "consumption", "lag1",    "lag2",  "day_shift",
      "month_shift", "temperature", "holiday", "weekday", "hour",
      "month",     "day"};

  /// Numeric columns by header name (everything except "timestamp").
  const Eigen::VectorXd& column(std::string_view name) const;
};

/// One frame row, the unit the streaming detector consumes.
struct FeatureRow {
  UnixTime ts = 0;
  double consumption = 0, lag1 = 0, lag2 = 0, day_shift = 0, month_shift = 0;
  double temperature = 0, holiday = 0, weekday = 0, hour = 0, month = 0, day = 0;

  Eigen::Matrix<double, 7, 1> context() const {
    Eigen::Matrix<double, 7, 1> x;
    x << temperature, holiday, month_shift, weekday, hour, month, day;
    return x;
  }
};

FeatureRow frame_row(const FeatureFrame& frame, Eigen::Index i);

// ---------------------------------------------------------------------------
// Loading and joining
// ---------------------------------------------------------------------------

/// Meter CSV: header `timestamp,meter_id,reading`, ISO-8601 UTC timestamps,
/// decimal readings (empty cell = missing reading). Result sorted by
/// timestamp; duplicate timestamps are rejected. One meter stream per run:
/// pass `meter_id` to pick one out of a multi-meter file; without it a file
/// with several ids is a schema error.
RawSeries load_meter_csv(const std::filesystem::path& path,
                         std::string_view meter_id = {});

/// Weather CSV: header `timestamp,temperature`.
WeatherTable load_weather_csv(const std::filesystem::path& path);

/// Holiday CSV: header `date`, ISO-8601 calendar dates.
HolidayTable load_holiday_csv(const std::filesystem::path& path);

/// Attaches to each point the nearest preceding-or-equal weather value within
/// `tolerance_seconds` and the holiday flag of its calendar date. Points with
/// no weather inside the tolerance keep an absent temperature.
RawSeries merge_sources(RawSeries meter, const WeatherTable& weather,
                        const HolidayTable& holidays,
                        std::int64_t tolerance_seconds = kSecondsPerHour);

// ---------------------------------------------------------------------------
// Gap handling
// ---------------------------------------------------------------------------

/// Reports every maximal run of missing grid instants between consecutive
/// points as one gap, plus the count of deltas that differ from the expected
/// interval. Throws InsufficientDataError for series shorter than 2 points.
GapReport detect_gaps(const RawSeries& series, std::int64_t expected_interval_seconds);

/// Inserts absent-reading points on the interval grid inside every gap.
RawSeries reindex_to_grid(const RawSeries& series, std::int64_t interval_seconds);

// ---------------------------------------------------------------------------
// Imputation
// ---------------------------------------------------------------------------

enum class SeriesColumn { Reading, Temperature };

struct ImputeResult {
  RawSeries series;
  std::int64_t imputed_cells = 0;
};

/// Chained-equation imputation: each selected column's missing cells are
/// filled by an ordinary-least-squares regression on the other columns
/// (including the holiday flag, plus an intercept), initialized from column
/// means and iterated `rounds` times; the final round's predictions are kept.
/// Deterministic. Throws CannotImputeError when a selected column has no
/// observed value at all.
ImputeResult impute_chained(const RawSeries& series,
                            std::span<const SeriesColumn> columns, int rounds = 5);

// ---------------------------------------------------------------------------
// Differencing, feature engineering, resampling
// ---------------------------------------------------------------------------

struct DiffResult {
  FeatureFrame frame;           // consumption/temperature/holiday populated
  std::int64_t clamped = 0;     // negative deltas clamped to zero
};

/// consumption[t] = reading[t] - reading[t-1]; negative deltas clamp to 0 and
/// are counted; the first point is dropped. Requires imputed readings.
DiffResult diff_consumption(const RawSeries& series);

/// Populates lag1/lag2/day_shift (24 h)/month_shift (720 h) and the calendar
/// columns, then drops rows that lack a full lag window: the first 720 rows,
/// rows whose lag offsets do not land exactly on the hourly grid (lag windows
/// crossing a gap), and rows with absent temperature. Throws
/// InsufficientDataError when fewer than 721 rows are available.
FeatureFrame engineer_features(const FeatureFrame& frame);

enum class Period { Daily, Weekly, Monthly, Quarterly, HalfYearly };

struct ResampleRow {
  UnixTime period_start = 0;
  double mean_consumption = 0;
};

/// Mean consumption per calendar period; one row per period that contains at
/// least one input row.
std::vector<ResampleRow> resample(const FeatureFrame& frame, Period period);

Period parse_period(std::string_view name);
std::string_view period_name(Period period);

// ---------------------------------------------------------------------------
// Frame CSV round trip
// ---------------------------------------------------------------------------

/// Header exactly:
/// timestamp,consumption,lag1,lag2,day_shift,month_shift,temperature,holiday,weekday,hour,month,day
/// Doubles use shortest round-trip formatting, so reload is bit-exact.
void write_frame_csv(const FeatureFrame& frame, const std::filesystem::path& path);
FeatureFrame read_frame_csv(const std::filesystem::path& path);

/// Parses one data line of the frame CSV (used by the streaming replay).
FeatureRow parse_frame_row(std::string_view line, std::size_t line_number);

inline constexpr const char* kFrameCsvHeader =
    "timestamp,consumption,lag1,lag2,day_shift,month_shift,temperature,"
    "holiday,weekday,hour,month,day";

}  // namespace metersentry::ingest
