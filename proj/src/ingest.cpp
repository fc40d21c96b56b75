#include "metersentry/ingest.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>

#include "metersentry/csv.hpp"
#include "metersentry/errors.hpp"

namespace metersentry::ingest {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open file: " + path.string());
  }
  return in;
}

void require_header(std::string_view got, std::string_view want,
                    const std::filesystem::path& path) {
  if (csv::strip_cr(got) != want) {
    throw SchemaError("unexpected header in " + path.string() + ": got '" +
                      std::string(got) + "', want '" + std::string(want) + "'");
  }
}

}  // namespace

void FeatureFrame::resize(Eigen::Index n) {
  timestamps.resize(static_cast<std::size_t>(n));
  for (Eigen::VectorXd* col : {&consumption, &lag1, &lag2, &day_shift,
                               &month_shift, &temperature, &holiday, &weekday,
                               &hour, &month, &day}) {
    col->setZero(n);
  }
}

Eigen::MatrixXd FeatureFrame::context_features() const {
  Eigen::MatrixXd x(rows(), 7);
  x.col(0) = temperature;
  x.col(1) = holiday;
  x.col(2) = month_shift;
  x.col(3) = weekday;
  x.col(4) = hour;
  x.col(5) = month;
  x.col(6) = day;
  return x;
}

Eigen::Matrix<double, 7, 1> FeatureFrame::context_row(Eigen::Index i) const {
  Eigen::Matrix<double, 7, 1> x;
  x << temperature[i], holiday[i], month_shift[i], weekday[i], hour[i],
      month[i], day[i];
  return x;
}

const Eigen::VectorXd& FeatureFrame::column(std::string_view name) const {
  if (name == "consumption") return consumption;
  if (name == "lag1") return lag1;
  if (name == "lag2") return lag2;
  if (name == "day_shift") return day_shift;
  if (name == "month_shift") return month_shift;
  if (name == "temperature") return temperature;
  if (name == "holiday") return holiday;
  if (name == "weekday") return weekday;
  if (name == "hour") return hour;
  if (name == "month") return month;
  if (name == "day") return day;
  throw SchemaError("unknown frame column: " + std::string(name));
}

FeatureRow frame_row(const FeatureFrame& f, Eigen::Index i) {
  FeatureRow r;
  r.ts = f.timestamps[static_cast<std::size_t>(i)];
  r.consumption = f.consumption[i];
  r.lag1 = f.lag1[i];
  r.lag2 = f.lag2[i];
  r.day_shift = f.day_shift[i];
  r.month_shift = f.month_shift[i];
  r.temperature = f.temperature[i];
  r.holiday = f.holiday[i];
  r.weekday = f.weekday[i];
  r.hour = f.hour[i];
  r.month = f.month[i];
  r.day = f.day[i];
  return r;
}

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------

RawSeries load_meter_csv(const std::filesystem::path& path,
                         std::string_view meter_id) {
  std::ifstream in = open_input(path);
  std::string line;
  if (!std::getline(in, line)) {
    throw SchemaError("empty meter file: " + path.string());
  }
  require_header(line, "timestamp,meter_id,reading", path);

  RawSeries series;
  std::vector<std::string_view> fields;
  std::size_t line_number = 1;
  while (std::getline(in, line)) {
    ++line_number;
    const std::string_view trimmed = csv::strip_cr(line);
    if (trimmed.empty()) continue;
    csv::split_into(trimmed, fields);
    if (fields.size() != 3) {
      throw ParseError("line " + std::to_string(line_number) + " of " +
                       path.string() + ": expected 3 fields, got " +
                       std::to_string(fields.size()));
    }
    if (!meter_id.empty() && fields[1] != meter_id) continue;
    MeterPoint p;
    try {
      p.ts = parse_iso8601_utc(fields[0]);
      if (!fields[2].empty()) {
        p.reading = csv::parse_double(fields[2], "reading column");
      }
    } catch (const ParseError& e) {
      throw ParseError("line " + std::to_string(line_number) + " of " +
                       path.string() + ": " + e.what());
    }
    if (p.reading && (*p.reading < 0.0 || !std::isfinite(*p.reading))) {
      throw SchemaError("line " + std::to_string(line_number) + " of " +
                        path.string() + ": negative or non-finite reading");
    }
    if (series.meter_id.empty()) {
      series.meter_id = std::string(fields[1]);
    } else if (series.meter_id != fields[1]) {
      throw SchemaError("line " + std::to_string(line_number) + " of " +
                        path.string() + ": multiple meter ids (" +
                        series.meter_id + " vs " + std::string(fields[1]) +
                        "); pass a meter id filter to select one");
    }
    series.points.push_back(p);
  }
  if (!meter_id.empty() && series.points.empty()) {
    throw SchemaError("no rows for meter id '" + std::string(meter_id) +
                      "' in " + path.string());
  }

  std::stable_sort(series.points.begin(), series.points.end(),
                   [](const MeterPoint& a, const MeterPoint& b) { return a.ts < b.ts; });
  for (std::size_t i = 1; i < series.points.size(); ++i) {
    if (series.points[i].ts == series.points[i - 1].ts) {
      throw SchemaError("duplicate timestamp " +
                        format_iso8601_utc(series.points[i].ts) + " in " +
                        path.string());
    }
  }
  return series;
}

WeatherTable load_weather_csv(const std::filesystem::path& path) {
  std::ifstream in = open_input(path);
  std::string line;
  if (!std::getline(in, line)) {
    throw SchemaError("empty weather file: " + path.string());
  }
  require_header(line, "timestamp,temperature", path);

  WeatherTable table;
  std::vector<std::string_view> fields;
  std::size_t line_number = 1;
  while (std::getline(in, line)) {
    ++line_number;
    const std::string_view trimmed = csv::strip_cr(line);
    if (trimmed.empty()) continue;
    csv::split_into(trimmed, fields);
    if (fields.size() != 2) {
      throw ParseError("line " + std::to_string(line_number) + " of " +
                       path.string() + ": expected 2 fields");
    }
    table.timestamps.push_back(parse_iso8601_utc(fields[0]));
    table.temperature.push_back(fields[1].empty()
                                    ? kNaN
                                    : csv::parse_double(fields[1], "temperature"));
  }
  if (!std::is_sorted(table.timestamps.begin(), table.timestamps.end())) {
    std::vector<std::size_t> order(table.timestamps.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return table.timestamps[a] < table.timestamps[b];
    });
    WeatherTable sorted;
    sorted.timestamps.reserve(order.size());
    sorted.temperature.reserve(order.size());
    for (std::size_t i : order) {
      sorted.timestamps.push_back(table.timestamps[i]);
      sorted.temperature.push_back(table.temperature[i]);
    }
    table = std::move(sorted);
  }
  return table;
}

HolidayTable load_holiday_csv(const std::filesystem::path& path) {
  std::ifstream in = open_input(path);
  std::string line;
  if (!std::getline(in, line)) {
    throw SchemaError("empty holiday file: " + path.string());
  }
  require_header(line, "date", path);

  HolidayTable table;
  std::size_t line_number = 1;
  while (std::getline(in, line)) {
    ++line_number;
    const std::string_view trimmed = csv::strip_cr(line);
    if (trimmed.empty()) continue;
    try {
      table.dates.insert(parse_iso_date_utc(trimmed));
    } catch (const ParseError& e) {
      throw ParseError("line " + std::to_string(line_number) + " of " +
                       path.string() + ": " + e.what());
    }
  }
  return table;
}

// ---------------------------------------------------------------------------
// Joining
// ---------------------------------------------------------------------------

RawSeries merge_sources(RawSeries meter, const WeatherTable& weather,
                        const HolidayTable& holidays,
                        std::int64_t tolerance_seconds) {
  for (MeterPoint& p : meter.points) {
    // Nearest preceding-or-equal weather observation within the tolerance.
    auto it = std::upper_bound(weather.timestamps.begin(),
                               weather.timestamps.end(), p.ts);
    p.temperature.reset();
    if (it != weather.timestamps.begin()) {
      const std::size_t idx =
          static_cast<std::size_t>(std::distance(weather.timestamps.begin(), it)) - 1;
      if (p.ts - weather.timestamps[idx] <= tolerance_seconds &&
          std::isfinite(weather.temperature[idx])) {
        p.temperature = weather.temperature[idx];
      }
    }
    p.is_holiday = holidays.dates.count(floor_to_day(p.ts)) > 0;
  }
  return meter;
}

// ---------------------------------------------------------------------------
// Gaps
// ---------------------------------------------------------------------------

GapReport detect_gaps(const RawSeries& series, std::int64_t interval) {
  if (series.points.size() < 2) {
    throw InsufficientDataError("gap detection needs at least 2 points, got " +
                                std::to_string(series.points.size()));
  }
  GapReport report;
  for (std::size_t i = 1; i < series.points.size(); ++i) {
    const std::int64_t delta = series.points[i].ts - series.points[i - 1].ts;
    if (delta == interval) continue;
    report.irregular_count += 1;
    // Missing grid instants strictly between the two observations.
    const std::int64_t missing = (delta - 1) / interval;
    if (missing >= 1) {
      report.gaps.push_back(Gap{series.points[i - 1].ts + interval,
                                series.points[i].ts, missing});
    }
  }
  return report;
}

RawSeries reindex_to_grid(const RawSeries& series, std::int64_t interval) {
  RawSeries out;
  out.meter_id = series.meter_id;
  out.points.reserve(series.points.size());
  for (std::size_t i = 0; i < series.points.size(); ++i) {
    if (i > 0) {
      const UnixTime prev = series.points[i - 1].ts;
      const std::int64_t missing = (series.points[i].ts - prev - 1) / interval;
      for (std::int64_t j = 1; j <= missing; ++j) {
        MeterPoint filler;
        filler.ts = prev + j * interval;
        out.points.push_back(filler);
      }
    }
    out.points.push_back(series.points[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Imputation
// ---------------------------------------------------------------------------

namespace {

// Column layout used by the chained regressions: reading, temperature,
// holiday. Holiday is always observed and seeds the system alongside the
// intercept.
constexpr int kReadingCol = 0;
constexpr int kTemperatureCol = 1;
constexpr int kHolidayCol = 2;
constexpr int kImputeCols = 3;

const char* series_column_name(SeriesColumn c) {
  return c == SeriesColumn::Reading ? "reading" : "temperature";
}

int series_column_index(SeriesColumn c) {
  return c == SeriesColumn::Reading ? kReadingCol : kTemperatureCol;
}

}  // namespace

ImputeResult impute_chained(const RawSeries& series,
                            std::span<const SeriesColumn> columns, int rounds) {
  if (rounds < 1) {
    throw ContractError("imputation rounds must be >= 1, got " +
                        std::to_string(rounds));
  }
  const Eigen::Index n = static_cast<Eigen::Index>(series.points.size());

  Eigen::MatrixXd values(n, kImputeCols);
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> missing(n, kImputeCols);
  missing.setConstant(false);
  for (Eigen::Index i = 0; i < n; ++i) {
    const MeterPoint& p = series.points[static_cast<std::size_t>(i)];
    values(i, kReadingCol) = p.reading.value_or(0.0);
    missing(i, kReadingCol) = !p.reading.has_value();
    values(i, kTemperatureCol) = p.temperature.value_or(0.0);
    missing(i, kTemperatureCol) = !p.temperature.has_value();
    values(i, kHolidayCol) = p.is_holiday ? 1.0 : 0.0;
  }

  ImputeResult result;
  result.series = series;

  std::vector<int> targets;
  for (SeriesColumn c : columns) {
    const int col = series_column_index(c);
    const Eigen::Index observed = n - missing.col(col).count();
    if (n > 0 && observed == 0) {
      throw CannotImputeError(std::string("column '") + series_column_name(c) +
                              "' has no observed values");
    }
    if (missing.col(col).any()) targets.push_back(col);
    // Initialize missing cells with the observed mean.
    if (observed > 0 && observed < n) {
      const double mean =
          missing.col(col).select(0.0, values.col(col)).sum() / double(observed);
      for (Eigen::Index i = 0; i < n; ++i) {
        if (missing(i, col)) values(i, col) = mean;
      }
    }
  }

  if (targets.empty()) {
    return result;  // complete data passes through unchanged
  }

  for (int round = 0; round < rounds; ++round) {
    for (int col : targets) {
      // Design matrix: intercept plus every other column's current values.
      Eigen::MatrixXd design(n, kImputeCols);
      design.col(0).setOnes();
      int d = 1;
      for (int other = 0; other < kImputeCols; ++other) {
        if (other == col) continue;
        design.col(d++) = values.col(other);
      }
      std::vector<Eigen::Index> observed_rows;
      observed_rows.reserve(static_cast<std::size_t>(n));
      for (Eigen::Index i = 0; i < n; ++i) {
        if (!missing(i, col)) observed_rows.push_back(i);
      }
      Eigen::MatrixXd x_obs(static_cast<Eigen::Index>(observed_rows.size()), d);
      Eigen::VectorXd y_obs(static_cast<Eigen::Index>(observed_rows.size()));
      for (std::size_t r = 0; r < observed_rows.size(); ++r) {
        x_obs.row(static_cast<Eigen::Index>(r)) = design.row(observed_rows[r]).head(d);
        y_obs[static_cast<Eigen::Index>(r)] = values(observed_rows[r], col);
      }
      // Rank-revealing QR tolerates constant and collinear regressors.
      const Eigen::VectorXd beta = x_obs.colPivHouseholderQr().solve(y_obs);
      for (Eigen::Index i = 0; i < n; ++i) {
        if (missing(i, col)) {
          values(i, col) = design.row(i).head(d).dot(beta);
        }
      }
    }
  }

  for (Eigen::Index i = 0; i < n; ++i) {
    MeterPoint& p = result.series.points[static_cast<std::size_t>(i)];
    if (missing(i, kReadingCol) &&
        std::find(targets.begin(), targets.end(), kReadingCol) != targets.end()) {
      p.reading = values(i, kReadingCol);
      result.imputed_cells += 1;
    }
    if (missing(i, kTemperatureCol) &&
        std::find(targets.begin(), targets.end(), kTemperatureCol) != targets.end()) {
      p.temperature = values(i, kTemperatureCol);
      result.imputed_cells += 1;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Differencing and feature engineering
// ---------------------------------------------------------------------------

DiffResult diff_consumption(const RawSeries& series) {
  for (const MeterPoint& p : series.points) {
    if (!p.reading.has_value()) {
      throw StateError("diff_consumption requires imputed readings; absent at " +
                       format_iso8601_utc(p.ts));
    }
  }
  DiffResult result;
  const Eigen::Index n_out =
      std::max<Eigen::Index>(0, static_cast<Eigen::Index>(series.points.size()) - 1);
  result.frame.resize(n_out);
  for (Eigen::Index i = 0; i < n_out; ++i) {
    const MeterPoint& prev = series.points[static_cast<std::size_t>(i)];
    const MeterPoint& cur = series.points[static_cast<std::size_t>(i) + 1];
    double delta = *cur.reading - *prev.reading;
    if (delta < 0.0) {
      delta = 0.0;  // meter reset; evidence kept in the clamp count
      result.clamped += 1;
    }
    result.frame.timestamps[static_cast<std::size_t>(i)] = cur.ts;
    result.frame.consumption[i] = delta;
    result.frame.temperature[i] = cur.temperature.value_or(kNaN);
    result.frame.holiday[i] = cur.is_holiday ? 1.0 : 0.0;
  }
  return result;
}

namespace {

constexpr Eigen::Index kLagHours[4] = {1, 2, 24, 720};

}  // namespace

FeatureFrame engineer_features(const FeatureFrame& frame) {
  const Eigen::Index n = frame.rows();
  if (n < 721) {
    throw InsufficientDataError(
        "feature engineering needs at least 721 rows for the monthly lag, got " +
        std::to_string(n));
  }

  std::vector<Eigen::Index> keep;
  keep.reserve(static_cast<std::size_t>(n));
  for (Eigen::Index i = 720; i < n; ++i) {
    if (std::isnan(frame.temperature[i])) continue;
    bool lags_on_grid = true;
    for (Eigen::Index lag : kLagHours) {
      if (frame.timestamps[static_cast<std::size_t>(i)] -
              frame.timestamps[static_cast<std::size_t>(i - lag)] !=
          lag * kSecondsPerHour) {
        lags_on_grid = false;  // lag window crosses a gap
        break;
      }
    }
    if (lags_on_grid) keep.push_back(i);
  }

  FeatureFrame out;
  out.resize(static_cast<Eigen::Index>(keep.size()));
  for (std::size_t r = 0; r < keep.size(); ++r) {
    const Eigen::Index i = keep[r];
    const UnixTime ts = frame.timestamps[static_cast<std::size_t>(i)];
    const CivilDateTime c = to_civil(ts);
    const Eigen::Index o = static_cast<Eigen::Index>(r);
    out.timestamps[r] = ts;
    out.consumption[o] = frame.consumption[i];
    out.lag1[o] = frame.consumption[i - 1];
    out.lag2[o] = frame.consumption[i - 2];
    out.day_shift[o] = frame.consumption[i - 24];
    out.month_shift[o] = frame.consumption[i - 720];
    out.temperature[o] = frame.temperature[i];
    out.holiday[o] = frame.holiday[i];
    out.weekday[o] = weekday_monday0(ts);
    out.hour[o] = c.hour;
    out.month[o] = c.month;
    out.day[o] = c.day;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

Period parse_period(std::string_view name) {
  if (name == "daily") return Period::Daily;
  if (name == "weekly") return Period::Weekly;
  if (name == "monthly") return Period::Monthly;
  if (name == "quarterly") return Period::Quarterly;
  if (name == "half-yearly") return Period::HalfYearly;
  throw SchemaError("unknown resample period: " + std::string(name));
}

std::string_view period_name(Period period) {
  switch (period) {
    case Period::Daily: return "daily";
    case Period::Weekly: return "weekly";
    case Period::Monthly: return "monthly";
    case Period::Quarterly: return "quarterly";
    case Period::HalfYearly: return "half-yearly";
  }
  return "?";
}

std::vector<ResampleRow> resample(const FeatureFrame& frame, Period period) {
  UnixTime (*floor_fn)(UnixTime) = nullptr;
  switch (period) {
    case Period::Daily: floor_fn = floor_to_day; break;
    case Period::Weekly: floor_fn = floor_to_week; break;
    case Period::Monthly: floor_fn = floor_to_month; break;
    case Period::Quarterly: floor_fn = floor_to_quarter; break;
    case Period::HalfYearly: floor_fn = floor_to_half_year; break;
  }
  std::map<UnixTime, std::pair<double, std::int64_t>> buckets;
  for (Eigen::Index i = 0; i < frame.rows(); ++i) {
    auto& bucket = buckets[floor_fn(frame.timestamps[static_cast<std::size_t>(i)])];
    bucket.first += frame.consumption[i];
    bucket.second += 1;
  }
  std::vector<ResampleRow> rows;
  rows.reserve(buckets.size());
  for (const auto& [start, agg] : buckets) {
    rows.push_back(ResampleRow{start, agg.first / static_cast<double>(agg.second)});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Frame CSV
// ---------------------------------------------------------------------------

void write_frame_csv(const FeatureFrame& frame, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot write file: " + path.string());
  }
  out << kFrameCsvHeader << "\n";
  std::string line;
  for (Eigen::Index i = 0; i < frame.rows(); ++i) {
    line.clear();
    line += format_iso8601_utc(frame.timestamps[static_cast<std::size_t>(i)]);
    for (const Eigen::VectorXd* col :
         {&frame.consumption, &frame.lag1, &frame.lag2, &frame.day_shift,
          &frame.month_shift, &frame.temperature, &frame.holiday,
          &frame.weekday, &frame.hour, &frame.month, &frame.day}) {
      line += ',';
      csv::append_double(line, (*col)[i]);
    }
    line += '\n';
    out << line;
  }
  if (!out) {
    throw IoError("write failed: " + path.string());
  }
}

FeatureRow parse_frame_row(std::string_view line, std::size_t line_number) {
  std::vector<std::string_view> fields = csv::split(csv::strip_cr(line));
  if (fields.size() != 12) {
    throw ParseError("frame row " + std::to_string(line_number) +
                     ": expected 12 fields, got " + std::to_string(fields.size()));
  }
  FeatureRow r;
  r.ts = parse_iso8601_utc(fields[0]);
  r.consumption = csv::parse_double(fields[1], "consumption");
  r.lag1 = csv::parse_double(fields[2], "lag1");
  r.lag2 = csv::parse_double(fields[3], "lag2");
  r.day_shift = csv::parse_double(fields[4], "day_shift");
  r.month_shift = csv::parse_double(fields[5], "month_shift");
  r.temperature = csv::parse_double(fields[6], "temperature");
  r.holiday = csv::parse_double(fields[7], "holiday");
  r.weekday = csv::parse_double(fields[8], "weekday");
  r.hour = csv::parse_double(fields[9], "hour");
  r.month = csv::parse_double(fields[10], "month");
  r.day = csv::parse_double(fields[11], "day");
  return r;
}

FeatureFrame read_frame_csv(const std::filesystem::path& path) {
  std::ifstream in = open_input(path);
  std::string line;
  if (!std::getline(in, line)) {
    throw SchemaError("empty frame file: " + path.string());
  }
  require_header(line, kFrameCsvHeader, path);

  std::vector<FeatureRow> rows;
  std::size_t line_number = 1;
  while (std::getline(in, line)) {
    ++line_number;
    if (csv::strip_cr(line).empty()) continue;
    rows.push_back(parse_frame_row(line, line_number));
  }

  FeatureFrame frame;
  frame.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const FeatureRow& r = rows[i];
    const Eigen::Index o = static_cast<Eigen::Index>(i);
    frame.timestamps[i] = r.ts;
    frame.consumption[o] = r.consumption;
    frame.lag1[o] = r.lag1;
    frame.lag2[o] = r.lag2;
    frame.day_shift[o] = r.day_shift;
    frame.month_shift[o] = r.month_shift;
    frame.temperature[o] = r.temperature;
    frame.holiday[o] = r.holiday;
    frame.weekday[o] = r.weekday;
    frame.hour[o] = r.hour;
    frame.month[o] = r.month;
    frame.day[o] = r.day;
  }
  return frame;
}

}  // namespace metersentry::ingest
