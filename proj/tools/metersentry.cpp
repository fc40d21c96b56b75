// metersentry: smart-meter anomaly detection pipeline.
//
// Subcommands wire the library end to end: synth -> ingest -> stats -> train
// -> detect (batch or --stream) -> evaluate. Every output file gets a
// .meta.json sidecar echoing the tool version and the effective config, and
// all runs are deterministic given the same inputs and seed.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "metersentry/calendar.hpp"
#include "metersentry/csv.hpp"
#include "metersentry/errors.hpp"
#include "metersentry/ingest.hpp"
#include "metersentry/log.hpp"
#include "metersentry/neuralnet.hpp"
#include "metersentry/reports.hpp"
#include "metersentry/scoring.hpp"
#include "metersentry/stats.hpp"
#include "metersentry/synth.hpp"
#include "metersentry/threshold.hpp"
#include "metersentry/version.hpp"

namespace {

using json = nlohmann::ordered_json;
using namespace metersentry;

// Exit codes, stable and documented in the README:
//   0 success, 1 unexpected error, 2 missing input file, 3 schema/parse
//   error, 4 empty or insufficient data, 5 diverged training, 6 model or
//   feature misalignment, 7 invalid synthetic injection.
constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitMissingFile = 2;
constexpr int kExitSchema = 3;
constexpr int kExitInsufficient = 4;
constexpr int kExitDiverged = 5;
constexpr int kExitMisaligned = 6;
constexpr int kExitBadInjection = 7;

struct RunConfig {
  // Paths.
  std::string meter_csv;
  std::string meter_id;
  std::string weather_csv;
  std::string holiday_csv;
  std::string features_csv;
  std::string model_path;
  std::string gaussian_path;
  std::string anomalies_jsonl;
  std::string labels_csv;
  std::string out_dir = ".";

  // Training.
  long epochs = 50;
  long batch_size = 64;
  double learning_rate = 1e-3;
  double validation_fraction = 0.1;
  long patience = 10;
  std::uint64_t seed = 0;

  // Threshold.
  long w = 168;
  double k = 3.0;
  std::string cs_mode = "raw";  // raw | standardized

  // Ingest.
  long impute_rounds = 5;
  std::vector<std::string> resample_periods;

  // Synth.
  long days = 90;
  double base_level = 200;
  double daily_amplitude = 30;
  double weekly_amplitude = 15;
  double noise_std = 30;
  std::vector<std::string> spikes;        // OFFSET:MAGNITUDE[:DURATION]
  std::vector<std::string> dropouts;      // OFFSET[:DURATION]
  std::vector<std::string> level_shifts;  // OFFSET:MAGNITUDE:DURATION

  // Evaluate.
  long tolerance_hours = 0;
  long merge_gap_hours = 1;

  // Detect.
  double rate = 0.0;  // streamed rows per second; 0 = unthrottled
};

template <typename T>
void from_config(const json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

RunConfig load_config_file(const std::string& path) {
  RunConfig cfg;
  if (path.empty()) return cfg;
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("invalid config JSON in " + path + ": " + e.what());
  }
  from_config(j, "meter_csv", cfg.meter_csv);
  from_config(j, "meter_id", cfg.meter_id);
  from_config(j, "weather_csv", cfg.weather_csv);
  from_config(j, "holiday_csv", cfg.holiday_csv);
  from_config(j, "features_csv", cfg.features_csv);
  from_config(j, "model_path", cfg.model_path);
  from_config(j, "gaussian_path", cfg.gaussian_path);
  from_config(j, "anomalies_jsonl", cfg.anomalies_jsonl);
  from_config(j, "labels_csv", cfg.labels_csv);
  from_config(j, "out_dir", cfg.out_dir);
  from_config(j, "epochs", cfg.epochs);
  from_config(j, "batch_size", cfg.batch_size);
  from_config(j, "learning_rate", cfg.learning_rate);
  from_config(j, "validation_fraction", cfg.validation_fraction);
  from_config(j, "patience", cfg.patience);
  from_config(j, "seed", cfg.seed);
  from_config(j, "w", cfg.w);
  from_config(j, "k", cfg.k);
  from_config(j, "cs_mode", cfg.cs_mode);
  from_config(j, "impute_rounds", cfg.impute_rounds);
  from_config(j, "resample", cfg.resample_periods);
  from_config(j, "days", cfg.days);
  from_config(j, "base_level", cfg.base_level);
  from_config(j, "daily_amplitude", cfg.daily_amplitude);
  from_config(j, "weekly_amplitude", cfg.weekly_amplitude);
  from_config(j, "noise_std", cfg.noise_std);
  from_config(j, "spikes", cfg.spikes);
  from_config(j, "dropouts", cfg.dropouts);
  from_config(j, "level_shifts", cfg.level_shifts);
  from_config(j, "tolerance_hours", cfg.tolerance_hours);
  from_config(j, "merge_gap_hours", cfg.merge_gap_hours);
  from_config(j, "rate", cfg.rate);
  return cfg;
}

json effective_config(const RunConfig& cfg, const std::string& command) {
  json j;
  j["command"] = command;
  j["meter_csv"] = cfg.meter_csv;
  j["meter_id"] = cfg.meter_id;
  j["weather_csv"] = cfg.weather_csv;
  j["holiday_csv"] = cfg.holiday_csv;
  j["features_csv"] = cfg.features_csv;
  j["model_path"] = cfg.model_path;
  j["gaussian_path"] = cfg.gaussian_path;
  j["anomalies_jsonl"] = cfg.anomalies_jsonl;
  j["labels_csv"] = cfg.labels_csv;
  j["out_dir"] = cfg.out_dir;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["learning_rate"] = cfg.learning_rate;
  j["validation_fraction"] = cfg.validation_fraction;
  j["patience"] = cfg.patience;
  j["seed"] = cfg.seed;
  j["w"] = cfg.w;
  j["k"] = cfg.k;
  j["cs_mode"] = cfg.cs_mode;
  j["impute_rounds"] = cfg.impute_rounds;
  j["resample"] = cfg.resample_periods;
  j["days"] = cfg.days;
  j["base_level"] = cfg.base_level;
  j["daily_amplitude"] = cfg.daily_amplitude;
  j["weekly_amplitude"] = cfg.weekly_amplitude;
  j["noise_std"] = cfg.noise_std;
  j["spikes"] = cfg.spikes;
  j["dropouts"] = cfg.dropouts;
  j["level_shifts"] = cfg.level_shifts;
  j["tolerance_hours"] = cfg.tolerance_hours;
  j["merge_gap_hours"] = cfg.merge_gap_hours;
  j["rate"] = cfg.rate;
  return j;
}

std::filesystem::path out_file(const RunConfig& cfg, const std::string& name) {
  std::filesystem::create_directories(cfg.out_dir);
  return std::filesystem::path(cfg.out_dir) / name;
}

void require_input(const std::string& path, const std::string& what) {
  if (path.empty()) {
    throw IoError("no " + what + " given (flag or config)");
  }
  if (!std::filesystem::exists(path)) {
    throw IoError(what + " not found: " + path);
  }
}

// ---------------------------------------------------------------------------
// ingest
// ---------------------------------------------------------------------------

int cmd_ingest(const RunConfig& cfg) {
  require_input(cfg.meter_csv, "meter CSV");
  ingest::RawSeries meter = ingest::load_meter_csv(cfg.meter_csv, cfg.meter_id);
  const std::size_t raw_points = meter.points.size();

  ingest::WeatherTable weather;
  const bool have_weather = !cfg.weather_csv.empty();
  if (have_weather) {
    require_input(cfg.weather_csv, "weather CSV");
    weather = ingest::load_weather_csv(cfg.weather_csv);
  }
  ingest::HolidayTable holidays;
  if (!cfg.holiday_csv.empty()) {
    require_input(cfg.holiday_csv, "holiday CSV");
    holidays = ingest::load_holiday_csv(cfg.holiday_csv);
  }

  const ingest::RawSeries merged =
      ingest::merge_sources(std::move(meter), weather, holidays);
  const ingest::GapReport gaps = ingest::detect_gaps(merged, kSecondsPerHour);

  std::vector<ingest::SeriesColumn> columns = {ingest::SeriesColumn::Reading};
  if (have_weather) columns.push_back(ingest::SeriesColumn::Temperature);
  const ingest::ImputeResult imputed =
      ingest::impute_chained(merged, columns, static_cast<int>(cfg.impute_rounds));

  const ingest::DiffResult diffed = ingest::diff_consumption(imputed.series);
  const ingest::FeatureFrame frame = ingest::engineer_features(diffed.frame);
  if (frame.rows() == 0) {
    throw InsufficientDataError("no rows survive feature engineering");
  }

  const json meta = effective_config(cfg, "ingest");
  const auto features_path = out_file(cfg, "features.csv");
  ingest::write_frame_csv(frame, features_path);
  reports::write_meta_sidecar(features_path, meta);

  json report = reports::gap_report_json(gaps);
  report["clamped_negative_deltas"] = diffed.clamped;
  report["imputed_cells"] = imputed.imputed_cells;
  report["rows"] = {{"raw_points", raw_points},
                    {"after_differencing", diffed.frame.rows()},
                    {"final", frame.rows()}};
  report["meter_id"] = merged.meter_id;
  const auto report_path = out_file(cfg, "ingest_report.json");
  {
    std::ofstream out(report_path);
    out << report.dump(2) << '\n';
    if (!out) throw IoError("write failed: " + report_path.string());
  }
  reports::write_meta_sidecar(report_path, meta);

  for (const std::string& period_name : cfg.resample_periods) {
    const ingest::Period period = ingest::parse_period(period_name);
    const auto rows = ingest::resample(frame, period);
    const auto path = out_file(cfg, "resampled_" + period_name + ".csv");
    reports::write_resample_csv(rows, path);
    reports::write_meta_sidecar(path, meta);
  }

  log::info("ingest: " + std::to_string(frame.rows()) + " feature rows from " +
            std::to_string(raw_points) + " raw points");
  return kExitOk;
}

// ---------------------------------------------------------------------------
// stats
// ---------------------------------------------------------------------------

json column_stats(const Eigen::VectorXd& values) {
  json j;
  j["summary"] = reports::summary_stats_json(stats::summarize(values));
  try {
    j["ks_fitted"] = reports::normality_json(
        stats::ks_normality(values, stats::KsReference::FittedNormal));
    j["ks_standard_normal"] = reports::normality_json(
        stats::ks_normality(values, stats::KsReference::StandardNormal));
    j["anderson_darling"] = reports::normality_json(stats::anderson_darling(values));
  } catch (const DegenerateDistributionError&) {
    j["ks_fitted"] = nullptr;
    j["ks_standard_normal"] = nullptr;
    j["anderson_darling"] = nullptr;
  } catch (const InsufficientDataError&) {
    j["ks_fitted"] = nullptr;
    j["ks_standard_normal"] = nullptr;
    j["anderson_darling"] = nullptr;
  }
  try {
    j["iqr_outliers"] =
        static_cast<std::int64_t>(stats::iqr_outliers(values).count());
  } catch (const InsufficientDataError&) {
    j["iqr_outliers"] = nullptr;
  }
  return j;
}

int cmd_stats(const RunConfig& cfg, bool with_corr) {
  require_input(cfg.features_csv, "features CSV");
  const ingest::FeatureFrame frame = ingest::read_frame_csv(cfg.features_csv);
  if (frame.rows() == 0) {
    throw InsufficientDataError("features file has no rows");
  }

  json doc;
  doc["meta"] = {{"tool", "metersentry"},
                 {"version", kVersion},
                 {"config", effective_config(cfg, "stats")}};
  doc["rows"] = frame.rows();
  const std::vector<std::string> numeric_columns = {
      "consumption", "lag1",    "lag2",    "day_shift", "month_shift",
      "temperature", "holiday", "weekday", "hour",      "month",
      "day"};
  for (const std::string& name : numeric_columns) {
    doc["columns"][name] = column_stats(frame.column(name));
  }

  if (with_corr) {
    // Constant columns carry no correlation signal; list them instead of
    // failing the whole document.
    std::vector<std::string> kept;
    std::vector<std::string> dropped;
    for (const std::string& name : numeric_columns) {
      const Eigen::VectorXd& col = frame.column(name);
      ((col.array() == col[0]).all() ? dropped : kept).push_back(name);
    }
    Eigen::MatrixXd data(frame.rows(), static_cast<Eigen::Index>(kept.size()));
    for (std::size_t c = 0; c < kept.size(); ++c) {
      data.col(static_cast<Eigen::Index>(c)) = frame.column(kept[c]);
    }
    const Eigen::MatrixXd corr = stats::correlation_matrix(data, kept);
    json matrix = json::array();
    for (Eigen::Index r = 0; r < corr.rows(); ++r) {
      std::vector<double> row(static_cast<std::size_t>(corr.cols()));
      for (Eigen::Index c = 0; c < corr.cols(); ++c) {
        row[static_cast<std::size_t>(c)] = corr(r, c);
      }
      matrix.push_back(row);
    }
    doc["correlation"] = {{"columns", kept},
                          {"matrix", matrix},
                          {"dropped_constant_columns", dropped}};
  }

  std::cout << doc.dump(2) << '\n';
  if (cfg.out_dir != ".") {
    const auto path = out_file(cfg, "stats.json");
    std::ofstream out(path);
    out << doc.dump(2) << '\n';
    if (!out) throw IoError("write failed: " + path.string());
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int cmd_train(const RunConfig& cfg) {
  require_input(cfg.features_csv, "features CSV");
  const ingest::FeatureFrame frame = ingest::read_frame_csv(cfg.features_csv);

  const Eigen::Index window_len = 24;
  if (frame.rows() < window_len) {
    throw InsufficientDataError("features file too short for one window");
  }
  const Eigen::Index n_windows = frame.rows() - window_len + 1;
  const Eigen::Index n_val = static_cast<Eigen::Index>(
      std::floor(cfg.validation_fraction * static_cast<double>(n_windows)));
  const Eigen::Index n_train = n_windows - n_val;
  // Rows covered by some training window; the tail is validation-only.
  const Eigen::Index train_row_end = (n_train - 1) + window_len;

  const nn::NormalizationConstants norm =
      nn::fit_normalization(frame.consumption.head(train_row_end));
  const nn::WindowSet windows = nn::make_windows(frame, window_len, 1, norm);

  nn::ConvAutoencoder model = nn::ConvAutoencoder::canonical();
  nn::TrainConfig train_config;
  train_config.epochs = cfg.epochs;
  train_config.batch_size = cfg.batch_size;
  train_config.learning_rate = cfg.learning_rate;
  train_config.validation_fraction = cfg.validation_fraction;
  train_config.seed = cfg.seed;
  train_config.patience = cfg.patience;
  const nn::TrainReport report = nn::train(model, windows, train_config);

  const scoring::GaussianModel gaussian =
      scoring::fit_gaussian(frame.context_features().topRows(train_row_end));

  const json meta = effective_config(cfg, "train");
  const auto model_path = cfg.model_path.empty()
                              ? out_file(cfg, "model.bin")
                              : std::filesystem::path(cfg.model_path);
  nn::save_model(model, model_path);
  reports::write_meta_sidecar(model_path, meta);

  const auto gaussian_path = cfg.gaussian_path.empty()
                                 ? out_file(cfg, "gaussian.json")
                                 : std::filesystem::path(cfg.gaussian_path);
  scoring::save_gaussian(gaussian, gaussian_path);
  reports::write_meta_sidecar(gaussian_path, meta);

  const auto report_path = out_file(cfg, "train_report.csv");
  reports::write_train_report_csv(report, report_path);
  reports::write_meta_sidecar(report_path, meta);

  log::info("train: " + std::to_string(report.epochs_run) + " epochs, best " +
            std::to_string(report.best_epoch + 1) + ", final val loss " +
            std::to_string(report.val_loss.back()));
  return kExitOk;
}

// ---------------------------------------------------------------------------
// detect
// ---------------------------------------------------------------------------

struct JsonlStreamSink : threshold::StreamSink {
  std::vector<threshold::AnomalyRecord> records;
  bool echo;
  explicit JsonlStreamSink(bool echo_stdout) : echo(echo_stdout) {}
  void on_record(const threshold::AnomalyRecord& r) override {
    records.push_back(r);
    if (echo) std::cout << reports::anomaly_jsonl_line(r) << '\n';
  }
  void on_reset(UnixTime ts) override {
    if (echo) {
      std::cout << R"({"event": "window_reset", "ts": ")"
                << format_iso8601_utc(ts) << "\"}\n";
    }
  }
};

void write_detect_outputs(const RunConfig& cfg,
                          const std::vector<scoring::ScoreRecord>& scores,
                          const std::vector<threshold::AnomalyRecord>& records,
                          const threshold::DetectSummary& summary) {
  const json meta = effective_config(cfg, "detect");

  const auto anomalies_path = out_file(cfg, "anomalies.jsonl");
  reports::write_anomalies_jsonl(records, summary, cfg.cs_mode, anomalies_path);
  reports::write_meta_sidecar(anomalies_path, meta);

  const auto plot_path = out_file(cfg, "plot.csv");
  reports::write_plot_csv(records, plot_path);
  reports::write_meta_sidecar(plot_path, meta);

  const auto scores_path = out_file(cfg, "scores.csv");
  reports::write_scores_csv(scores, scores_path);
  reports::write_meta_sidecar(scores_path, meta);

  if (!scores.empty()) {
    Eigen::VectorXd mses(static_cast<Eigen::Index>(scores.size()));
    for (std::size_t i = 0; i < scores.size(); ++i) {
      mses[static_cast<Eigen::Index>(i)] = scores[i].mse;
    }
    const auto hist_path = out_file(cfg, "mse_histogram.csv");
    reports::write_histogram_csv(stats::histogram(mses, 50), hist_path);
    reports::write_meta_sidecar(hist_path, meta);
  }
}

json summary_json(const threshold::DetectSummary& summary, const RunConfig& cfg,
                  std::int64_t resets = -1) {
  json s = {{"records", summary.records},
            {"flagged", summary.flagged},
            {"w", summary.w},
            {"k", summary.k},
            {"cs_mode", cfg.cs_mode}};
  if (resets >= 0) s["resets"] = resets;
  return json{{"summary", s}};
}

int cmd_detect_batch(const RunConfig& cfg) {
  require_input(cfg.features_csv, "features CSV");
  require_input(cfg.model_path, "model file");
  require_input(cfg.gaussian_path, "gaussian file");

  const ingest::FeatureFrame frame = ingest::read_frame_csv(cfg.features_csv);
  const nn::ConvAutoencoder model = nn::load_model(cfg.model_path);
  const scoring::GaussianModel gaussian = scoring::load_gaussian(cfg.gaussian_path);

  const nn::WindowSet windows = nn::make_windows(
      frame, model.expected_input_length(), 1, model.normalization);
  std::vector<scoring::ScoreRecord> scores =
      scoring::score_series(model, gaussian, frame, windows);
  if (cfg.cs_mode == "standardized") {
    scoring::standardize_scores(scores);
  } else if (cfg.cs_mode != "raw") {
    throw ContractError("cs_mode must be raw or standardized, got " + cfg.cs_mode);
  }

  threshold::DetectSummary summary;
  const auto records = threshold::detect(scores, cfg.w, cfg.k, &summary);
  write_detect_outputs(cfg, scores, records, summary);
  std::cout << summary_json(summary, cfg).dump() << '\n';
  return kExitOk;
}

int cmd_detect_stream(const RunConfig& cfg) {
  require_input(cfg.model_path, "model file");
  require_input(cfg.gaussian_path, "gaussian file");
  if (cfg.cs_mode != "raw") {
    throw ContractError(
        "streaming supports cs_mode=raw only; standardized needs the full batch");
  }
  const nn::ConvAutoencoder model = nn::load_model(cfg.model_path);
  const scoring::GaussianModel gaussian = scoring::load_gaussian(cfg.gaussian_path);

  const auto delay = cfg.rate > 0.0
                         ? std::chrono::duration<double>(1.0 / cfg.rate)
                         : std::chrono::duration<double>(0.0);
  std::size_t line_number = 0;
  threshold::FeatureRowSource source =
      [&]() -> std::optional<ingest::FeatureRow> {
    std::string line;
    while (std::getline(std::cin, line)) {
      ++line_number;
      if (csv::strip_cr(line).empty()) continue;
      if (line_number == 1 && line.rfind("timestamp,", 0) == 0) continue;
      if (delay.count() > 0) std::this_thread::sleep_for(delay);
      return ingest::parse_frame_row(line, line_number);
    }
    return std::nullopt;
  };

  JsonlStreamSink sink(/*echo_stdout=*/true);
  const threshold::StreamSummary stream_summary =
      threshold::stream_detect(model, gaussian, source, cfg.w, cfg.k, sink);

  threshold::DetectSummary summary;
  summary.records = stream_summary.records;
  summary.flagged = stream_summary.flagged;
  summary.w = cfg.w;
  summary.k = cfg.k;

  std::vector<scoring::ScoreRecord> scores;
  scores.reserve(sink.records.size());
  for (const auto& r : sink.records) {
    scores.push_back({r.ts, r.mse, r.md, r.cs});
  }
  write_detect_outputs(cfg, scores, sink.records, summary);
  std::cout << summary_json(summary, cfg, stream_summary.resets).dump() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

synth::Injection parse_injection(const std::string& text, synth::AnomalyKind kind) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t colon = text.find(':', start);
    if (colon == std::string::npos) {
      parts.push_back(text.substr(start));
      break;
    }
    parts.push_back(text.substr(start, colon - start));
    start = colon + 1;
  }
  try {
    synth::Injection inj;
    inj.kind = kind;
    inj.offset_hours = std::stoll(parts.at(0));
    if (kind == synth::AnomalyKind::Dropout) {
      inj.duration_hours = parts.size() > 1 ? std::stoll(parts.at(1)) : 1;
    } else {
      inj.magnitude = std::stod(parts.at(1));
      inj.duration_hours = parts.size() > 2 ? std::stoll(parts.at(2)) : 1;
    }
    return inj;
  } catch (const std::exception&) {
    throw SchemaError("bad injection spec '" + text +
                      "' (want OFFSET:MAGNITUDE[:DURATION])");
  }
}

int cmd_synth(const RunConfig& cfg) {
  synth::SynthConfig config;
  config.days = cfg.days;
  config.base_level = cfg.base_level;
  config.daily_amplitude = cfg.daily_amplitude;
  config.weekly_amplitude = cfg.weekly_amplitude;
  config.noise_std = cfg.noise_std;
  config.seed = cfg.seed;
  for (const std::string& s : cfg.spikes) {
    config.anomalies.push_back(parse_injection(s, synth::AnomalyKind::Spike));
  }
  for (const std::string& s : cfg.dropouts) {
    config.anomalies.push_back(parse_injection(s, synth::AnomalyKind::Dropout));
  }
  for (const std::string& s : cfg.level_shifts) {
    config.anomalies.push_back(parse_injection(s, synth::AnomalyKind::LevelShift));
  }

  const synth::LabeledSeries series = synth::generate(config);
  const json meta = effective_config(cfg, "synth");

  const auto meter_path = out_file(cfg, "meter.csv");
  synth::write_meter_csv(series, meter_path);
  reports::write_meta_sidecar(meter_path, meta);

  const auto weather_path = out_file(cfg, "weather.csv");
  synth::write_weather_csv(series, weather_path);
  reports::write_meta_sidecar(weather_path, meta);

  const auto labels_path = out_file(cfg, "labels.csv");
  synth::write_labels_csv(series, labels_path);
  reports::write_meta_sidecar(labels_path, meta);

  log::info("synth: " + std::to_string(series.size()) + " hourly points, " +
            std::to_string(config.anomalies.size()) + " injections");
  return kExitOk;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

int cmd_evaluate(const RunConfig& cfg) {
  require_input(cfg.anomalies_jsonl, "anomalies JSONL");
  require_input(cfg.labels_csv, "labels CSV");

  std::vector<UnixTime> flagged;
  {
    std::ifstream in(cfg.anomalies_jsonl);
    std::string line;
    std::size_t line_number = 0;
    while (std::getline(in, line)) {
      ++line_number;
      if (line.empty()) continue;
      json j;
      try {
        j = json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw ParseError("line " + std::to_string(line_number) + " of " +
                         cfg.anomalies_jsonl + ": " + e.what());
      }
      if (!j.contains("ts")) continue;  // trailing summary or reset event
      if (j.value("anomaly", 0) == 1) {
        flagged.push_back(parse_iso8601_utc(j.at("ts").get<std::string>()));
      }
    }
  }

  std::vector<UnixTime> labeled;
  {
    std::ifstream in(cfg.labels_csv);
    std::string line;
    if (!std::getline(in, line) ||
        csv::strip_cr(line) != std::string_view("timestamp,label")) {
      throw SchemaError("labels file must start with 'timestamp,label': " +
                        cfg.labels_csv);
    }
    std::size_t line_number = 1;
    while (std::getline(in, line)) {
      ++line_number;
      const std::string_view trimmed = csv::strip_cr(line);
      if (trimmed.empty()) continue;
      const auto fields = csv::split(trimmed);
      if (fields.size() != 2) {
        throw ParseError("line " + std::to_string(line_number) + " of " +
                         cfg.labels_csv + ": expected 2 fields");
      }
      if (csv::parse_int(fields[1], "label") != 0) {
        labeled.push_back(parse_iso8601_utc(fields[0]));
      }
    }
  }

  const synth::Metrics metrics =
      synth::evaluate_events(flagged, labeled, cfg.tolerance_hours,
                             cfg.merge_gap_hours);
  json doc;
  doc["meta"] = {{"tool", "metersentry"},
                 {"version", kVersion},
                 {"config", effective_config(cfg, "evaluate")}};
  doc["metrics"] = reports::metrics_json(metrics);
  std::cout << doc.dump(2) << '\n';
  return kExitOk;
}

int run(int argc, char** argv) {
  // The config file seeds the defaults; explicit flags override it.
  std::string config_path;
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string_view(argv[i]) == "--config") {
      config_path = argv[i + 1];
    }
  }
  RunConfig cfg = load_config_file(config_path);

  CLI::App app{"metersentry: smart-meter anomaly detection pipeline"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("metersentry ") + kVersion);

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path,
                    "JSON config file (flags override its values)");
    cmd->add_option("--out", cfg.out_dir, "output directory");
    cmd->add_option("--seed", cfg.seed, "deterministic seed");
  };

  CLI::App* ingest_cmd =
      app.add_subcommand("ingest", "meter/weather/holiday CSVs -> feature CSV");
  add_common(ingest_cmd);
  ingest_cmd->add_option("--meter", cfg.meter_csv,
                         "meter CSV (timestamp,meter_id,reading)");
  ingest_cmd->add_option("--meter-id", cfg.meter_id,
                         "select one meter stream from a multi-meter file");
  ingest_cmd->add_option("--weather", cfg.weather_csv,
                         "weather CSV (timestamp,temperature)");
  ingest_cmd->add_option("--holidays", cfg.holiday_csv, "holiday CSV (date)");
  ingest_cmd->add_option("--impute-rounds", cfg.impute_rounds,
                         "chained-imputation iterations");
  ingest_cmd->add_option("--resample", cfg.resample_periods,
                         "also emit mean-resampled CSVs "
                         "(daily|weekly|monthly|quarterly|half-yearly)");

  bool with_corr = false;
  CLI::App* stats_cmd =
      app.add_subcommand("stats", "summaries, normality tests, outlier counts");
  add_common(stats_cmd);
  stats_cmd->add_option("--features", cfg.features_csv, "feature CSV from ingest");
  stats_cmd->add_flag("--corr", with_corr, "include the correlation matrix");

  CLI::App* train_cmd =
      app.add_subcommand("train", "train the autoencoder and context model");
  add_common(train_cmd);
  train_cmd->add_option("--features", cfg.features_csv, "feature CSV from ingest");
  train_cmd->add_option("--model", cfg.model_path, "model output path");
  train_cmd->add_option("--gaussian", cfg.gaussian_path, "context model output path");
  train_cmd->add_option("--epochs", cfg.epochs, "epoch budget");
  train_cmd->add_option("--batch-size", cfg.batch_size, "mini-batch size");
  train_cmd->add_option("--lr", cfg.learning_rate, "learning rate");
  train_cmd->add_option("--val-fraction", cfg.validation_fraction,
                        "final fraction of windows held out");
  train_cmd->add_option("--patience", cfg.patience,
                        "early-stop patience (0 disables)");

  bool stream_mode = false;
  CLI::App* detect_cmd =
      app.add_subcommand("detect", "score windows and flag anomalies");
  add_common(detect_cmd);
  detect_cmd->add_option("--features", cfg.features_csv, "feature CSV to score");
  detect_cmd->add_option("--model", cfg.model_path, "trained model file");
  detect_cmd->add_option("--gaussian", cfg.gaussian_path, "context model file");
  detect_cmd->add_option("--w", cfg.w, "threshold window size");
  detect_cmd->add_option("--k", cfg.k, "threshold multiplier");
  detect_cmd->add_option("--cs-mode", cfg.cs_mode, "raw | standardized");
  detect_cmd->add_flag("--stream", stream_mode,
                       "replay feature CSV rows from stdin");
  detect_cmd->add_option("--rate", cfg.rate,
                         "streamed rows per second (0 = unthrottled)");

  CLI::App* synth_cmd =
      app.add_subcommand("synth", "generate labeled synthetic meter data");
  add_common(synth_cmd);
  synth_cmd->add_option("--days", cfg.days, "days of hourly data");
  synth_cmd->add_option("--base", cfg.base_level, "base consumption level");
  synth_cmd->add_option("--daily-amp", cfg.daily_amplitude,
                        "daily sinusoid amplitude");
  synth_cmd->add_option("--weekly-amp", cfg.weekly_amplitude,
                        "weekly sinusoid amplitude");
  synth_cmd->add_option("--noise-std", cfg.noise_std, "gaussian noise std");
  synth_cmd->add_option("--spike", cfg.spikes, "OFFSET:MAGNITUDE[:DURATION]");
  synth_cmd->add_option("--dropout", cfg.dropouts, "OFFSET[:DURATION]");
  synth_cmd->add_option("--level-shift", cfg.level_shifts,
                        "OFFSET:MAGNITUDE:DURATION");

  CLI::App* evaluate_cmd =
      app.add_subcommand("evaluate", "score detections against labels");
  add_common(evaluate_cmd);
  evaluate_cmd->add_option("--anomalies", cfg.anomalies_jsonl, "anomalies JSONL");
  evaluate_cmd->add_option("--labels", cfg.labels_csv, "labels CSV");
  evaluate_cmd->add_option("--tolerance-hours", cfg.tolerance_hours,
                           "event match tolerance");
  evaluate_cmd->add_option("--merge-gap-hours", cfg.merge_gap_hours,
                           "flags closer than this merge into one event "
                           "(24 = one window length)");

  CLI11_PARSE(app, argc, argv);

  if (ingest_cmd->parsed()) return cmd_ingest(cfg);
  if (stats_cmd->parsed()) return cmd_stats(cfg, with_corr);
  if (train_cmd->parsed()) return cmd_train(cfg);
  if (detect_cmd->parsed()) {
    return stream_mode ? cmd_detect_stream(cfg) : cmd_detect_batch(cfg);
  }
  if (synth_cmd->parsed()) return cmd_synth(cfg);
  if (evaluate_cmd->parsed()) return cmd_evaluate(cfg);
  return kExitInternal;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitMissingFile;
  } catch (const DivergedTrainingError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitDiverged;
  } catch (const InvalidInjectionError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitBadInjection;
  } catch (const AlignmentError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitMisaligned;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitMisaligned;
  } catch (const CorruptModelError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitMisaligned;
  } catch (const InsufficientDataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInsufficient;
  } catch (const CannotImputeError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInsufficient;
  } catch (const DegenerateDistributionError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInsufficient;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitSchema;
  } catch (const SchemaError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitSchema;
  } catch (const OrderingError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitSchema;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInternal;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
}
