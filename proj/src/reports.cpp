#include "metersentry/reports.hpp"

#include <cmath>
#include <fstream>

#include "metersentry/csv.hpp"
#include "metersentry/errors.hpp"
#include "metersentry/version.hpp"

namespace metersentry::reports {

namespace {

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write file: " + path.string());
  return out;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace

std::string anomaly_jsonl_line(const threshold::AnomalyRecord& r) {
  json j;
  j["ts"] = format_iso8601_utc(r.ts);
  j["cs"] = r.cs;
  if (std::isinf(r.threshold)) {
    j["threshold"] = "inf";
  } else {
    j["threshold"] = r.threshold;
  }
  j["mse"] = r.mse;
  j["md"] = r.md;
  j["anomaly"] = r.is_anomaly ? 1 : 0;
  return j.dump();
}

void write_anomalies_jsonl(std::span<const threshold::AnomalyRecord> records,
                           const threshold::DetectSummary& summary,
                           const std::string& cs_mode,
                           const std::filesystem::path& path) {
  std::ofstream out = open_output(path);
  for (const threshold::AnomalyRecord& r : records) {
    out << anomaly_jsonl_line(r) << '\n';
  }
  json s;
  s["summary"] = {{"records", summary.records},
                  {"flagged", summary.flagged},
                  {"w", summary.w},
                  {"k", summary.k},
                  {"cs_mode", cs_mode}};
  out << s.dump() << '\n';
  finish(out, path);
}

void write_plot_csv(std::span<const threshold::AnomalyRecord> records,
                    const std::filesystem::path& path) {
  std::ofstream out = open_output(path);
  out << "timestamp,cs,threshold,anomaly\n";
  std::string line;
  for (const threshold::AnomalyRecord& r : records) {
    line.clear();
    line += format_iso8601_utc(r.ts);
    line += ',';
    csv::append_double(line, r.cs);
    line += ',';
    if (std::isinf(r.threshold)) {
      line += "inf";
    } else {
      csv::append_double(line, r.threshold);
    }
    line += ',';
    line += r.is_anomaly ? '1' : '0';
    line += '\n';
    out << line;
  }
  finish(out, path);
}

void write_scores_csv(std::span<const scoring::ScoreRecord> records,
                      const std::filesystem::path& path) {
  std::ofstream out = open_output(path);
  out << "timestamp,mse,md,cs\n";
  std::string line;
  for (const scoring::ScoreRecord& r : records) {
    line.clear();
    line += format_iso8601_utc(r.ts);
    line += ',';
    csv::append_double(line, r.mse);
    line += ',';
    csv::append_double(line, r.md);
    line += ',';
    csv::append_double(line, r.cs);
    line += '\n';
    out << line;
  }
  finish(out, path);
}

void write_histogram_csv(std::span<const stats::HistogramBin> bins,
                         const std::filesystem::path& path) {
  std::ofstream out = open_output(path);
  out << "bin_left,bin_right,count\n";
  std::string line;
  for (const stats::HistogramBin& b : bins) {
    line.clear();
    csv::append_double(line, b.left);
    line += ',';
    csv::append_double(line, b.right);
    line += ',';
    line += std::to_string(b.count);
    line += '\n';
    out << line;
  }
  finish(out, path);
}

void write_train_report_csv(const nn::TrainReport& report,
                            const std::filesystem::path& path) {
  std::ofstream out = open_output(path);
  out << "epoch,train_loss,val_loss\n";
  std::string line;
  for (std::size_t e = 0; e < report.train_loss.size(); ++e) {
    line.clear();
    line += std::to_string(e + 1);
    line += ',';
    csv::append_double(line, report.train_loss[e]);
    line += ',';
    csv::append_double(line, report.val_loss[e]);
    line += '\n';
    out << line;
  }
  finish(out, path);
}

void write_resample_csv(std::span<const ingest::ResampleRow> rows,
                        const std::filesystem::path& path) {
  std::ofstream out = open_output(path);
  out << "period_start,mean_consumption\n";
  std::string line;
  for (const ingest::ResampleRow& r : rows) {
    line.clear();
    line += format_iso8601_utc(r.period_start);
    line += ',';
    csv::append_double(line, r.mean_consumption);
    line += '\n';
    out << line;
  }
  finish(out, path);
}

json gap_report_json(const ingest::GapReport& report) {
  json gaps = json::array();
  for (const ingest::Gap& g : report.gaps) {
    gaps.push_back({{"start", format_iso8601_utc(g.start)},
                    {"end", format_iso8601_utc(g.end)},
                    {"expected_points", g.expected_points}});
  }
  return json{{"gaps", gaps}, {"irregular_count", report.irregular_count}};
}

json summary_stats_json(const stats::SummaryStats& s) {
  return json{{"count", s.count}, {"mean", s.mean},     {"std", s.std},
              {"min", s.min},     {"max", s.max},       {"q25", s.q25},
              {"median", s.median}, {"q75", s.q75}};
}

json normality_json(const stats::NormalityResult& r) {
  json j;
  j["statistic"] = r.statistic;
  if (r.p_value.has_value()) {
    j["p_value"] = *r.p_value;
  } else {
    j["p_value"] = nullptr;
  }
  if (!r.critical_values.empty()) {
    json sig = json::array();
    json crit = json::array();
    for (const auto& [significance, value] : r.critical_values) {
      sig.push_back(significance);
      crit.push_back(value);
    }
    j["significance_levels"] = sig;
    j["critical_values"] = crit;
  }
  j["appears_normal_5pct"] = r.appears_normal_5pct;
  return j;
}

json metrics_json(const synth::Metrics& m) {
  return json{{"precision", m.precision},
              {"recall", m.recall},
              {"f1", m.f1},
              {"matched", m.matched},
              {"predicted_events", m.predicted_events},
              {"truth_events", m.truth_events}};
}

void write_meta_sidecar(const std::filesystem::path& target, const json& config) {
  json meta;
  meta["tool"] = "metersentry";
  meta["version"] = kVersion;
  meta["config"] = config;
  const std::filesystem::path path = target.string() + ".meta.json";
  std::ofstream out = open_output(path);
  out << meta.dump(2) << '\n';
  finish(out, path);
}

}  // namespace metersentry::reports
