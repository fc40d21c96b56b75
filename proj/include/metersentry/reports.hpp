#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "metersentry/ingest.hpp"
#include "metersentry/neuralnet.hpp"
#include "metersentry/scoring.hpp"
#include "metersentry/stats.hpp"
#include "metersentry/synth.hpp"
#include "metersentry/threshold.hpp"

namespace metersentry::reports {

using json = nlohmann::ordered_json;

/// {"ts": ISO-8601, "cs": float, "threshold": float or "inf", "mse": float,
///  "md": float, "anomaly": 0|1}
std::string anomaly_jsonl_line(const threshold::AnomalyRecord& record);

/// One JSONL object per record, then one summary object
/// {"summary": {...flagged count, w, k, cs_mode...}}.
void write_anomalies_jsonl(std::span<const threshold::AnomalyRecord> records,
                           const threshold::DetectSummary& summary,
                           const std::string& cs_mode,
                           const std::filesystem::path& path);

/// CSV `timestamp,cs,threshold,anomaly`; +infinity renders as "inf".
void write_plot_csv(std::span<const threshold::AnomalyRecord> records,
                    const std::filesystem::path& path);

/// CSV `timestamp,mse,md,cs`.
void write_scores_csv(std::span<const scoring::ScoreRecord> records,
                      const std::filesystem::path& path);

/// CSV `bin_left,bin_right,count`.
void write_histogram_csv(std::span<const stats::HistogramBin> bins,
                         const std::filesystem::path& path);

/// CSV `epoch,train_loss,val_loss` (epoch is 1-based).
void write_train_report_csv(const nn::TrainReport& report,
                            const std::filesystem::path& path);

/// CSV `period_start,mean_consumption`.
void write_resample_csv(std::span<const ingest::ResampleRow> rows,
                        const std::filesystem::path& path);

json gap_report_json(const ingest::GapReport& report);
json summary_stats_json(const stats::SummaryStats& s);
json normality_json(const stats::NormalityResult& r);
json metrics_json(const synth::Metrics& m);

/// Writes `<path>.meta.json` with the tool version and the effective config.
/// Nothing time- or host-dependent goes in, so reruns stay byte-identical.
void write_meta_sidecar(const std::filesystem::path& target, const json& config);

}  // namespace metersentry::reports
