#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace gap::metrics {

struct PredictionRow {
  std::string subject;
  std::string sample;
  std::string domain;
  std::string task;  // "hr" | "rr" | "spo2"
  double pred = 0.0;
  double truth = 0.0;
  bool mask = true;    // truth present
  bool pseudo = false;
};

void write_predictions_csv(const std::string& path,
                           const std::vector<PredictionRow>& rows);
std::vector<PredictionRow> read_predictions_csv(const std::string& path);

struct Cell {
  int n = 0;
  double mae = 0.0;
  double rmse = 0.0;
  std::optional<double> pearson;  // absent for constant truth or n < 2
};

struct HrvRow {
  int n = 0;  // samples where HRV succeeded on both pred and truth
  int skipped = 0;
  Cell lfnu, hfnu, lf_over_hf, hr_bpm;
};

struct MetricReport {
  std::map<std::string, Cell> per_task;
  std::map<std::string, std::map<std::string, Cell>> per_domain;
  std::map<std::string, std::map<std::string, Cell>> per_subject;
  std::optional<HrvRow> hrv;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
};

// Masked rows (truth absent) are excluded. Pearson is reported only for
// cells with >= 2 rows and non-constant truth; it is null otherwise,
// never 0.
MetricReport compute_metrics(const std::vector<PredictionRow>& rows);

// HRV comparison between predicted and true waveforms (whole-window PSD
// peak for the HR column); waveform pairs where peak detection or the
// spectral step fails are skipped and counted.
HrvRow compute_hrv_row(
    const std::vector<std::pair<std::vector<double>, std::vector<double>>>&
        pred_true_waveforms,
    double fps);

void write_metrics_csv(const std::string& path, const MetricReport& report);
void write_metrics_json(const std::string& path, const MetricReport& report);

}  // namespace gap::metrics
