#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "odn/search.hpp"

namespace odn {

inline constexpr const char* kMetricsHeader = "depth,epoch,phase,train_loss,val_accuracy,lr,seconds";

/// One metrics.csv row. Numbers use the shortest round-trip form; seconds
/// is written as 0 unless `with_wall_time`.
std::string format_metrics_row(const EpochMetrics& m, bool with_wall_time);

/// Appends one row per epoch to metrics.csv and, optionally, wall-clock
/// seconds to a side file (phase,depth,epoch,seconds).
class CsvMetricsSink : public MetricsSink {
 public:
  CsvMetricsSink(const std::filesystem::path& metrics_path, const std::filesystem::path& timing_path,
                 bool wall_time_in_metrics);

  void on_epoch(const EpochMetrics& m) override;
  const std::vector<EpochMetrics>& history() const { return history_; }

 private:
  std::ofstream metrics_;
  std::ofstream timing_;
  bool wall_time_in_metrics_;
  std::vector<EpochMetrics> history_;
};

/// Parses a metrics.csv written by CsvMetricsSink (val_loss is not stored).
std::vector<EpochMetrics> read_metrics_csv(const std::filesystem::path& path);

/// Writes one learning-curve CSV per (phase, depth) plus depth_summary.csv
/// and curves.svg into `out_dir`. Returns the written paths.
std::vector<std::filesystem::path> write_report(const std::vector<EpochMetrics>& rows,
                                                const std::filesystem::path& out_dir);

}  // namespace odn
