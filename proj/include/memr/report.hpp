#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace memr {

struct MetricSummary {
  double mean = 0.0;
  std::optional<double> ci95;  // half-width; empty with fewer than two values
  std::size_t n = 0;
};

struct ReportRow {
  std::string mode;
  std::size_t runs = 0;
  std::size_t incomplete = 0;  // flagged, never dropped
  std::vector<MetricSummary> metrics;  // same order as ReportTable::metric_names
};

struct ReportTable {
  std::vector<std::string> metric_names;
  std::vector<ReportRow> rows;
  std::string corpus_checksum;
};

// Two-sided 95% Student t quantile.
double t_quantile_95(std::size_t dof);

// One row per mode, in TF, SS, AC, AC+ME, AC+MEMR order. Runs on different
// corpora are refused.
ReportTable build_report(std::span<const std::filesystem::path> run_dirs);

std::string report_text(const ReportTable& t);
std::string report_csv(const ReportTable& t);
std::string report_json(const ReportTable& t);

}  // namespace memr
