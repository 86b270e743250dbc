#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace dynens {

struct RunSummary {
  std::string mode;  // "single_lf:<name>" for single-LF runs
  double gt_fraction = 0.0;
  std::uint64_t seed = 0;
  double validation_kd = 0.0;
  std::filesystem::path source;
};

struct ReportRow {
  std::string mode;
  double gt_fraction = 0.0;
  std::size_t runs = 0;
  double mean_kd = 0.0;
  double std_kd = 0.0;  // population standard deviation across seeds
};

/// Reads report.json from each path (a run directory, a directory of run
/// directories, or a report file). Unreadable runs are skipped with a line
/// on `warnings`.
std::vector<RunSummary> collect_runs(const std::vector<std::filesystem::path>& paths,
                                     std::ostream& warnings);

/// One row per (mode, gt_fraction), sorted by fraction then mode.
std::vector<ReportRow> aggregate(const std::vector<RunSummary>& runs);

void write_report_csv(std::ostream& out, const std::vector<ReportRow>& rows);
/// Markdown table with "mean (std)" cells.
void write_report_markdown(std::ostream& out, const std::vector<ReportRow>& rows);

}  // namespace dynens
