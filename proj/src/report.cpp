#include "dynens/report.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>

namespace dynens {

namespace fs = std::filesystem;

namespace {

bool read_run(const fs::path& file, RunSummary& out, std::ostream& warnings) {
  std::ifstream in(file);
  if (!in) {
    warnings << "warning: cannot read " << file.string() << ", skipped\n";
    return false;
  }
  try {
    const auto j = nlohmann::json::parse(in);
    out.mode = j.at("mode").get<std::string>();
    if (out.mode == "single_lf") out.mode += ":" + j.at("single_lf").get<std::string>();
    out.gt_fraction = j.at("gt_fraction").get<double>();
    out.seed = j.at("seed").get<std::uint64_t>();
    out.validation_kd = j.at("validation_kd").get<double>();
    out.source = file;
    return true;
  } catch (const nlohmann::json::exception& e) {
    warnings << "warning: malformed run report " << file.string() << " (" << e.what() << "), skipped\n";
    return false;
  }
}

}  // namespace

std::vector<RunSummary> collect_runs(const std::vector<fs::path>& paths, std::ostream& warnings) {
  std::vector<RunSummary> runs;
  auto take = [&](const fs::path& file) {
    RunSummary r;
    if (read_run(file, r, warnings)) runs.push_back(std::move(r));
  };
  for (const auto& p : paths) {
    if (fs::is_regular_file(p)) {
      take(p);
    } else if (fs::is_directory(p) && fs::exists(p / "report.json")) {
      take(p / "report.json");
    } else if (fs::is_directory(p)) {
      std::vector<fs::path> subdirs;
      for (const auto& entry : fs::directory_iterator(p)) {
        if (entry.is_directory()) subdirs.push_back(entry.path());
      }
      std::sort(subdirs.begin(), subdirs.end());
      bool any = false;
      for (const auto& d : subdirs) {
        if (fs::exists(d / "report.json")) {
          take(d / "report.json");
          any = true;
        } else {
          warnings << "warning: " << d.string() << " has no report.json, skipped\n";
        }
      }
      if (!any && subdirs.empty()) warnings << "warning: " << p.string() << " holds no runs, skipped\n";
    } else {
      warnings << "warning: " << p.string() << " does not exist, skipped\n";
    }
  }
  return runs;
}

std::vector<ReportRow> aggregate(const std::vector<RunSummary>& runs) {
  std::map<std::pair<double, std::string>, std::vector<double>> groups;
  for (const auto& r : runs) groups[{r.gt_fraction, r.mode}].push_back(r.validation_kd);
  std::vector<ReportRow> rows;
  for (const auto& [key, kds] : groups) {
    ReportRow row;
    row.gt_fraction = key.first;
    row.mode = key.second;
    row.runs = kds.size();
    double sum = 0.0;
    for (double v : kds) sum += v;
    row.mean_kd = sum / static_cast<double>(kds.size());
    double ss = 0.0;
    for (double v : kds) ss += (v - row.mean_kd) * (v - row.mean_kd);
    row.std_kd = std::sqrt(ss / static_cast<double>(kds.size()));
    rows.push_back(row);
  }
  return rows;
}

void write_report_csv(std::ostream& out, const std::vector<ReportRow>& rows) {
  out << "mode,gt_fraction,runs,mean_kd,std_kd\n";
  for (const auto& r : rows) {
    out << r.mode << ',' << r.gt_fraction << ',' << r.runs << ',' << r.mean_kd << ',' << r.std_kd << '\n';
  }
}

void write_report_markdown(std::ostream& out, const std::vector<ReportRow>& rows) {
  out << "| mode | gt fraction | runs | KD |\n|---|---|---|---|\n";
  char cell[64];
  for (const auto& r : rows) {
    std::snprintf(cell, sizeof(cell), "%.4f (%.4f)", r.mean_kd, r.std_kd);
    out << "| " << r.mode << " | " << r.gt_fraction << " | " << r.runs << " | " << cell << " |\n";
  }
}

}  // namespace dynens
