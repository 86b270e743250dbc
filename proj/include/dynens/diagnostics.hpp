#pragma once

#include "dynens/benchmark.hpp"
#include "dynens/ensemble.hpp"

#include <nlohmann/json.hpp>

#include <iosfwd>
#include <string>
#include <vector>

namespace dynens {

/// Population standard deviation of each weighted score k_i over `archs`.
Eigen::VectorXd weighted_score_std(const DynamicEnsemblePredictor& predictor,
                                   const std::vector<const std::vector<int>*>& archs);

struct ExpertDiagnostics {
  std::string lf_name;
  double kd_weighted_vs_gt = 0.0;
  /// NaN when the column is absent from every validation record.
  double kd_raw_vs_own_lf = 0.0;
  double kd_raw_vs_gt = 0.0;
  double mean_gate_weight = 0.0;
  double weighted_score_std = 0.0;
};

struct DiagnosticsReport {
  double ensemble_kd = 0.0;
  std::size_t count = 0;
  std::vector<ExpertDiagnostics> experts;
  /// Per validation architecture: id and gate coefficients.
  std::vector<std::string> trace_ids;
  std::vector<Eigen::VectorXd> gate_traces;
};

/// Analyses over the validation split, which must carry ground truth.
DiagnosticsReport diagnostics(const DynamicEnsemblePredictor& predictor, const BenchmarkTable& table);

nlohmann::json to_json(const DiagnosticsReport& r);
/// lf_name, kd_weighted_vs_gt, kd_raw_vs_own_lf, kd_raw_vs_gt, mean_gate_weight, weighted_score_std
void write_expert_csv(std::ostream& out, const DiagnosticsReport& r);
/// arch_id followed by one gate-coefficient column per expert.
void write_gate_trace_csv(std::ostream& out, const DiagnosticsReport& r);

}  // namespace dynens
