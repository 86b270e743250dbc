#include "dynens/diagnostics.hpp"

#include "dynens/kendall.hpp"

#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace dynens {

Eigen::VectorXd weighted_score_std(const DynamicEnsemblePredictor& predictor,
                                   const std::vector<const std::vector<int>*>& archs) {
  if (archs.size() < 2) throw std::invalid_argument("weighted_score_std: need at least two architectures");
  const auto outputs = predictor.evaluate(archs);
  const auto n = static_cast<Eigen::Index>(predictor.size());
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(n);
  for (const auto& o : outputs) mean += o.weighted;
  mean /= static_cast<double>(outputs.size());
  Eigen::VectorXd var = Eigen::VectorXd::Zero(n);
  for (const auto& o : outputs) var += (o.weighted - mean).cwiseAbs2();
  return (var / static_cast<double>(outputs.size())).cwiseSqrt();
}

DiagnosticsReport diagnostics(const DynamicEnsemblePredictor& predictor, const BenchmarkTable& table) {
  const auto idx = table.validation_indices();
  if (idx.size() < 2) throw std::invalid_argument("diagnostics: validation split needs at least two records");
  table.require_gt(idx, "diagnostics");
  std::vector<const std::vector<int>*> seqs;
  std::vector<double> gt;
  for (std::size_t i : idx) {
    seqs.push_back(&table.record(i).tokens);
    gt.push_back(*table.record(i).gt_accuracy);
  }
  const auto outputs = predictor.evaluate(seqs);
  const std::size_t n_exp = predictor.size();

  DiagnosticsReport rep;
  rep.count = idx.size();
  std::vector<double> scores;
  for (const auto& o : outputs) scores.push_back(o.score);
  rep.ensemble_kd = kendall_tau(scores, gt).kd;
  const Eigen::VectorXd stds = weighted_score_std(predictor, seqs);

  for (std::size_t e = 0; e < n_exp; ++e) {
    const auto k = static_cast<Eigen::Index>(e);
    ExpertDiagnostics d;
    d.lf_name = predictor.experts()[e].lf_name();
    std::vector<double> weighted, raw, raw_with_lf, lf;
    double gate_sum = 0.0;
    for (std::size_t r = 0; r < outputs.size(); ++r) {
      weighted.push_back(outputs[r].weighted(k));
      raw.push_back(outputs[r].expert_scores(k));
      gate_sum += outputs[r].gate_weights(k);
      const auto& values = table.record(idx[r]).lf_values;
      if (auto it = values.find(d.lf_name); it != values.end()) {
        raw_with_lf.push_back(outputs[r].expert_scores(k));
        lf.push_back(it->second);
      }
    }
    d.kd_weighted_vs_gt = kendall_tau(weighted, gt).kd;
    d.kd_raw_vs_gt = kendall_tau(raw, gt).kd;
    d.kd_raw_vs_own_lf = lf.size() >= 2 ? kendall_tau(raw_with_lf, lf).kd
                                        : std::numeric_limits<double>::quiet_NaN();
    d.mean_gate_weight = gate_sum / static_cast<double>(outputs.size());
    d.weighted_score_std = stds(k);
    rep.experts.push_back(std::move(d));
  }
  for (std::size_t r = 0; r < outputs.size(); ++r) {
    rep.trace_ids.push_back(table.record(idx[r]).id);
    rep.gate_traces.push_back(outputs[r].gate_weights);
  }
  return rep;
}

nlohmann::json to_json(const DiagnosticsReport& r) {
  nlohmann::json j;
  j["ensemble_kd"] = r.ensemble_kd;
  j["count"] = r.count;
  j["experts"] = nlohmann::json::array();
  for (const auto& e : r.experts) {
    j["experts"].push_back({{"lf_name", e.lf_name},
                            {"kd_weighted_vs_gt", e.kd_weighted_vs_gt},
                            {"kd_raw_vs_own_lf", std::isnan(e.kd_raw_vs_own_lf) ? nlohmann::json(nullptr)
                                                                                : nlohmann::json(e.kd_raw_vs_own_lf)},
                            {"kd_raw_vs_gt", e.kd_raw_vs_gt},
                            {"mean_gate_weight", e.mean_gate_weight},
                            {"weighted_score_std", e.weighted_score_std}});
  }
  return j;
}

void write_expert_csv(std::ostream& out, const DiagnosticsReport& r) {
  out << "lf_name,kd_weighted_vs_gt,kd_raw_vs_own_lf,kd_raw_vs_gt,mean_gate_weight,weighted_score_std\n";
  for (const auto& e : r.experts) {
    out << e.lf_name << ',' << e.kd_weighted_vs_gt << ',' << e.kd_raw_vs_own_lf << ','
        << e.kd_raw_vs_gt << ',' << e.mean_gate_weight << ',' << e.weighted_score_std << '\n';
  }
}

void write_gate_trace_csv(std::ostream& out, const DiagnosticsReport& r) {
  out << "arch_id";
  for (const auto& e : r.experts) out << ',' << e.lf_name;
  out << '\n';
  for (std::size_t i = 0; i < r.trace_ids.size(); ++i) {
    out << r.trace_ids[i];
    for (Eigen::Index k = 0; k < r.gate_traces[i].size(); ++k) out << ',' << r.gate_traces[i](k);
    out << '\n';
  }
}

}  // namespace dynens
