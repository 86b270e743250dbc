#pragma once

#include "dynens/encoder.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace dynens {

/// Anything trainable with a ranking loss: produces one score per sequence.
class RankModel {
 public:
  virtual ~RankModel() = default;

  /// batch x 1 scores the loss ranks.
  virtual ad::Var forward_scores(ad::Graph& g, const TokenBatch& batch, bool training,
                                 Rng* dropout_rng) const = 0;
  virtual std::vector<ParameterSet*> trainable_sets() = 0;
  virtual nlohmann::json to_json() const = 0;

  /// Eval-mode scores, computed in chunks.
  std::vector<double> predict(const std::vector<const std::vector<int>*>& seqs) const;
  double predict_one(std::span<const int> tokens) const;
};

/// Encoder + width-1 head. As an expert it is pretrained on one
/// low-fidelity column; with lf_name "gt" it is the vanilla predictor.
class ExpertPredictor : public RankModel {
 public:
  ExpertPredictor(std::string lf_name, const EncoderConfig& enc, int head_hidden, Rng& init_rng,
                  HeadInit init = HeadInit::kUniform);

  const std::string& lf_name() const { return lf_name_; }
  void set_lf_name(std::string name) { lf_name_ = std::move(name); }
  ScoringNet& net() { return net_; }
  const ScoringNet& net() const { return net_; }

  ad::Var forward_scores(ad::Graph& g, const TokenBatch& batch, bool training,
                         Rng* dropout_rng) const override;
  std::vector<ParameterSet*> trainable_sets() override { return net_.parameter_sets(); }
  nlohmann::json to_json() const override;
  static ExpertPredictor from_json(const nlohmann::json& j);

 private:
  std::string lf_name_;
  ScoringNet net_;
};

/// Encoder + width-N head producing gate logits g(alpha).
class GatingNetwork {
 public:
  GatingNetwork(int num_experts, const EncoderConfig& enc, int head_hidden, Rng& init_rng,
                HeadInit init = HeadInit::kZeroLast);

  ad::Var logits(ad::Graph& g, const TokenBatch& batch, bool training, Rng* dropout_rng) const;
  ScoringNet& net() { return net_; }
  const ScoringNet& net() const { return net_; }

 private:
  ScoringNet net_;
};

/// How expert scores are combined.
enum class Fusion {
  kDynamic,        // per-architecture softmax gate, sigmoid of weighted sum
  kUniform,        // one learned logit vector shared by all architectures
  kSimpleAverage,  // plain mean of raw expert scores
  kEqualWeight,    // frozen 1/N coefficients, sigmoid of weighted sum
};

const char* fusion_name(Fusion f);
Fusion parse_fusion(const std::string& s);

/// Graph handles for one batched ensemble evaluation (all batch x N except
/// logit and score, which are batch x 1).
struct EnsembleVars {
  ad::Var expert_scores;
  ad::Var gate_weights;
  ad::Var weighted;
  ad::Var logit;
  ad::Var score;
};

/// Plain-value counterpart of EnsembleVars for one architecture.
struct EnsembleOutput {
  Eigen::VectorXd expert_scores;
  Eigen::VectorXd gate_weights;
  Eigen::VectorXd weighted;
  double logit = 0.0;
  double score = 0.0;
};

/// Softmax with max subtraction.
Eigen::VectorXd softmax(const Eigen::VectorXd& logits);
/// Combines expert scores with gate logits: k = p * softmax(g), score =
/// sigmoid(sum k).
EnsembleOutput fuse(const Eigen::VectorXd& expert_scores, const Eigen::VectorXd& gate_logits);

class DynamicEnsemblePredictor : public RankModel {
 public:
  /// The gate (or uniform logit vector) starts at zero logits, i.e. 1/N.
  DynamicEnsemblePredictor(std::vector<ExpertPredictor> experts, Fusion fusion,
                           const EncoderConfig& gate_encoder, int head_hidden, Rng& init_rng);

  std::size_t size() const { return experts_.size(); }
  Fusion fusion() const { return fusion_; }
  std::vector<std::string> lf_names() const;
  const std::vector<ExpertPredictor>& experts() const { return experts_; }
  std::vector<ExpertPredictor>& experts() { return experts_; }
  const std::optional<GatingNetwork>& gate() const { return gate_; }
  std::optional<GatingNetwork>& gate() { return gate_; }
  ParameterSet& uniform_logits() { return uniform_logits_; }

  EnsembleVars forward(ad::Graph& g, const TokenBatch& batch, bool training, Rng* dropout_rng) const;

  /// Raw expert scores p^lf(alpha).
  Eigen::VectorXd expert_scores(std::span<const int> tokens) const;
  /// softmax(g(alpha)), or the fixed / global weights for the baselines.
  Eigen::VectorXd gate_weights(std::span<const int> tokens) const;
  /// k_i(alpha) = p_i^lf(alpha) * G_i(alpha); sums to the pre-sigmoid logit.
  Eigen::VectorXd weighted_scores(std::span<const int> tokens) const;
  double ensemble_score(std::span<const int> tokens) const;
  EnsembleOutput evaluate(std::span<const int> tokens) const;
  /// Eval-mode batch evaluation; one EnsembleOutput per sequence.
  std::vector<EnsembleOutput> evaluate(const std::vector<const std::vector<int>*>& seqs) const;

  ad::Var forward_scores(ad::Graph& g, const TokenBatch& batch, bool training,
                         Rng* dropout_rng) const override;
  std::vector<ParameterSet*> trainable_sets() override;
  nlohmann::json to_json() const override;
  static DynamicEnsemblePredictor from_json(const nlohmann::json& j);

 private:
  DynamicEnsemblePredictor() = default;

  std::vector<ExpertPredictor> experts_;
  Fusion fusion_ = Fusion::kDynamic;
  std::optional<GatingNetwork> gate_;
  ParameterSet uniform_logits_;
};

inline constexpr int kModelFormatVersion = 1;

void save_model(const std::filesystem::path& path, const RankModel& model);
std::unique_ptr<RankModel> load_model(const std::filesystem::path& path);
std::unique_ptr<RankModel> model_from_json(const nlohmann::json& j);

}  // namespace dynens
