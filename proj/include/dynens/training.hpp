#pragma once

#include "dynens/benchmark.hpp"
#include "dynens/ensemble.hpp"
#include "dynens/ranking_loss.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace dynens {

enum class TrainMode { kDynamic, kVanilla, kSingleLf, kUniform, kSimpleAvg, kEqualWeight };

const char* mode_name(TrainMode m);
TrainMode parse_mode(const std::string& s);
bool is_ensemble_mode(TrainMode m);

struct TrainConfig {
  double margin = kDefaultMargin;
  double learning_rate = 1e-3;
  int epochs_pretrain = 200;
  int epochs_finetune = 200;
  /// 0 picks 512 for tables of at least 5000 records, else 128.
  int batch_size = 0;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::kDynamic;
  /// LF column for single_lf mode.
  std::string single_lf;
  double gt_fraction = 0.01;
  SplitMode split_mode = SplitMode::kByIndex;
  double lf_fraction = 1.0;
  int embed_dim = 100;
  int hidden_dim = 100;
  int head_hidden = 200;
  double dropout = 0.1;

  void validate() const;
  int effective_batch_size(std::size_t table_size) const;
  EncoderConfig encoder_config(int vocab_size) const;
};

nlohmann::json to_json(const TrainConfig& c);
/// Fields absent from `j` keep their values from `base`.
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

using SeqList = std::vector<const std::vector<int>*>;

/// Fits `model` with the hinge ranking loss for `epochs` passes over
/// (seqs, targets) in shuffled mini-batches, with a freshly created Adam.
/// All pairs inside each mini-batch contribute. Returns the mean batch
/// loss of every epoch.
std::vector<double> fit_ranking(RankModel& model, const SeqList& seqs, std::span<const double> targets,
                                int epochs, int batch_size, const TrainConfig& config,
                                const std::string& stream);

/// Pretrains one expert on (seqs, targets) of a single low-fidelity column.
ExpertPredictor pretrain_expert(const std::string& lf_name, const SeqList& seqs,
                                std::span<const double> targets, int vocab_size,
                                const TrainConfig& config, std::size_t table_size,
                                std::vector<double>* loss_curve = nullptr);

struct PretrainResult {
  std::vector<ExpertPredictor> experts;
  std::vector<std::vector<double>> loss_curves;
};

/// One expert per table LF column, in lf_names order, each trained on the
/// train records that expose that column.
PretrainResult pretrain_experts(const BenchmarkTable& table, const TrainConfig& config);

/// Builds the ensemble around `experts` with a fresh gate and jointly
/// finetunes everything on the finetune subset's ground truth.
DynamicEnsemblePredictor finetune_ensemble(std::vector<ExpertPredictor> experts,
                                           const BenchmarkTable& table, const TrainConfig& config,
                                           Fusion fusion = Fusion::kDynamic,
                                           std::vector<double>* loss_curve = nullptr);

/// Same, over explicit ground-truth data (used by the search flow).
DynamicEnsemblePredictor finetune_ensemble(std::vector<ExpertPredictor> experts, const SeqList& seqs,
                                           std::span<const double> gt, int vocab_size,
                                           const TrainConfig& config, Fusion fusion,
                                           std::size_t table_size,
                                           std::vector<double>* loss_curve = nullptr);

struct TrainResult {
  std::unique_ptr<RankModel> model;
  std::vector<std::vector<double>> pretrain_curves;
  std::vector<double> finetune_curve;
};

/// Trains whichever predictor config.mode names. `table` must carry a
/// finetune subset. Pretrained experts (in lf_names order) may be passed in
/// to skip repeating the deterministic pretraining step.
TrainResult train_model(const BenchmarkTable& table, const TrainConfig& config,
                        const std::vector<ExpertPredictor>* pretrained = nullptr);

/// Validation-split ranking quality of any trained model.
double validation_kd(const RankModel& model, const BenchmarkTable& table);

/// Full train command: split, optional LF restriction, training, and a JSON
/// report with final KDs and loss curves.
struct TrainRun {
  TrainResult result;
  nlohmann::json report;
};
TrainRun run_training(const BenchmarkTable& table, const TrainConfig& config,
                      const std::vector<ExpertPredictor>* pretrained = nullptr);

}  // namespace dynens
