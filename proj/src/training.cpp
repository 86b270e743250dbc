#include "dynens/training.hpp"

#include "dynens/kendall.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace dynens {

using nlohmann::json;

const char* mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::kDynamic: return "dynamic";
    case TrainMode::kVanilla: return "vanilla";
    case TrainMode::kSingleLf: return "single_lf";
    case TrainMode::kUniform: return "uniform";
    case TrainMode::kSimpleAvg: return "simple_avg";
    case TrainMode::kEqualWeight: return "equal_weight";
  }
  return "unknown";
}

TrainMode parse_mode(const std::string& s) {
  for (TrainMode m : {TrainMode::kDynamic, TrainMode::kVanilla, TrainMode::kSingleLf,
                      TrainMode::kUniform, TrainMode::kSimpleAvg, TrainMode::kEqualWeight}) {
    if (s == mode_name(m)) return m;
  }
  throw std::invalid_argument("unknown training mode: " + s);
}

bool is_ensemble_mode(TrainMode m) {
  return m == TrainMode::kDynamic || m == TrainMode::kUniform || m == TrainMode::kSimpleAvg ||
         m == TrainMode::kEqualWeight;
}

namespace {

Fusion fusion_for(TrainMode m) {
  switch (m) {
    case TrainMode::kUniform: return Fusion::kUniform;
    case TrainMode::kSimpleAvg: return Fusion::kSimpleAverage;
    case TrainMode::kEqualWeight: return Fusion::kEqualWeight;
    default: return Fusion::kDynamic;
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (!(margin > 0.0)) throw std::invalid_argument("margin must be positive");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (epochs_pretrain < 0 || epochs_finetune < 0) throw std::invalid_argument("epochs must be non-negative");
  if (batch_size != 0 && batch_size < 2) throw std::invalid_argument("batch size must be at least 2");
  if (!(gt_fraction > 0.0 && gt_fraction <= 1.0)) throw std::invalid_argument("gt fraction must lie in (0, 1]");
  if (!(lf_fraction >= 0.0 && lf_fraction <= 1.0)) throw std::invalid_argument("lf fraction must lie in [0, 1]");
  if (embed_dim < 1 || hidden_dim < 1 || head_hidden < 1) throw std::invalid_argument("model sizes must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must lie in [0, 1)");
  if (mode == TrainMode::kSingleLf && single_lf.empty()) {
    throw std::invalid_argument("single_lf mode needs an LF column name");
  }
}

int TrainConfig::effective_batch_size(std::size_t table_size) const {
  if (batch_size > 0) return batch_size;
  return table_size >= 5000 ? 512 : 128;
}

EncoderConfig TrainConfig::encoder_config(int vocab_size) const {
  EncoderConfig c;
  c.vocab_size = vocab_size;
  c.embed_dim = embed_dim;
  c.hidden_dim = hidden_dim;
  c.dropout = dropout;
  return c;
}

json to_json(const TrainConfig& c) {
  return {{"margin", c.margin},
          {"learning_rate", c.learning_rate},
          {"adam_beta1", 0.9},
          {"adam_beta2", 0.999},
          {"adam_epsilon", 1e-8},
          {"epochs_pretrain", c.epochs_pretrain},
          {"epochs_finetune", c.epochs_finetune},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"mode", mode_name(c.mode)},
          {"single_lf", c.single_lf},
          {"gt_fraction", c.gt_fraction},
          {"split_mode", c.split_mode == SplitMode::kByIndex ? "by-index" : "random"},
          {"lf_fraction", c.lf_fraction},
          {"embed_dim", c.embed_dim},
          {"hidden_dim", c.hidden_dim},
          {"head_hidden", c.head_hidden},
          {"dropout", c.dropout},
          {"init", "uniform(+-1/sqrt(fan_in)), zero biases, lstm forget bias 1.0, gate last layer zero"},
          {"mlp_activation", "relu"}};
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
  c.margin = j.value("margin", c.margin);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.epochs_pretrain = j.value("epochs_pretrain", c.epochs_pretrain);
  c.epochs_finetune = j.value("epochs_finetune", c.epochs_finetune);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  if (j.contains("mode")) c.mode = parse_mode(j.at("mode").get<std::string>());
  c.single_lf = j.value("single_lf", c.single_lf);
  c.gt_fraction = j.value("gt_fraction", c.gt_fraction);
  if (j.contains("split_mode")) {
    const auto s = j.at("split_mode").get<std::string>();
    if (s == "by-index") c.split_mode = SplitMode::kByIndex;
    else if (s == "random") c.split_mode = SplitMode::kRandom;
    else throw std::invalid_argument("unknown split mode: " + s);
  }
  c.lf_fraction = j.value("lf_fraction", c.lf_fraction);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
  c.head_hidden = j.value("head_hidden", c.head_hidden);
  c.dropout = j.value("dropout", c.dropout);
  return c;
}

std::vector<double> fit_ranking(RankModel& model, const SeqList& seqs, std::span<const double> targets,
                                int epochs, int batch_size, const TrainConfig& config,
                                const std::string& stream) {
  if (seqs.size() != targets.size()) throw std::invalid_argument("fit: sequence and target counts differ");
  if (seqs.empty()) throw std::invalid_argument("fit: no training data");
  if (batch_size < 2) throw std::invalid_argument("fit: batch size must be at least 2");
  Rng batch_rng = make_rng(config.seed, "batch/" + stream);
  Rng dropout_rng = make_rng(config.seed, "dropout/" + stream);
  Adam adam(model.trainable_sets(), AdamConfig{config.learning_rate});

  std::vector<std::size_t> order(seqs.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> curve;
  curve.reserve(static_cast<std::size_t>(epochs));
  SeqList batch_seqs;
  std::vector<double> batch_targets;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), batch_rng);
    double total = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
      if (end - start < 2) continue;
      batch_seqs.clear();
      batch_targets.clear();
      for (std::size_t k = start; k < end; ++k) {
        batch_seqs.push_back(seqs[order[k]]);
        batch_targets.push_back(targets[order[k]]);
      }
      ad::Graph g;
      const ad::Var scores = model.forward_scores(g, TokenBatch::from(batch_seqs), true, &dropout_rng);
      const ad::Var loss = hinge_ranking_loss(scores, batch_targets, config.margin);
      g.backward(loss);
      adam.step();
      total += loss.scalar();
      ++batches;
    }
    curve.push_back(batches > 0 ? total / batches : 0.0);
  }
  return curve;
}

ExpertPredictor pretrain_expert(const std::string& lf_name, const SeqList& seqs,
                                std::span<const double> targets, int vocab_size,
                                const TrainConfig& config, std::size_t table_size,
                                std::vector<double>* loss_curve) {
  if (seqs.empty()) {
    throw std::invalid_argument("pretraining expert " + lf_name + ": no low-fidelity data available");
  }
  Rng init = make_rng(config.seed, "init/expert/" + lf_name);
  ExpertPredictor expert(lf_name, config.encoder_config(vocab_size), config.head_hidden, init);
  auto curve = fit_ranking(expert, seqs, targets, config.epochs_pretrain,
                           config.effective_batch_size(table_size), config, "pretrain/" + lf_name);
  if (loss_curve) *loss_curve = std::move(curve);
  return expert;
}

namespace {

void lf_training_data(const BenchmarkTable& table, const std::string& lf, SeqList& seqs,
                      std::vector<double>& targets) {
  for (std::size_t i : table.train_indices()) {
    if (!table.lf_visible(i)) continue;
    const auto& r = table.record(i);
    if (auto it = r.lf_values.find(lf); it != r.lf_values.end()) {
      seqs.push_back(&r.tokens);
      targets.push_back(it->second);
    }
  }
}

void gt_training_data(const BenchmarkTable& table, SeqList& seqs, std::vector<double>& targets) {
  if (!table.has_finetune_subset()) throw std::invalid_argument("table has no finetune subset marked");
  const auto& idx = table.finetune_indices();
  table.require_gt(idx, "finetune subset");
  for (std::size_t i : idx) {
    seqs.push_back(&table.record(i).tokens);
    targets.push_back(*table.record(i).gt_accuracy);
  }
  if (seqs.empty()) throw std::invalid_argument("finetune subset is empty");
}

}  // namespace

PretrainResult pretrain_experts(const BenchmarkTable& table, const TrainConfig& config) {
  config.validate();
  PretrainResult out;
  for (const auto& lf : table.lf_names()) {
    SeqList seqs;
    std::vector<double> targets;
    lf_training_data(table, lf, seqs, targets);
    std::vector<double> curve;
    out.experts.push_back(
        pretrain_expert(lf, seqs, targets, table.vocab_size(), config, table.size(), &curve));
    out.loss_curves.push_back(std::move(curve));
  }
  return out;
}

DynamicEnsemblePredictor finetune_ensemble(std::vector<ExpertPredictor> experts, const SeqList& seqs,
                                           std::span<const double> gt, int vocab_size,
                                           const TrainConfig& config, Fusion fusion,
                                           std::size_t table_size, std::vector<double>* loss_curve) {
  if (seqs.empty()) throw std::invalid_argument("finetune: empty ground-truth subset");
  Rng init = make_rng(config.seed, "init/gate");
  DynamicEnsemblePredictor ensemble(std::move(experts), fusion, config.encoder_config(vocab_size),
                                    config.head_hidden, init);
  const int batch = std::min<int>(config.effective_batch_size(table_size), static_cast<int>(seqs.size()));
  if (seqs.size() >= 2 && config.epochs_finetune > 0) {
    auto curve = fit_ranking(ensemble, seqs, gt, config.epochs_finetune, std::max(batch, 2), config,
                             std::string("finetune/") + fusion_name(fusion));
    if (loss_curve) *loss_curve = std::move(curve);
  }
  return ensemble;
}

DynamicEnsemblePredictor finetune_ensemble(std::vector<ExpertPredictor> experts,
                                           const BenchmarkTable& table, const TrainConfig& config,
                                           Fusion fusion, std::vector<double>* loss_curve) {
  SeqList seqs;
  std::vector<double> gt;
  gt_training_data(table, seqs, gt);
  return finetune_ensemble(std::move(experts), seqs, gt, table.vocab_size(), config, fusion,
                           table.size(), loss_curve);
}

TrainResult train_model(const BenchmarkTable& table, const TrainConfig& config,
                        const std::vector<ExpertPredictor>* pretrained) {
  config.validate();
  TrainResult result;
  SeqList gt_seqs;
  std::vector<double> gt;
  gt_training_data(table, gt_seqs, gt);
  const int gt_batch = std::max(2, std::min<int>(config.effective_batch_size(table.size()),
                                                 static_cast<int>(gt_seqs.size())));

  if (config.mode == TrainMode::kVanilla) {
    Rng init = make_rng(config.seed, "init/vanilla");
    auto model = std::make_unique<ExpertPredictor>("gt", config.encoder_config(table.vocab_size()),
                                                   config.head_hidden, init);
    if (gt_seqs.size() >= 2) {
      result.finetune_curve =
          fit_ranking(*model, gt_seqs, gt, config.epochs_finetune, gt_batch, config, "vanilla");
    }
    result.model = std::move(model);
    return result;
  }

  if (config.mode == TrainMode::kSingleLf) {
    const auto& names = table.lf_names();
    const auto it = std::find(names.begin(), names.end(), config.single_lf);
    if (it == names.end()) throw std::invalid_argument("unknown LF column: " + config.single_lf);
    std::unique_ptr<ExpertPredictor> model;
    if (pretrained) {
      model = std::make_unique<ExpertPredictor>(pretrained->at(static_cast<std::size_t>(it - names.begin())));
    } else {
      SeqList seqs;
      std::vector<double> targets;
      lf_training_data(table, config.single_lf, seqs, targets);
      std::vector<double> curve;
      model = std::make_unique<ExpertPredictor>(pretrain_expert(
          config.single_lf, seqs, targets, table.vocab_size(), config, table.size(), &curve));
      result.pretrain_curves.push_back(std::move(curve));
    }
    if (gt_seqs.size() >= 2) {
      result.finetune_curve = fit_ranking(*model, gt_seqs, gt, config.epochs_finetune, gt_batch, config,
                                          "finetune/single_lf/" + config.single_lf);
    }
    result.model = std::move(model);
    return result;
  }

  std::vector<ExpertPredictor> experts;
  if (pretrained) {
    if (pretrained->size() != table.lf_names().size()) {
      throw std::invalid_argument("pretrained expert count differs from LF column count");
    }
    experts = *pretrained;
  } else {
    PretrainResult pre = pretrain_experts(table, config);
    experts = std::move(pre.experts);
    result.pretrain_curves = std::move(pre.loss_curves);
  }
  result.model = std::make_unique<DynamicEnsemblePredictor>(
      finetune_ensemble(std::move(experts), gt_seqs, gt, table.vocab_size(), config,
                        fusion_for(config.mode), table.size(), &result.finetune_curve));
  return result;
}

double validation_kd(const RankModel& model, const BenchmarkTable& table) {
  const auto idx = table.validation_indices();
  table.require_gt(idx, "validation");
  SeqList seqs;
  std::vector<double> gt;
  for (std::size_t i : idx) {
    seqs.push_back(&table.record(i).tokens);
    gt.push_back(*table.record(i).gt_accuracy);
  }
  const auto pred = model.predict(seqs);
  return kendall_tau(pred, gt).kd;
}

TrainRun run_training(const BenchmarkTable& source, const TrainConfig& config,
                      const std::vector<ExpertPredictor>* pretrained) {
  config.validate();
  BenchmarkTable table = make_split(source, config.gt_fraction, config.split_mode, config.seed);
  if (config.lf_fraction < 1.0) table = restrict_lf(table, config.lf_fraction);
  TrainRun run;
  run.result = train_model(table, config, pretrained);

  json& r = run.report;
  r["mode"] = mode_name(config.mode);
  if (config.mode == TrainMode::kSingleLf) r["single_lf"] = config.single_lf;
  r["seed"] = config.seed;
  r["gt_fraction"] = config.gt_fraction;
  r["lf_fraction"] = config.lf_fraction;
  r["finetune_count"] = table.finetune_indices().size();
  r["validation_count"] = table.validation_indices().size();
  r["validation_kd"] = validation_kd(*run.result.model, table);
  r["pretrain_loss_curves"] = run.result.pretrain_curves;
  r["finetune_loss_curve"] = run.result.finetune_curve;
  if (const auto* ens = dynamic_cast<const DynamicEnsemblePredictor*>(run.result.model.get())) {
    r["lf_names"] = ens->lf_names();
    json experts = json::array();
    for (const auto& e : ens->experts()) {
      experts.push_back({{"lf_name", e.lf_name()}, {"validation_kd", validation_kd(e, table)}});
    }
    r["experts"] = experts;
  }
  r["config"] = to_json(config);
  return run;
}

}  // namespace dynens
