#include "dynens/ensemble.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace dynens {

using nlohmann::json;

namespace {

constexpr std::size_t kPredictChunk = 512;

json encoder_config_json(const EncoderConfig& c) {
  return {{"vocab_size", c.vocab_size},
          {"embed_dim", c.embed_dim},
          {"hidden_dim", c.hidden_dim},
          {"dropout", c.dropout},
          {"forget_bias", c.forget_bias}};
}

EncoderConfig encoder_config_from(const json& j) {
  EncoderConfig c;
  c.vocab_size = j.at("vocab_size").get<int>();
  c.embed_dim = j.at("embed_dim").get<int>();
  c.hidden_dim = j.at("hidden_dim").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.forget_bias = j.value("forget_bias", 1.0);
  return c;
}

void check_format(const json& j, const char* format) {
  if (j.value("format", "") != format) {
    throw std::runtime_error(std::string("model checkpoint: expected format ") + format);
  }
  if (j.value("version", 0) != kModelFormatVersion) {
    throw std::runtime_error("model checkpoint: unsupported or missing version");
  }
}

}  // namespace

std::vector<double> RankModel::predict(const std::vector<const std::vector<int>*>& seqs) const {
  std::vector<double> out;
  out.reserve(seqs.size());
  for (std::size_t start = 0; start < seqs.size(); start += kPredictChunk) {
    const std::size_t end = std::min(seqs.size(), start + kPredictChunk);
    std::vector<const std::vector<int>*> chunk(seqs.begin() + static_cast<std::ptrdiff_t>(start),
                                               seqs.begin() + static_cast<std::ptrdiff_t>(end));
    ad::Graph g(false);
    const ad::Var s = forward_scores(g, TokenBatch::from(chunk), false, nullptr);
    for (Eigen::Index r = 0; r < s.rows(); ++r) out.push_back(s.value()(r, 0));
  }
  return out;
}

double RankModel::predict_one(std::span<const int> tokens) const {
  ad::Graph g(false);
  return forward_scores(g, TokenBatch::single(tokens), false, nullptr).scalar();
}

ExpertPredictor::ExpertPredictor(std::string lf_name, const EncoderConfig& enc, int head_hidden,
                                 Rng& init_rng, HeadInit init)
    : lf_name_(std::move(lf_name)),
      net_(enc, HeadConfig{enc.hidden_dim, head_hidden, 1, init}, init_rng) {}

ad::Var ExpertPredictor::forward_scores(ad::Graph& g, const TokenBatch& batch, bool training,
                                        Rng* dropout_rng) const {
  return net_.forward(g, batch, training, dropout_rng);
}

json ExpertPredictor::to_json() const {
  return {{"format", "dynens-single"},
          {"version", kModelFormatVersion},
          {"lf_name", lf_name_},
          {"encoder_config", encoder_config_json(net_.encoder().config())},
          {"head_hidden", net_.head().config().hidden_dim},
          {"weights", net_.to_json()}};
}

ExpertPredictor ExpertPredictor::from_json(const json& j) {
  check_format(j, "dynens-single");
  Rng scratch(0);
  ExpertPredictor p(j.at("lf_name").get<std::string>(), encoder_config_from(j.at("encoder_config")),
                    j.at("head_hidden").get<int>(), scratch);
  p.net_.load_json(j.at("weights"));
  return p;
}

GatingNetwork::GatingNetwork(int num_experts, const EncoderConfig& enc, int head_hidden,
                             Rng& init_rng, HeadInit init)
    : net_(enc, HeadConfig{enc.hidden_dim, head_hidden, num_experts, init}, init_rng) {}

ad::Var GatingNetwork::logits(ad::Graph& g, const TokenBatch& batch, bool training,
                              Rng* dropout_rng) const {
  return net_.forward(g, batch, training, dropout_rng);
}

const char* fusion_name(Fusion f) {
  switch (f) {
    case Fusion::kDynamic: return "dynamic";
    case Fusion::kUniform: return "uniform";
    case Fusion::kSimpleAverage: return "simple_avg";
    case Fusion::kEqualWeight: return "equal_weight";
  }
  return "unknown";
}

Fusion parse_fusion(const std::string& s) {
  for (Fusion f : {Fusion::kDynamic, Fusion::kUniform, Fusion::kSimpleAverage, Fusion::kEqualWeight}) {
    if (s == fusion_name(f)) return f;
  }
  throw std::invalid_argument("unknown fusion mode: " + s);
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  if (logits.size() == 0) throw std::invalid_argument("softmax of an empty vector");
  const double mx = logits.maxCoeff();
  Eigen::VectorXd e = (logits.array() - mx).exp();
  return e / e.sum();
}

EnsembleOutput fuse(const Eigen::VectorXd& expert_scores, const Eigen::VectorXd& gate_logits) {
  if (expert_scores.size() != gate_logits.size()) {
    throw std::invalid_argument("fuse: expert score and gate logit counts differ");
  }
  EnsembleOutput out;
  out.expert_scores = expert_scores;
  out.gate_weights = softmax(gate_logits);
  out.weighted = expert_scores.cwiseProduct(out.gate_weights);
  out.logit = out.weighted.sum();
  out.score = out.logit >= 0.0 ? 1.0 / (1.0 + std::exp(-out.logit))
                               : std::exp(out.logit) / (1.0 + std::exp(out.logit));
  return out;
}

DynamicEnsemblePredictor::DynamicEnsemblePredictor(std::vector<ExpertPredictor> experts,
                                                   Fusion fusion, const EncoderConfig& gate_encoder,
                                                   int head_hidden, Rng& init_rng)
    : experts_(std::move(experts)), fusion_(fusion) {
  if (experts_.empty()) throw std::invalid_argument("ensemble needs at least one expert");
  const int n = static_cast<int>(experts_.size());
  if (fusion_ == Fusion::kDynamic) {
    gate_.emplace(n, gate_encoder, head_hidden, init_rng, HeadInit::kZeroLast);
  } else if (fusion_ == Fusion::kUniform) {
    uniform_logits_.add("logits", Matrix::Zero(1, n));
  }
}

std::vector<std::string> DynamicEnsemblePredictor::lf_names() const {
  std::vector<std::string> names;
  for (const auto& e : experts_) names.push_back(e.lf_name());
  return names;
}

EnsembleVars DynamicEnsemblePredictor::forward(ad::Graph& g, const TokenBatch& batch, bool training,
                                               Rng* dropout_rng) const {
  const int n = static_cast<int>(experts_.size());
  std::vector<ad::Var> cols;
  cols.reserve(experts_.size());
  for (const auto& e : experts_) cols.push_back(e.forward_scores(g, batch, training, dropout_rng));
  EnsembleVars v;
  v.expert_scores = n == 1 ? cols.front() : ad::concat_cols(cols);

  switch (fusion_) {
    case Fusion::kDynamic:
      v.gate_weights = ad::softmax_rows(gate_->logits(g, batch, training, dropout_rng));
      break;
    case Fusion::kUniform:
      v.gate_weights = ad::softmax_rows(ad::broadcast_rows(g.param(uniform_logits_[0]), batch.batch));
      break;
    case Fusion::kSimpleAverage:
    case Fusion::kEqualWeight:
      v.gate_weights = g.constant(Matrix::Constant(batch.batch, n, 1.0 / n));
      break;
  }
  v.weighted = ad::mul(v.expert_scores, v.gate_weights);
  v.logit = ad::sum_cols(v.weighted);
  v.score = fusion_ == Fusion::kSimpleAverage ? v.logit : ad::sigmoid(v.logit);
  return v;
}

ad::Var DynamicEnsemblePredictor::forward_scores(ad::Graph& g, const TokenBatch& batch,
                                                 bool training, Rng* dropout_rng) const {
  return forward(g, batch, training, dropout_rng).score;
}

std::vector<ParameterSet*> DynamicEnsemblePredictor::trainable_sets() {
  std::vector<ParameterSet*> sets;
  for (auto& e : experts_) {
    for (ParameterSet* s : e.trainable_sets()) sets.push_back(s);
  }
  if (gate_) {
    for (ParameterSet* s : gate_->net().parameter_sets()) sets.push_back(s);
  }
  if (fusion_ == Fusion::kUniform) sets.push_back(&uniform_logits_);
  return sets;
}

EnsembleOutput DynamicEnsemblePredictor::evaluate(std::span<const int> tokens) const {
  ad::Graph g(false);
  const EnsembleVars v = forward(g, TokenBatch::single(tokens), false, nullptr);
  EnsembleOutput out;
  out.expert_scores = v.expert_scores.value().row(0).transpose();
  out.gate_weights = v.gate_weights.value().row(0).transpose();
  out.weighted = v.weighted.value().row(0).transpose();
  out.logit = v.logit.scalar();
  out.score = v.score.scalar();
  return out;
}

std::vector<EnsembleOutput> DynamicEnsemblePredictor::evaluate(
    const std::vector<const std::vector<int>*>& seqs) const {
  std::vector<EnsembleOutput> out;
  out.reserve(seqs.size());
  for (std::size_t start = 0; start < seqs.size(); start += kPredictChunk) {
    const std::size_t end = std::min(seqs.size(), start + kPredictChunk);
    std::vector<const std::vector<int>*> chunk(seqs.begin() + static_cast<std::ptrdiff_t>(start),
                                               seqs.begin() + static_cast<std::ptrdiff_t>(end));
    ad::Graph g(false);
    const EnsembleVars v = forward(g, TokenBatch::from(chunk), false, nullptr);
    for (Eigen::Index r = 0; r < v.score.rows(); ++r) {
      EnsembleOutput o;
      o.expert_scores = v.expert_scores.value().row(r).transpose();
      o.gate_weights = v.gate_weights.value().row(r).transpose();
      o.weighted = v.weighted.value().row(r).transpose();
      o.logit = v.logit.value()(r, 0);
      o.score = v.score.value()(r, 0);
      out.push_back(std::move(o));
    }
  }
  return out;
}

Eigen::VectorXd DynamicEnsemblePredictor::expert_scores(std::span<const int> tokens) const {
  return evaluate(tokens).expert_scores;
}

Eigen::VectorXd DynamicEnsemblePredictor::gate_weights(std::span<const int> tokens) const {
  return evaluate(tokens).gate_weights;
}

Eigen::VectorXd DynamicEnsemblePredictor::weighted_scores(std::span<const int> tokens) const {
  return evaluate(tokens).weighted;
}

double DynamicEnsemblePredictor::ensemble_score(std::span<const int> tokens) const {
  return evaluate(tokens).score;
}

json DynamicEnsemblePredictor::to_json() const {
  json j;
  j["format"] = "dynens-ensemble";
  j["version"] = kModelFormatVersion;
  j["fusion"] = fusion_name(fusion_);
  j["n"] = experts_.size();
  j["lf_names"] = lf_names();
  j["experts"] = json::array();
  for (const auto& e : experts_) j["experts"].push_back(e.to_json());
  if (gate_) {
    j["gate"] = {{"encoder_config", encoder_config_json(gate_->net().encoder().config())},
                 {"head_hidden", gate_->net().head().config().hidden_dim},
                 {"weights", gate_->net().to_json()}};
  } else {
    j["gate"] = nullptr;
  }
  j["uniform_logits"] = fusion_ == Fusion::kUniform ? dynens::to_json(uniform_logits_) : json(nullptr);
  return j;
}

DynamicEnsemblePredictor DynamicEnsemblePredictor::from_json(const json& j) {
  check_format(j, "dynens-ensemble");
  DynamicEnsemblePredictor p;
  p.fusion_ = parse_fusion(j.at("fusion").get<std::string>());
  for (const auto& ej : j.at("experts")) p.experts_.push_back(ExpertPredictor::from_json(ej));
  const auto n = j.at("n").get<std::size_t>();
  if (n != p.experts_.size() || n == 0) throw std::runtime_error("model checkpoint: expert count mismatch");
  const auto names = j.at("lf_names").get<std::vector<std::string>>();
  if (names != p.lf_names()) throw std::runtime_error("model checkpoint: lf_names order mismatch");
  if (p.fusion_ == Fusion::kDynamic) {
    const json& gj = j.at("gate");
    Rng scratch(0);
    p.gate_.emplace(static_cast<int>(n), encoder_config_from(gj.at("encoder_config")),
                    gj.at("head_hidden").get<int>(), scratch);
    p.gate_->net().load_json(gj.at("weights"));
  } else if (p.fusion_ == Fusion::kUniform) {
    p.uniform_logits_ = parameter_set_from_json(j.at("uniform_logits"));
  }
  return p;
}

std::unique_ptr<RankModel> model_from_json(const json& j) {
  const auto format = j.value("format", "");
  if (format == "dynens-single") return std::make_unique<ExpertPredictor>(ExpertPredictor::from_json(j));
  if (format == "dynens-ensemble") {
    return std::make_unique<DynamicEnsemblePredictor>(DynamicEnsemblePredictor::from_json(j));
  }
  throw std::runtime_error("model checkpoint: unknown format \"" + format + "\"");
}

void save_model(const std::filesystem::path& path, const RankModel& model) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << model.to_json().dump();
}

std::unique_ptr<RankModel> load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return model_from_json(json::parse(in));
}

}  // namespace dynens
