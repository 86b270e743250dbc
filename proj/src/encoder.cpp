#include "dynens/encoder.hpp"

#include <string>

namespace dynens {

namespace {

enum EncoderSlot : std::size_t { kEmbedding = 0, kInputWeights, kHiddenWeights, kGateBias };

}  // namespace

TokenBatch TokenBatch::single(std::span<const int> seq) {
  TokenBatch b;
  b.batch = 1;
  b.seq_len = static_cast<int>(seq.size());
  b.tokens.assign(seq.begin(), seq.end());
  return b;
}

TokenBatch TokenBatch::from(const std::vector<const std::vector<int>*>& seqs) {
  TokenBatch b;
  b.batch = static_cast<int>(seqs.size());
  b.seq_len = seqs.empty() ? 0 : static_cast<int>(seqs.front()->size());
  b.tokens.reserve(seqs.size() * static_cast<std::size_t>(b.seq_len));
  for (const auto* s : seqs) {
    if (static_cast<int>(s->size()) != b.seq_len) throw EncodeError("ragged token batch");
    b.tokens.insert(b.tokens.end(), s->begin(), s->end());
  }
  return b;
}

SequenceEncoder::SequenceEncoder(const EncoderConfig& config, Rng& init_rng) : config_(config) {
  if (config.vocab_size < 1 || config.embed_dim < 1 || config.hidden_dim < 1) {
    throw std::invalid_argument("encoder dimensions must be positive");
  }
  if (!(config.dropout >= 0.0 && config.dropout < 1.0)) {
    throw std::invalid_argument("dropout rate must lie in [0, 1)");
  }
  const int h = config.hidden_dim;
  params_.add("embedding", uniform_fan_in(config.vocab_size, config.embed_dim, init_rng));
  params_.add("lstm.w_input", uniform_fan_in(config.embed_dim, 4 * h, init_rng));
  params_.add("lstm.w_hidden", uniform_fan_in(h, 4 * h, init_rng));
  // Gate layout along columns: input, forget, cell candidate, output.
  Matrix bias = Matrix::Zero(1, 4 * h);
  bias.middleCols(h, h).setConstant(config.forget_bias);
  params_.add("lstm.bias", std::move(bias));
}

void SequenceEncoder::check(const TokenBatch& batch) const {
  if (batch.batch < 1 || batch.seq_len < 1) throw EncodeError("empty token sequence");
  for (int t : batch.tokens) {
    if (t < 0 || t >= config_.vocab_size) {
      throw EncodeError("token " + std::to_string(t) + " outside vocabulary of size " +
                        std::to_string(config_.vocab_size));
    }
  }
}

ad::Var SequenceEncoder::encode(ad::Graph& g, const TokenBatch& batch, bool training,
                                Rng* dropout_rng) const {
  check(batch);
  const int h = config_.hidden_dim;
  const ad::Var table = g.param(params_[kEmbedding]);
  const ad::Var w_in = g.param(params_[kInputWeights]);
  const ad::Var w_hid = g.param(params_[kHiddenWeights]);
  const ad::Var bias = g.param(params_[kGateBias]);

  ad::Var hidden{};
  ad::Var cell{};
  std::vector<int> rows(static_cast<std::size_t>(batch.batch));
  for (int t = 0; t < batch.seq_len; ++t) {
    for (int r = 0; r < batch.batch; ++r) rows[static_cast<std::size_t>(r)] = batch.at(r, t);
    const ad::Var x = ad::gather_rows(table, rows);
    ad::Var pre = ad::matmul(x, w_in);
    if (t > 0) pre = ad::add(pre, ad::matmul(hidden, w_hid));
    pre = ad::add_row(pre, bias);
    const ad::Var in_gate = ad::sigmoid(ad::slice_cols(pre, 0, h));
    const ad::Var forget_gate = ad::sigmoid(ad::slice_cols(pre, h, h));
    const ad::Var candidate = ad::tanh(ad::slice_cols(pre, 2 * h, h));
    const ad::Var out_gate = ad::sigmoid(ad::slice_cols(pre, 3 * h, h));
    const ad::Var write = ad::mul(in_gate, candidate);
    cell = t > 0 ? ad::add(ad::mul(forget_gate, cell), write) : write;
    hidden = ad::mul(out_gate, ad::tanh(cell));
  }

  if (training && config_.dropout > 0.0) {
    if (dropout_rng == nullptr) throw std::invalid_argument("training encode needs a dropout rng");
    const double keep = 1.0 - config_.dropout;
    std::bernoulli_distribution survive(keep);
    Matrix mask(batch.batch, h);
    for (int r = 0; r < batch.batch; ++r) {
      for (int c = 0; c < h; ++c) mask(r, c) = survive(*dropout_rng) ? 1.0 / keep : 0.0;
    }
    hidden = ad::mul(hidden, g.constant(std::move(mask)));
  }
  return hidden;
}

Eigen::VectorXd SequenceEncoder::encode(std::span<const int> tokens) const {
  ad::Graph g(false);
  const ad::Var v = encode(g, TokenBatch::single(tokens), false, nullptr);
  return v.value().row(0).transpose();
}

MlpHead::MlpHead(const HeadConfig& config, Rng& init_rng) : config_(config) {
  if (config.input_dim < 1 || config.hidden_dim < 1 || config.output_dim < 1) {
    throw std::invalid_argument("head dimensions must be positive");
  }
  const int dims[4] = {config.input_dim, config.hidden_dim, config.hidden_dim, config.output_dim};
  for (int layer = 0; layer < 3; ++layer) {
    const bool zero = config.init == HeadInit::kZero ||
                      (config.init == HeadInit::kZeroLast && layer == 2);
    // Draw even when zeroing so the stream position does not depend on init mode.
    Matrix w = uniform_fan_in(dims[layer], dims[layer + 1], init_rng);
    if (zero) w.setZero();
    const std::string prefix = "layer" + std::to_string(layer + 1);
    params_.add(prefix + ".weight", std::move(w));
    params_.add(prefix + ".bias", Matrix::Zero(1, dims[layer + 1]));
  }
}

ad::Var MlpHead::score(ad::Graph& g, ad::Var embedding) const {
  if (embedding.cols() != config_.input_dim) {
    throw EncodeError("head expects input width " + std::to_string(config_.input_dim) + ", got " +
                      std::to_string(embedding.cols()));
  }
  ad::Var x = embedding;
  for (std::size_t layer = 0; layer < 3; ++layer) {
    x = ad::add_row(ad::matmul(x, g.param(params_[2 * layer])), g.param(params_[2 * layer + 1]));
    if (layer < 2) x = ad::relu(x);
  }
  return x;
}

Eigen::VectorXd MlpHead::score(const Eigen::VectorXd& embedding) const {
  ad::Graph g(false);
  const ad::Var out = score(g, g.constant(embedding.transpose()));
  return out.value().row(0).transpose();
}

ScoringNet::ScoringNet(const EncoderConfig& enc, const HeadConfig& head, Rng& init_rng)
    : encoder_(enc, init_rng), head_([&] {
        HeadConfig h = head;
        h.input_dim = enc.hidden_dim;
        return h;
      }(), init_rng) {}

ad::Var ScoringNet::forward(ad::Graph& g, const TokenBatch& batch, bool training,
                            Rng* dropout_rng) const {
  return head_.score(g, encoder_.encode(g, batch, training, dropout_rng));
}

Eigen::MatrixXd ScoringNet::predict(const TokenBatch& batch) const {
  ad::Graph g(false);
  return forward(g, batch, false, nullptr).value();
}

nlohmann::json ScoringNet::to_json() const {
  return {{"encoder", dynens::to_json(encoder_.params())}, {"head", dynens::to_json(head_.params())}};
}

void ScoringNet::load_json(const nlohmann::json& j) {
  from_json(j.at("encoder"), encoder_.params());
  from_json(j.at("head"), head_.params());
}

}  // namespace dynens
