#pragma once

#include "dynens/autodiff.hpp"
#include "dynens/params.hpp"
#include "dynens/rng.hpp"

#include <span>
#include <stdexcept>
#include <vector>

namespace dynens {

class EncodeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Row-major batch of equal-length token sequences.
struct TokenBatch {
  int batch = 0;
  int seq_len = 0;
  std::vector<int> tokens;

  static TokenBatch single(std::span<const int> seq);
  static TokenBatch from(const std::vector<const std::vector<int>*>& seqs);
  int at(int row, int pos) const { return tokens[static_cast<std::size_t>(row * seq_len + pos)]; }
};

struct EncoderConfig {
  int vocab_size = 0;
  int embed_dim = 100;
  int hidden_dim = 100;
  double dropout = 0.1;
  double forget_bias = 1.0;
};

/// Token embedding followed by a single-layer LSTM; the final hidden state
/// is the architecture embedding.
class SequenceEncoder {
 public:
  SequenceEncoder(const EncoderConfig& config, Rng& init_rng);

  /// Returns batch x hidden_dim. With `training` set, inverted dropout is
  /// applied to the final state using `dropout_rng`.
  ad::Var encode(ad::Graph& g, const TokenBatch& batch, bool training, Rng* dropout_rng) const;

  /// Convenience inference path for one sequence.
  Eigen::VectorXd encode(std::span<const int> tokens) const;

  const EncoderConfig& config() const { return config_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

 private:
  void check(const TokenBatch& batch) const;

  EncoderConfig config_;
  ParameterSet params_;
};

enum class HeadInit { kUniform, kZero, kZeroLast };

struct HeadConfig {
  int input_dim = 100;
  int hidden_dim = 200;
  int output_dim = 1;
  HeadInit init = HeadInit::kUniform;
};

/// Three affine layers with ReLU in between; outputs raw scores.
class MlpHead {
 public:
  MlpHead(const HeadConfig& config, Rng& init_rng);

  ad::Var score(ad::Graph& g, ad::Var embedding) const;
  Eigen::VectorXd score(const Eigen::VectorXd& embedding) const;

  const HeadConfig& config() const { return config_; }
  int output_dim() const { return config_.output_dim; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

 private:
  HeadConfig config_;
  ParameterSet params_;
};

/// Encoder plus head: the building block of every expert, gate and
/// single-predictor baseline.
class ScoringNet {
 public:
  ScoringNet(const EncoderConfig& enc, const HeadConfig& head, Rng& init_rng);

  ad::Var forward(ad::Graph& g, const TokenBatch& batch, bool training, Rng* dropout_rng) const;
  Eigen::MatrixXd predict(const TokenBatch& batch) const;

  SequenceEncoder& encoder() { return encoder_; }
  const SequenceEncoder& encoder() const { return encoder_; }
  MlpHead& head() { return head_; }
  const MlpHead& head() const { return head_; }
  std::vector<ParameterSet*> parameter_sets() { return {&encoder_.params(), &head_.params()}; }

  nlohmann::json to_json() const;
  /// Restores weights saved by to_json() into a net of identical shape.
  void load_json(const nlohmann::json& j);

 private:
  SequenceEncoder encoder_;
  MlpHead head_;
};

}  // namespace dynens
