#include "dynens/synthetic.hpp"

#include "dynens/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>

namespace dynens {

namespace {

constexpr int kFieldDim = 4;
constexpr int kFieldMixtures = 4;
constexpr double kPairwiseWeight = 0.5;

// Disturbance scales, in units of the gt standard deviation. Frozen after
// checking the correlation bands on seeds 0..9.
constexpr double kRegionalNoise = 0.2;
constexpr double kGlobalNoise = 0.4;
constexpr double kGlobalCurvature = 0.8;
constexpr double kAdverseNoise = 1.7;

/// Smooth random function of a token sequence: tanh mixture over summed
/// position-token embeddings plus an adjacent-pair interaction table.
class RandomField {
 public:
  RandomField(int seq_len, int vocab, Rng& rng)
      : seq_len_(seq_len), vocab_(vocab),
        embed_(static_cast<std::size_t>(seq_len * vocab * kFieldDim)),
        pair_(static_cast<std::size_t>(std::max(seq_len - 1, 0) * vocab * vocab)) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& e : embed_) e = normal(rng);
    for (int k = 0; k < kFieldMixtures; ++k) {
      amp_[k] = normal(rng);
      bias_[k] = 0.5 * normal(rng);
      for (int d = 0; d < kFieldDim; ++d) dir_[k][d] = normal(rng) / std::sqrt(double(kFieldDim));
    }
    for (double& w : pair_) w = normal(rng);
  }

  double operator()(const std::vector<int>& tokens) const {
    double s[kFieldDim] = {};
    for (int p = 0; p < seq_len_; ++p) {
      const double* e = &embed_[static_cast<std::size_t>((p * vocab_ + tokens[p]) * kFieldDim)];
      for (int d = 0; d < kFieldDim; ++d) s[d] += e[d];
    }
    const double norm = 1.0 / std::sqrt(double(seq_len_));
    double out = 0.0;
    for (int k = 0; k < kFieldMixtures; ++k) {
      double z = bias_[k];
      for (int d = 0; d < kFieldDim; ++d) z += dir_[k][d] * s[d] * norm;
      out += amp_[k] * std::tanh(z);
    }
    double pairwise = 0.0;
    for (int p = 0; p + 1 < seq_len_; ++p) {
      pairwise += pair_[static_cast<std::size_t>((p * vocab_ + tokens[p]) * vocab_ + tokens[p + 1])];
    }
    return out + kPairwiseWeight * pairwise * norm;
  }

 private:
  int seq_len_;
  int vocab_;
  std::vector<double> embed_;
  std::vector<double> pair_;
  double amp_[kFieldMixtures];
  double bias_[kFieldMixtures];
  double dir_[kFieldMixtures][kFieldDim];
};

double mean_of(const std::vector<double>& v, const std::vector<std::size_t>& idx) {
  double s = 0.0;
  for (std::size_t i : idx) s += v[i];
  return s / static_cast<double>(idx.size());
}

/// Standardizes v over idx to zero mean and unit variance (in place on idx).
void standardize(std::vector<double>& v, const std::vector<std::size_t>& idx) {
  const double m = mean_of(v, idx);
  double ss = 0.0;
  for (std::size_t i : idx) ss += (v[i] - m) * (v[i] - m);
  const double sd = std::sqrt(ss / static_cast<double>(idx.size()));
  for (std::size_t i : idx) v[i] = sd > 0.0 ? (v[i] - m) / sd : 0.0;
}

/// Removes the least-squares projection of u onto ref over idx, then
/// standardizes. Both are assumed centered on idx.
void decorrelate(std::vector<double>& u, const std::vector<double>& ref,
                 const std::vector<std::size_t>& idx) {
  standardize(u, idx);
  const double mref = mean_of(ref, idx);
  double dot = 0.0;
  double rr = 0.0;
  for (std::size_t i : idx) {
    dot += u[i] * (ref[i] - mref);
    rr += (ref[i] - mref) * (ref[i] - mref);
  }
  const double beta = rr > 0.0 ? dot / rr : 0.0;
  for (std::size_t i : idx) u[i] -= beta * (ref[i] - mref);
  standardize(u, idx);
}

void min_max(std::vector<double>& v) {
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double l = *lo;
  const double span = *hi - *lo;
  for (double& x : v) x = span > 0.0 ? (x - l) / span : 0.5;
}

std::vector<std::vector<int>> sample_unique_sequences(int count, int seq_len, int vocab, Rng& rng) {
  const double space = std::pow(double(vocab), double(seq_len));
  if (double(count) > space) {
    throw BenchmarkError("synthetic: size " + std::to_string(count) + " exceeds the " +
                         std::to_string(static_cast<long long>(space)) + " distinct sequences");
  }
  std::uniform_int_distribution<int> tok(0, vocab - 1);
  std::set<std::vector<int>> seen;
  std::vector<std::vector<int>> out;
  out.reserve(static_cast<std::size_t>(count));
  // Rejection sampling; dense requests fall back to enumerating the space.
  if (double(count) > 0.5 * space) {
    std::vector<std::vector<int>> all;
    std::vector<int> cur(static_cast<std::size_t>(seq_len), 0);
    for (long long code = 0; code < static_cast<long long>(space); ++code) {
      long long c = code;
      for (int p = seq_len - 1; p >= 0; --p) {
        cur[static_cast<std::size_t>(p)] = static_cast<int>(c % vocab);
        c /= vocab;
      }
      all.push_back(cur);
    }
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(static_cast<std::size_t>(count));
    return all;
  }
  while (static_cast<int>(out.size()) < count) {
    std::vector<int> s(static_cast<std::size_t>(seq_len));
    for (int& t : s) t = tok(rng);
    if (seen.insert(s).second) out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

BenchmarkTable gen_synthetic(const SyntheticConfig& config) {
  if (config.vocab_size < 2) throw BenchmarkError("synthetic: vocab_size must be at least 2");
  if (config.seq_len < 1) throw BenchmarkError("synthetic: seq_len must be positive");
  if (config.size < 100) throw BenchmarkError("synthetic: size must be at least 100");
  if (!(config.train_share > 0.0 && config.train_share < 1.0)) {
    throw BenchmarkError("synthetic: train_share must lie in (0, 1)");
  }

  Rng rng = make_rng(config.seed, "synthetic");
  const auto n = static_cast<std::size_t>(config.size);
  const auto seqs = sample_unique_sequences(config.size, config.seq_len, config.vocab_size, rng);

  const RandomField gt_field(config.seq_len, config.vocab_size, rng);
  std::vector<RandomField> noise;
  for (int k = 0; k < 7; ++k) noise.emplace_back(config.seq_len, config.vocab_size, rng);

  std::vector<double> z(n);
  std::vector<std::vector<double>> u(noise.size(), std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    z[i] = gt_field(seqs[i]);
    for (std::size_t k = 0; k < noise.size(); ++k) u[k][i] = noise[k](seqs[i]);
  }

  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  std::vector<std::size_t> region_a;
  std::vector<std::size_t> region_b;
  for (std::size_t i = 0; i < n; ++i) (seqs[i][0] % 2 == 0 ? region_a : region_b).push_back(i);
  if (region_a.size() < 2 || region_b.size() < 2) throw BenchmarkError("synthetic: degenerate regions");

  standardize(z, all);
  // u[0], u[1]: small in-region disturbance; u[2], u[3]: out-of-region
  // replacement; u[4]: global disturbance; u[5]: pure noise column;
  // u[6]: adverse disturbance.
  decorrelate(u[0], z, region_a);
  decorrelate(u[2], z, region_b);
  decorrelate(u[1], z, region_b);
  decorrelate(u[3], z, region_a);
  for (std::size_t k = 4; k < 7; ++k) decorrelate(u[k], z, all);

  std::vector<double> proxy_a(n), proxy_b(n), proxy_global(n), proxy_adverse(n), proxy_noise(n);
  for (std::size_t i = 0; i < n; ++i) {
    const bool a = seqs[i][0] % 2 == 0;
    proxy_a[i] = a ? z[i] + kRegionalNoise * u[0][i] : u[2][i];
    proxy_b[i] = a ? u[3][i] : z[i] + kRegionalNoise * u[1][i];
    proxy_global[i] = std::exp(kGlobalCurvature * (z[i] + kGlobalNoise * u[4][i]));
    proxy_adverse[i] = -z[i] + kAdverseNoise * u[6][i];
    proxy_noise[i] = u[5][i];
  }
  std::vector<double> gt = z;
  for (auto* col : {&gt, &proxy_a, &proxy_b, &proxy_global, &proxy_adverse, &proxy_noise}) min_max(*col);

  // Per position/token cost, in millions of FLOPs.
  Rng cost_rng = make_rng(config.seed, "synthetic/flops");
  std::uniform_real_distribution<double> cost(2.0, 30.0);
  std::vector<double> token_cost(static_cast<std::size_t>(config.seq_len * config.vocab_size));
  for (double& c : token_cost) c = cost(cost_rng);

  std::vector<ArchitectureRecord> records(n);
  for (std::size_t i = 0; i < n; ++i) {
    ArchitectureRecord& r = records[i];
    char id[32];
    std::snprintf(id, sizeof(id), "arch-%06zu", i);
    r.id = id;
    r.tokens = seqs[i];
    r.gt_accuracy = gt[i];
    r.lf_values = {{"proxy_a", proxy_a[i]},
                   {"proxy_b", proxy_b[i]},
                   {"proxy_global", proxy_global[i]},
                   {"proxy_adverse", proxy_adverse[i]},
                   {"proxy_noise", proxy_noise[i]}};
    double f = 0.0;
    for (int p = 0; p < config.seq_len; ++p) {
      f += token_cost[static_cast<std::size_t>(p * config.vocab_size + seqs[i][static_cast<std::size_t>(p)])];
    }
    r.flops = f;
  }
  std::vector<Split> splits(n, Split::kTrain);
  const auto n_train = static_cast<std::size_t>(std::ceil(config.train_share * double(n)));
  for (std::size_t i = n_train; i < n; ++i) splits[i] = Split::kValidation;

  return BenchmarkTable(config.seq_len, config.vocab_size,
                        {std::begin(kSyntheticLfNames), std::end(kSyntheticLfNames)},
                        std::move(records), std::move(splits));
}

}  // namespace dynens
