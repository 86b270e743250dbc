#pragma once

#include "dynens/benchmark.hpp"
#include "dynens/training.hpp"

#include <nlohmann/json.hpp>

#include <deque>
#include <functional>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace dynens {

class SearchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SearchConfig {
  int initial_queries = 20;     // N0
  int lf_samples = 7813;        // M
  int stages = 5;               // Tp
  int evolution_steps = 50;     // Tpe
  int queries_per_stage = 5;    // Np
  int population = 20;          // pi
  int tournament = 5;           // mu
  int stage_epochs = 100;       // K
  std::uint64_t seed = 0;
  std::optional<double> flops_limit;
  TrainConfig train;

  void validate() const;
  int total_budget() const { return initial_queries + stages * queries_per_stage; }
};

nlohmann::json to_json(const SearchConfig& c);
SearchConfig search_config_from_json(const nlohmann::json& j, SearchConfig base = {});

enum class SearchMode { kDynamic, kVanillaPredictor, kRandom, kEvolution };

const char* search_mode_name(SearchMode m);
SearchMode parse_search_mode(const std::string& s);

/// Which table records a search may propose, and how a record mutates.
class MutationSpace {
 public:
  MutationSpace(const BenchmarkTable& table, std::optional<double> flops_limit);

  bool eligible(std::size_t index) const;
  const std::vector<std::size_t>& eligible_indices() const { return eligible_; }
  const BenchmarkTable& table() const { return *table_; }

  /// Table records that differ from `index` in exactly one token position
  /// and are eligible.
  std::vector<std::size_t> neighbors(std::size_t index) const;

  /// A neighbor chosen uniformly among the (position, new token) edits that
  /// land on an eligible record. Falls back to a uniformly random eligible
  /// record when no such edit exists.
  std::size_t mutate(std::size_t index, Rng& rng) const;

 private:
  const BenchmarkTable* table_;
  std::optional<double> flops_limit_;
  std::vector<std::size_t> eligible_;
};

using ScoreFn = std::function<double(std::size_t index)>;

/// Samples `tournament` members of `population` without replacement, takes
/// the highest-scored one (first in sample order on ties) and returns a
/// one-token mutation of it.
std::size_t tournament_step(const std::deque<std::size_t>& population, const ScoreFn& score,
                            int tournament, const MutationSpace& space, Rng& rng);

struct QueryRecord {
  int stage = 0;
  std::string arch_id;
  std::size_t index = 0;
  std::optional<double> predicted;
  double gt = 0.0;
  double best_so_far = 0.0;
};

struct SearchHistory {
  std::vector<QueryRecord> queries;

  std::size_t distinct_queries() const;
  double best_gt() const;
  const QueryRecord& best() const;
};

/// stage,arch_id,predicted,gt,best_so_far (predicted empty when no
/// predictor was involved).
void write_history_csv(std::ostream& out, const SearchHistory& h);

SearchHistory run_search(const BenchmarkTable& table, const SearchConfig& config, SearchMode mode);

/// The k highest-scored eligible records, best first.
std::vector<std::string> topk_select(const BenchmarkTable& table, std::span<const double> scores,
                                     std::size_t k, std::optional<double> flops_limit = std::nullopt);
std::vector<std::string> topk_select(const RankModel& model, const BenchmarkTable& table, std::size_t k,
                                     std::optional<double> flops_limit = std::nullopt);

}  // namespace dynens
