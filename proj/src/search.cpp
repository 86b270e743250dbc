#include "dynens/search.hpp"

#include "dynens/rng.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <ostream>
#include <unordered_map>
#include <unordered_set>

namespace dynens {

using nlohmann::json;

void SearchConfig::validate() const {
  const std::pair<const char*, int> counts[] = {
      {"N0", initial_queries},      {"M", lf_samples},          {"Tp", stages},
      {"Tpe", evolution_steps},     {"Np", queries_per_stage},  {"population", population},
      {"tournament", tournament},   {"K", stage_epochs}};
  for (const auto& [name, v] : counts) {
    if (v < 1) throw SearchError(std::string("search config: ") + name + " must be at least 1");
  }
  if (tournament > population) throw SearchError("search config: tournament size exceeds population");
  train.validate();
}

json to_json(const SearchConfig& c) {
  json j = {{"n0", c.initial_queries},  {"m", c.lf_samples},
            {"tp", c.stages},           {"tpe", c.evolution_steps},
            {"np", c.queries_per_stage}, {"population", c.population},
            {"tournament", c.tournament}, {"k", c.stage_epochs},
            {"seed", c.seed},           {"total_budget", c.total_budget()},
            {"mutation", "single-token resample onto an existing eligible record; uniform eligible record when none exists"},
            {"population_init", "uniform from queried records, topped up uniformly from the table"},
            {"replacement", "oldest member"},
            {"train", to_json(c.train)}};
  j["flops_limit"] = c.flops_limit ? json(*c.flops_limit) : json(nullptr);
  return j;
}

SearchConfig search_config_from_json(const json& j, SearchConfig c) {
  c.initial_queries = j.value("n0", c.initial_queries);
  c.lf_samples = j.value("m", c.lf_samples);
  c.stages = j.value("tp", c.stages);
  c.evolution_steps = j.value("tpe", c.evolution_steps);
  c.queries_per_stage = j.value("np", c.queries_per_stage);
  c.population = j.value("population", c.population);
  c.tournament = j.value("tournament", c.tournament);
  c.stage_epochs = j.value("k", c.stage_epochs);
  c.seed = j.value("seed", c.seed);
  if (j.contains("flops_limit")) {
    c.flops_limit = j.at("flops_limit").is_null() ? std::nullopt
                                                  : std::optional<double>(j.at("flops_limit").get<double>());
  }
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"), c.train);
  return c;
}

const char* search_mode_name(SearchMode m) {
  switch (m) {
    case SearchMode::kDynamic: return "dynamic";
    case SearchMode::kVanillaPredictor: return "vanilla-predictor";
    case SearchMode::kRandom: return "random";
    case SearchMode::kEvolution: return "evolution";
  }
  return "unknown";
}

SearchMode parse_search_mode(const std::string& s) {
  for (SearchMode m : {SearchMode::kDynamic, SearchMode::kVanillaPredictor, SearchMode::kRandom,
                       SearchMode::kEvolution}) {
    if (s == search_mode_name(m)) return m;
  }
  throw std::invalid_argument("unknown search mode: " + s);
}

MutationSpace::MutationSpace(const BenchmarkTable& table, std::optional<double> flops_limit)
    : table_(&table), flops_limit_(flops_limit) {
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (eligible(i)) eligible_.push_back(i);
  }
}

bool MutationSpace::eligible(std::size_t index) const {
  if (!flops_limit_) return true;
  const auto& f = table_->record(index).flops;
  return f && *f <= *flops_limit_;
}

std::vector<std::size_t> MutationSpace::neighbors(std::size_t index) const {
  std::vector<std::size_t> out;
  std::vector<int> tokens = table_->record(index).tokens;
  for (std::size_t p = 0; p < tokens.size(); ++p) {
    const int original = tokens[p];
    for (int t = 0; t < table_->vocab_size(); ++t) {
      if (t == original) continue;
      tokens[p] = t;
      if (auto hit = table_->find_tokens(tokens); hit && eligible(*hit)) out.push_back(*hit);
    }
    tokens[p] = original;
  }
  return out;
}

std::size_t MutationSpace::mutate(std::size_t index, Rng& rng) const {
  if (eligible_.empty()) throw SearchError("no eligible architectures to mutate into");
  const auto options = neighbors(index);
  if (!options.empty()) {
    std::uniform_int_distribution<std::size_t> pick(0, options.size() - 1);
    return options[pick(rng)];
  }
  std::uniform_int_distribution<std::size_t> pick(0, eligible_.size() - 1);
  return eligible_[pick(rng)];
}

std::size_t tournament_step(const std::deque<std::size_t>& population, const ScoreFn& score,
                            int tournament, const MutationSpace& space, Rng& rng) {
  if (tournament < 1) throw SearchError("tournament size must be at least 1");
  if (static_cast<std::size_t>(tournament) > population.size()) {
    throw SearchError("tournament size " + std::to_string(tournament) + " exceeds population of " +
                      std::to_string(population.size()));
  }
  std::vector<std::size_t> slots(population.size());
  std::iota(slots.begin(), slots.end(), 0);
  // Partial Fisher-Yates: the first `tournament` slots form the sample.
  for (std::size_t i = 0; i < static_cast<std::size_t>(tournament); ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, slots.size() - 1);
    std::swap(slots[i], slots[pick(rng)]);
  }
  std::size_t parent = population[slots[0]];
  double best = score(parent);
  for (std::size_t i = 1; i < static_cast<std::size_t>(tournament); ++i) {
    const std::size_t cand = population[slots[i]];
    const double s = score(cand);
    if (s > best) {
      best = s;
      parent = cand;
    }
  }
  return space.mutate(parent, rng);
}

std::size_t SearchHistory::distinct_queries() const {
  std::unordered_set<std::size_t> seen;
  for (const auto& q : queries) seen.insert(q.index);
  return seen.size();
}

const QueryRecord& SearchHistory::best() const {
  if (queries.empty()) throw SearchError("empty search history");
  return *std::max_element(queries.begin(), queries.end(),
                           [](const QueryRecord& a, const QueryRecord& b) { return a.gt < b.gt; });
}

double SearchHistory::best_gt() const { return best().gt; }

void write_history_csv(std::ostream& out, const SearchHistory& h) {
  out << "stage,arch_id,predicted,gt,best_so_far\n";
  out.precision(17);
  for (const auto& q : h.queries) {
    out << q.stage << ',' << q.arch_id << ',';
    if (q.predicted) out << *q.predicted;
    out << ',' << q.gt << ',' << q.best_so_far << '\n';
  }
}

namespace {

/// Ground-truth oracle with budget accounting and deduplication.
class Oracle {
 public:
  Oracle(const BenchmarkTable& table, int budget) : table_(table), budget_(budget) {}

  bool queried(std::size_t i) const { return seen_.contains(i); }
  bool exhausted() const { return static_cast<int>(history_.queries.size()) >= budget_; }
  const std::vector<std::size_t>& known() const { return known_; }

  double query(std::size_t i, int stage, std::optional<double> predicted) {
    if (queried(i)) throw std::logic_error("architecture queried twice");
    if (exhausted()) throw std::logic_error("query budget exceeded");
    const auto& r = table_.record(i);
    if (!r.gt_accuracy) throw SearchError("record " + r.id + " has no ground truth to query");
    seen_.insert(i);
    known_.push_back(i);
    best_ = std::max(best_, *r.gt_accuracy);
    history_.queries.push_back({stage, r.id, i, predicted, *r.gt_accuracy, best_});
    return *r.gt_accuracy;
  }

  SearchHistory take() { return std::move(history_); }

 private:
  const BenchmarkTable& table_;
  int budget_;
  std::unordered_set<std::size_t> seen_;
  std::vector<std::size_t> known_;
  double best_ = -std::numeric_limits<double>::infinity();
  SearchHistory history_;
};

std::vector<std::size_t> sample_without_replacement(const std::vector<std::size_t>& pool, std::size_t k,
                                                    Rng& rng) {
  std::vector<std::size_t> v = pool;
  k = std::min(k, v.size());
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, v.size() - 1);
    std::swap(v[i], v[pick(rng)]);
  }
  v.resize(k);
  return v;
}

std::size_t random_unqueried(const MutationSpace& space, const Oracle& oracle, Rng& rng) {
  std::vector<std::size_t> pool;
  for (std::size_t i : space.eligible_indices()) {
    if (!oracle.queried(i)) pool.push_back(i);
  }
  if (pool.empty()) throw SearchError("every eligible architecture has been queried");
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  return pool[pick(rng)];
}

void run_random(const SearchConfig& config, const MutationSpace& space, Oracle& oracle, Rng& rng) {
  const auto picks = sample_without_replacement(space.eligible_indices(),
                                                static_cast<std::size_t>(config.total_budget()), rng);
  for (std::size_t q = 0; q < picks.size(); ++q) {
    const int k = static_cast<int>(q);
    const int stage = k < config.initial_queries ? 0 : 1 + (k - config.initial_queries) / config.queries_per_stage;
    oracle.query(picks[q], stage, std::nullopt);
  }
}

void run_evolution(const SearchConfig& config, const MutationSpace& space, Oracle& oracle, Rng& rng) {
  const auto& table = space.table();
  for (std::size_t i : sample_without_replacement(space.eligible_indices(),
                                                  static_cast<std::size_t>(config.initial_queries), rng)) {
    oracle.query(i, 0, std::nullopt);
  }
  std::deque<std::size_t> population;
  for (std::size_t i : sample_without_replacement(oracle.known(), static_cast<std::size_t>(config.population), rng)) {
    population.push_back(i);
  }
  while (static_cast<int>(population.size()) < config.population) {
    const std::size_t i = random_unqueried(space, oracle, rng);
    const int stage = 1 + (static_cast<int>(oracle.known().size()) - config.initial_queries) / config.queries_per_stage;
    if (oracle.exhausted()) break;
    oracle.query(i, stage, std::nullopt);
    population.push_back(i);
  }
  const ScoreFn fitness = [&](std::size_t i) { return *table.record(i).gt_accuracy; };
  const int tournament = std::min<int>(config.tournament, static_cast<int>(population.size()));
  const long long max_steps = 1000LL * config.total_budget();
  long long steps = 0;
  while (!oracle.exhausted()) {
    std::size_t child = tournament_step(population, fitness, tournament, space, rng);
    if (oracle.queried(child) && ++steps > max_steps) child = random_unqueried(space, oracle, rng);
    if (!oracle.queried(child)) {
      const int stage = 1 + (static_cast<int>(oracle.known().size()) - config.initial_queries) / config.queries_per_stage;
      oracle.query(child, stage, std::nullopt);
    }
    population.push_back(child);
    population.pop_front();
  }
}

std::unique_ptr<RankModel> initial_predictor(const BenchmarkTable& table, const SearchConfig& config,
                                             SearchMode mode, const Oracle& oracle, Rng& rng) {
  const TrainConfig& tc = config.train;
  SeqList gt_seqs;
  std::vector<double> gt;
  for (std::size_t i : oracle.known()) {
    gt_seqs.push_back(&table.record(i).tokens);
    gt.push_back(*table.record(i).gt_accuracy);
  }
  const int gt_batch = std::max(2, std::min<int>(tc.effective_batch_size(table.size()),
                                                 static_cast<int>(gt_seqs.size())));
  if (mode == SearchMode::kVanillaPredictor) {
    Rng init = make_rng(tc.seed, "init/vanilla");
    auto model = std::make_unique<ExpertPredictor>("gt", tc.encoder_config(table.vocab_size()),
                                                   tc.head_hidden, init);
    fit_ranking(*model, gt_seqs, gt, tc.epochs_finetune, gt_batch, tc, "search/initial");
    return model;
  }

  // LF evaluation sample: M records carrying LF values, drawn uniformly.
  std::vector<std::size_t> carriers;
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (!table.record(i).lf_values.empty()) carriers.push_back(i);
  }
  if (static_cast<std::size_t>(config.lf_samples) > carriers.size()) {
    throw SearchError("search config: M = " + std::to_string(config.lf_samples) + " exceeds the " +
                      std::to_string(carriers.size()) + " records carrying low-fidelity values");
  }
  const auto lf_pick = sample_without_replacement(carriers, static_cast<std::size_t>(config.lf_samples), rng);
  std::vector<ExpertPredictor> experts;
  for (const auto& lf : table.lf_names()) {
    SeqList seqs;
    std::vector<double> targets;
    for (std::size_t i : lf_pick) {
      seqs.push_back(&table.record(i).tokens);
      targets.push_back(table.record(i).lf_values.at(lf));
    }
    experts.push_back(pretrain_expert(lf, seqs, targets, table.vocab_size(), tc, table.size()));
  }
  return std::make_unique<DynamicEnsemblePredictor>(finetune_ensemble(
      std::move(experts), gt_seqs, gt, table.vocab_size(), tc, Fusion::kDynamic, table.size()));
}

void run_predictor_search(const BenchmarkTable& table, const SearchConfig& config, SearchMode mode,
                          const MutationSpace& space, Oracle& oracle, Rng& rng) {
  for (std::size_t i : sample_without_replacement(space.eligible_indices(),
                                                  static_cast<std::size_t>(config.initial_queries), rng)) {
    oracle.query(i, 0, std::nullopt);
  }
  std::unique_ptr<RankModel> model = initial_predictor(table, config, mode, oracle, rng);

  for (int stage = 1; stage <= config.stages; ++stage) {
    std::unordered_map<std::size_t, double> cache;
    const ScoreFn score = [&](std::size_t i) {
      if (auto it = cache.find(i); it != cache.end()) return it->second;
      const double s = model->predict_one(table.record(i).tokens);
      cache.emplace(i, s);
      return s;
    };

    std::vector<std::size_t> proposals;
    auto taken = [&](std::size_t i) {
      return oracle.queried(i) || std::find(proposals.begin(), proposals.end(), i) != proposals.end();
    };
    for (int run = 0; run < config.queries_per_stage; ++run) {
      std::deque<std::size_t> population;
      for (std::size_t i : sample_without_replacement(oracle.known(), static_cast<std::size_t>(config.population), rng)) {
        population.push_back(i);
      }
      if (static_cast<int>(population.size()) < config.population) {
        std::vector<std::size_t> rest;
        for (std::size_t i : space.eligible_indices()) {
          if (std::find(population.begin(), population.end(), i) == population.end()) rest.push_back(i);
        }
        for (std::size_t i : sample_without_replacement(
                 rest, static_cast<std::size_t>(config.population) - population.size(), rng)) {
          population.push_back(i);
        }
      }
      const int tournament = std::min<int>(config.tournament, static_cast<int>(population.size()));
      for (int step = 0; step < config.evolution_steps; ++step) {
        population.push_back(tournament_step(population, score, tournament, space, rng));
        population.pop_front();
      }
      std::optional<std::size_t> pick;
      for (std::size_t i : population) {
        if (taken(i)) continue;
        if (!pick || score(i) > score(*pick)) pick = i;
      }
      proposals.push_back(pick ? *pick : [&] {
        std::size_t i;
        do {
          i = random_unqueried(space, oracle, rng);
        } while (std::find(proposals.begin(), proposals.end(), i) != proposals.end());
        return i;
      }());
    }
    for (std::size_t i : proposals) oracle.query(i, stage, score(i));

    SeqList seqs;
    std::vector<double> gt;
    for (std::size_t i : oracle.known()) {
      seqs.push_back(&table.record(i).tokens);
      gt.push_back(*table.record(i).gt_accuracy);
    }
    const int batch = std::max(2, std::min<int>(config.train.effective_batch_size(table.size()),
                                                static_cast<int>(seqs.size())));
    if (stage < config.stages) {
      fit_ranking(*model, seqs, gt, config.stage_epochs, batch, config.train,
                  "search/stage/" + std::to_string(stage));
    }
  }
}

}  // namespace

SearchHistory run_search(const BenchmarkTable& table, const SearchConfig& config, SearchMode mode) {
  config.validate();
  const MutationSpace space(table, config.flops_limit);
  if (space.eligible_indices().empty()) throw SearchError("constraint excludes every architecture in the table");
  if (static_cast<std::size_t>(config.total_budget()) > space.eligible_indices().size()) {
    throw SearchError("query budget " + std::to_string(config.total_budget()) + " exceeds the " +
                      std::to_string(space.eligible_indices().size()) + " eligible architectures");
  }
  for (std::size_t i : space.eligible_indices()) {
    if (!table.record(i).gt_accuracy) {
      throw SearchError("record " + table.record(i).id + " lacks ground truth; the table cannot act as oracle");
    }
  }
  Rng rng = make_rng(config.seed, "search");
  Oracle oracle(table, config.total_budget());
  switch (mode) {
    case SearchMode::kRandom: run_random(config, space, oracle, rng); break;
    case SearchMode::kEvolution: run_evolution(config, space, oracle, rng); break;
    case SearchMode::kDynamic:
    case SearchMode::kVanillaPredictor: run_predictor_search(table, config, mode, space, oracle, rng); break;
  }
  return oracle.take();
}

std::vector<std::string> topk_select(const BenchmarkTable& table, std::span<const double> scores,
                                     std::size_t k, std::optional<double> flops_limit) {
  if (scores.size() != table.size()) throw std::invalid_argument("topk_select: one score per record required");
  const MutationSpace space(table, flops_limit);
  std::vector<std::size_t> idx = space.eligible_indices();
  if (k > idx.size()) {
    throw SearchError("topk_select: k = " + std::to_string(k) + " exceeds the " + std::to_string(idx.size()) +
                      " eligible architectures");
  }
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < k; ++i) ids.push_back(table.record(idx[i]).id);
  return ids;
}

std::vector<std::string> topk_select(const RankModel& model, const BenchmarkTable& table, std::size_t k,
                                     std::optional<double> flops_limit) {
  SeqList seqs;
  for (const auto& r : table.records()) seqs.push_back(&r.tokens);
  const auto scores = model.predict(seqs);
  return topk_select(table, scores, k, flops_limit);
}

}  // namespace dynens
