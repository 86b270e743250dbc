#include "dynens/search.hpp"
#include "dynens/synthetic.hpp"

#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

using namespace dynens;

namespace {

const BenchmarkTable& table() {
  static const BenchmarkTable t = [] {
    SyntheticConfig c;
    c.size = 600;
    c.seed = 2;
    return gen_synthetic(c);
  }();
  return t;
}

// Every sequence of length 4 over 4 tokens.
const BenchmarkTable& full_table() {
  static const BenchmarkTable t = [] {
    SyntheticConfig c;
    c.size = 256;
    c.seq_len = 4;
    c.vocab_size = 4;
    return gen_synthetic(c);
  }();
  return t;
}

SearchConfig small_search(std::uint64_t seed) {
  SearchConfig c;
  c.seed = seed;
  c.initial_queries = 8;
  c.stages = 3;
  c.queries_per_stage = 4;
  c.lf_samples = 200;
  c.evolution_steps = 10;
  c.population = 8;
  c.tournament = 3;
  c.stage_epochs = 2;
  c.train.embed_dim = 6;
  c.train.hidden_dim = 6;
  c.train.head_hidden = 12;
  c.train.epochs_pretrain = 2;
  c.train.epochs_finetune = 3;
  c.train.batch_size = 32;
  c.train.seed = seed;
  return c;
}

constexpr SearchMode kModes[] = {SearchMode::kDynamic, SearchMode::kVanillaPredictor, SearchMode::kRandom,
                                 SearchMode::kEvolution};

double median_flops(const BenchmarkTable& t) {
  std::vector<double> f;
  for (const auto& r : t.records()) f.push_back(*r.flops);
  std::nth_element(f.begin(), f.begin() + static_cast<long>(f.size() / 2), f.end());
  return f[f.size() / 2];
}

}  // namespace

TEST_CASE("every mode spends exactly the budget on distinct architectures") {
  for (SearchMode m : kModes) {
    for (std::uint64_t seed : {0, 1}) {
      const SearchConfig c = small_search(seed);
      const SearchHistory h = run_search(table(), c, m);
      INFO(search_mode_name(m) << " seed " << seed);
      CHECK(h.queries.size() == 20u);
      CHECK(h.distinct_queries() == 20u);
      double best = 0.0;
      for (const auto& q : h.queries) {
        best = std::max(best, q.gt);
        CHECK(q.best_so_far == best);
        CHECK(q.gt == *table().record(q.index).gt_accuracy);
      }
      CHECK(h.best_gt() == best);
      const bool predicted = m == SearchMode::kDynamic || m == SearchMode::kVanillaPredictor;
      CHECK(std::count_if(h.queries.begin(), h.queries.end(), [](const auto& q) { return q.predicted.has_value(); }) ==
            (predicted ? 12 : 0));
    }
  }
}

TEST_CASE("a search replays exactly under the same seed") {
  for (SearchMode m : kModes) {
    std::ostringstream a, b;
    write_history_csv(a, run_search(table(), small_search(7), m));
    write_history_csv(b, run_search(table(), small_search(7), m));
    CHECK(a.str() == b.str());
    CHECK(a.str().rfind("stage,arch_id,predicted,gt,best_so_far\n", 0) == 0);
  }
}

TEST_CASE("flops limit holds for every query and selection") {
  const double limit = median_flops(table());
  for (SearchMode m : kModes) {
    SearchConfig c = small_search(3);
    c.flops_limit = limit;
    for (const auto& q : run_search(table(), c, m).queries) CHECK(*table().record(q.index).flops <= limit);
  }
  std::vector<double> scores;
  for (const auto& r : table().records()) scores.push_back(*r.gt_accuracy);
  for (const auto& id : topk_select(table(), scores, 50, limit)) {
    CHECK(*table().record(*table().index_of(id)).flops <= limit);
  }
}

TEST_CASE("search guards") {
  SearchConfig c = small_search(0);
  c.initial_queries = 590;
  CHECK_THROWS_WITH_AS(run_search(table(), c, SearchMode::kRandom), doctest::Contains("exceeds"), SearchError);
  c = small_search(0);
  c.flops_limit = -1.0;
  CHECK_THROWS_WITH_AS(run_search(table(), c, SearchMode::kRandom), doctest::Contains("excludes every"), SearchError);
  c = small_search(0);
  c.tournament = 9;
  CHECK_THROWS_AS(c.validate(), SearchError);
  c = small_search(0);
  c.lf_samples = 601;
  CHECK_THROWS_AS(run_search(table(), c, SearchMode::kDynamic), SearchError);
  CHECK(parse_search_mode("vanilla-predictor") == SearchMode::kVanillaPredictor);
  CHECK_THROWS(parse_search_mode("bayes"));
}

TEST_CASE("search config survives JSON") {
  SearchConfig c = small_search(4);
  c.flops_limit = 2.5;
  const SearchConfig back = search_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK(back.total_budget() == 20);
}

TEST_CASE("mutation changes one token and covers every edit uniformly") {
  const auto& t = full_table();
  REQUIRE(t.size() == 256);
  const MutationSpace space(t, std::nullopt);
  Rng rng(11);
  const std::size_t start = 37;
  const auto& from = t.record(start).tokens;
  CHECK(space.neighbors(start).size() == 12);
  std::map<std::pair<std::size_t, int>, int> counts;
  const int draws = 24000;
  for (int i = 0; i < draws; ++i) {
    const auto& to = t.record(space.mutate(start, rng)).tokens;
    std::size_t changed = 0;
    std::pair<std::size_t, int> edit;
    for (std::size_t p = 0; p < to.size(); ++p) {
      if (to[p] != from[p]) {
        ++changed;
        edit = {p, to[p]};
      }
    }
    REQUIRE(changed == 1);
    ++counts[edit];
  }
  REQUIRE(counts.size() == 12);
  const double expected = draws / 12.0;
  const double sigma = std::sqrt(draws * (1.0 / 12.0) * (11.0 / 12.0));
  for (const auto& [edit, n] : counts) CHECK(std::abs(n - expected) < 3.0 * sigma);
}

TEST_CASE("mutation respects the constraint and falls back when isolated") {
  const auto& t = full_table();
  const MutationSpace limited(t, median_flops(t));
  Rng rng(3);
  for (std::size_t i = 0; i < t.size(); ++i) {
    for (int k = 0; k < 5; ++k) CHECK(limited.eligible(limited.mutate(i, rng)));
  }
  const MutationSpace sparse(table(), std::nullopt);  // 600 of 15625 sequences
  std::size_t isolated = table().size();
  for (std::size_t i = 0; i < table().size() && isolated == table().size(); ++i) {
    if (sparse.neighbors(i).empty()) isolated = i;
  }
  REQUIRE(isolated < table().size());
  CHECK(sparse.mutate(isolated, rng) < table().size());
}

TEST_CASE("tournament contract") {
  const auto& t = full_table();
  const MutationSpace space(t, std::nullopt);
  const std::deque<std::size_t> population{4, 90, 17, 200, 31};
  const ScoreFn score = [](std::size_t i) { return i == 200 ? 1.0 : 0.0; };
  std::set<std::size_t> parent_neighbors;
  for (std::size_t n : space.neighbors(200)) parent_neighbors.insert(n);
  Rng rng(5);
  for (int k = 0; k < 50; ++k) {
    CHECK(parent_neighbors.contains(tournament_step(population, score, 5, space, rng)));
  }
  Rng a(8), b(8);
  CHECK(tournament_step(population, score, 3, space, a) == tournament_step(population, score, 3, space, b));
  CHECK_THROWS_AS(tournament_step(population, score, 6, space, rng), SearchError);
}

TEST_CASE("a constant score turns evolution into a uniform walk") {
  // Independent walks from uniform populations; the last child of each is
  // one sample, so the 3 sigma bound needs no autocorrelation correction.
  const auto& t = full_table();
  const MutationSpace space(t, std::nullopt);
  const ScoreFn flat = [](std::size_t) { return 0.5; };
  Rng rng(21);
  std::uniform_int_distribution<std::size_t> any(0, t.size() - 1);
  const int walks = 4000;
  std::vector<std::array<int, 4>> freq(4, std::array<int, 4>{});
  for (int w = 0; w < walks; ++w) {
    std::deque<std::size_t> population;
    for (int i = 0; i < 20; ++i) population.push_back(any(rng));
    std::size_t child = 0;
    for (int step = 0; step < 30; ++step) {
      child = tournament_step(population, flat, 5, space, rng);
      population.push_back(child);
      population.pop_front();
    }
    const auto& tokens = t.record(child).tokens;
    for (std::size_t p = 0; p < 4; ++p) ++freq[p][static_cast<std::size_t>(tokens[p])];
  }
  const double expected = walks / 4.0;
  const double sigma = std::sqrt(walks * 0.25 * 0.75);
  for (const auto& position : freq) {
    for (int n : position) CHECK(std::abs(n - expected) < 3.0 * sigma);
  }
}

TEST_CASE("top-k selection") {
  const auto& t = table();
  std::vector<double> gt;
  for (const auto& r : t.records()) gt.push_back(*r.gt_accuracy);
  const auto all = topk_select(t, gt, t.size());
  REQUIRE(all.size() == t.size());
  for (std::size_t i = 1; i < all.size(); ++i) {
    CHECK(*t.record(*t.index_of(all[i - 1])).gt_accuracy >= *t.record(*t.index_of(all[i])).gt_accuracy);
  }
  std::vector<std::size_t> idx(t.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](auto x, auto y) { return gt[x] > gt[y]; });
  const auto top = topk_select(t, gt, 10);
  for (std::size_t i = 0; i < 10; ++i) CHECK(top[i] == t.record(idx[i]).id);
  CHECK_THROWS_AS(topk_select(t, gt, t.size() + 1), SearchError);
}
