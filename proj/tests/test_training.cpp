#include "dynens/diagnostics.hpp"
#include "dynens/kendall.hpp"
#include "dynens/synthetic.hpp"
#include "dynens/training.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace dynens;

namespace {

TrainConfig tiny(TrainMode mode, std::uint64_t seed = 0) {
  TrainConfig c;
  c.mode = mode;
  c.seed = seed;
  c.embed_dim = 6;
  c.hidden_dim = 6;
  c.head_hidden = 12;
  c.epochs_pretrain = 2;
  c.epochs_finetune = 3;
  c.batch_size = 32;
  c.gt_fraction = 0.1;
  return c;
}

const BenchmarkTable& small_table() {
  static const BenchmarkTable t = [] {
    SyntheticConfig c;
    c.size = 200;
    c.seed = 3;
    return gen_synthetic(c);
  }();
  return t;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("mode names round-trip") {
  for (TrainMode m : {TrainMode::kDynamic, TrainMode::kVanilla, TrainMode::kSingleLf, TrainMode::kUniform,
                      TrainMode::kSimpleAvg, TrainMode::kEqualWeight}) {
    CHECK(parse_mode(mode_name(m)) == m);
  }
  CHECK_THROWS(parse_mode("stacked"));
  CHECK(is_ensemble_mode(TrainMode::kUniform));
  CHECK_FALSE(is_ensemble_mode(TrainMode::kVanilla));
}

TEST_CASE("train config survives JSON and rejects bad values") {
  TrainConfig c = tiny(TrainMode::kSingleLf, 9);
  c.single_lf = "proxy_b";
  c.split_mode = SplitMode::kRandom;
  c.lf_fraction = 0.5;
  const TrainConfig back = train_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK(train_config_from_json(nlohmann::json{{"seed", 4}}, c).seed == 4);
  CHECK(train_config_from_json(nlohmann::json{{"seed", 4}}, c).single_lf == "proxy_b");

  CHECK_THROWS(tiny(TrainMode::kSingleLf).validate());
  TrainConfig bad = tiny(TrainMode::kDynamic);
  bad.gt_fraction = 0.0;
  CHECK_THROWS(bad.validate());
  bad = tiny(TrainMode::kDynamic);
  bad.batch_size = 1;
  CHECK_THROWS(bad.validate());
  CHECK(TrainConfig{}.effective_batch_size(4999) == 128);
  CHECK(TrainConfig{}.effective_batch_size(5000) == 512);
}

TEST_CASE("ranking fit drives the loss down on a learnable target") {
  const auto& t = small_table();
  SeqList seqs;
  std::vector<double> targets;
  for (std::size_t i : t.train_indices()) {
    seqs.push_back(&t.record(i).tokens);
    targets.push_back(t.record(i).lf_values.at("proxy_global"));
  }
  TrainConfig c = tiny(TrainMode::kSingleLf);
  c.single_lf = "proxy_global";
  c.epochs_pretrain = 30;
  std::vector<double> curve;
  const auto expert = pretrain_expert("proxy_global", seqs, targets, t.vocab_size(), c, t.size(), &curve);
  REQUIRE(curve.size() == 30);
  CHECK(curve.back() < 0.7 * curve.front());
  CHECK(kendall_tau(expert.predict(seqs), targets).kd > 0.3);
}

TEST_CASE("zero-epoch finetune is the uniform fusion of the experts") {
  const auto table = make_split(small_table(), 0.1);
  TrainConfig c = tiny(TrainMode::kDynamic);
  const PretrainResult pre = pretrain_experts(table, c);
  REQUIRE(pre.experts.size() == 5);
  c.epochs_finetune = 0;
  const auto model = finetune_ensemble(pre.experts, table, c);
  for (std::size_t i = 0; i < 20; ++i) {
    const auto& tokens = table.record(i).tokens;
    double sum = 0.0;
    for (const auto& e : pre.experts) sum += e.predict_one(tokens);
    CHECK((model.gate_weights(tokens).array() - 0.2).abs().maxCoeff() < 1e-12);
    CHECK(model.ensemble_score(tokens) == doctest::Approx(sigmoid(sum / 5.0)).epsilon(1e-12));
  }
}

TEST_CASE("every mode trains and the same seed reproduces the run") {
  for (TrainMode m : {TrainMode::kDynamic, TrainMode::kVanilla, TrainMode::kSingleLf, TrainMode::kUniform,
                      TrainMode::kSimpleAvg, TrainMode::kEqualWeight}) {
    TrainConfig c = tiny(m, 2);
    c.single_lf = "proxy_a";
    const TrainRun a = run_training(small_table(), c);
    const TrainRun b = run_training(small_table(), c);
    INFO(mode_name(m));
    CHECK(a.report.at("validation_kd").get<double>() == b.report.at("validation_kd").get<double>());
    CHECK(a.report.at("mode") == mode_name(m));
    CHECK(a.report.at("finetune_count") == 16);
    CHECK(a.report.at("finetune_loss_curve").size() == 3);
  }
}

TEST_CASE("reused experts give the same model as fresh pretraining") {
  const auto table = make_split(small_table(), 0.1);
  const TrainConfig c = tiny(TrainMode::kDynamic, 5);
  const PretrainResult pre = pretrain_experts(table, c);
  const TrainResult fresh = train_model(table, c);
  const TrainResult reused = train_model(table, c, &pre.experts);
  CHECK(validation_kd(*fresh.model, table) == validation_kd(*reused.model, table));
}

TEST_CASE("training guards") {
  TrainConfig c = tiny(TrainMode::kDynamic);
  c.lf_fraction = 0.0;
  CHECK_THROWS_WITH_AS(run_training(small_table(), c), doctest::Contains("no low-fidelity data"),
                       std::invalid_argument);
  c = tiny(TrainMode::kSingleLf);
  c.single_lf = "proxy_missing";
  CHECK_THROWS_WITH_AS(run_training(small_table(), c), doctest::Contains("unknown LF column"),
                       std::invalid_argument);
  CHECK_THROWS(train_model(small_table(), tiny(TrainMode::kVanilla)));  // no finetune subset
}

TEST_CASE("uniform mode starts from exactly 1/N") {
  const auto table = make_split(small_table(), 0.1);
  TrainConfig c = tiny(TrainMode::kUniform);
  c.epochs_pretrain = 1;
  auto pre = pretrain_experts(table, c);
  c.epochs_finetune = 0;
  auto model = finetune_ensemble(pre.experts, table, c, Fusion::kUniform);
  CHECK(model.uniform_logits()[0].value.isZero());
  CHECK((model.gate_weights(table.record(0).tokens).array() == 0.2).all());
}

TEST_CASE("diagnostics on a fresh ensemble") {
  SyntheticConfig sc;
  sc.size = 10000;
  const auto table = make_split(gen_synthetic(sc), 0.01);
  REQUIRE(table.validation_indices().size() == 2000);
  TrainConfig c = tiny(TrainMode::kDynamic);
  Rng rng(1);
  std::vector<ExpertPredictor> experts;
  experts.emplace_back("proxy_a", c.encoder_config(5), c.head_hidden, rng);
  experts.emplace_back("proxy_noise", c.encoder_config(5), c.head_hidden, rng, HeadInit::kZero);
  const DynamicEnsemblePredictor model(std::move(experts), Fusion::kDynamic, c.encoder_config(5), c.head_hidden, rng);

  const DiagnosticsReport r = diagnostics(model, table);
  CHECK(r.count == 2000);
  CHECK(std::abs(r.ensemble_kd) <= 0.2);
  REQUIRE(r.experts.size() == 2);
  CHECK(r.experts[1].weighted_score_std == 0.0);
  CHECK(r.experts[0].weighted_score_std > 0.0);
  CHECK(r.experts[0].mean_gate_weight == doctest::Approx(0.5));
  CHECK(r.gate_traces.size() == 2000);

  SeqList archs;
  for (std::size_t i = 0; i < 50; ++i) archs.push_back(&table.record(i).tokens);
  SeqList doubled = archs;
  doubled.insert(doubled.end(), archs.begin(), archs.end());
  const Eigen::VectorXd s1 = weighted_score_std(model, archs);
  CHECK((weighted_score_std(model, doubled) - s1).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS(weighted_score_std(model, SeqList{archs[0]}));

  std::ostringstream csv, trace;
  write_expert_csv(csv, r);
  write_gate_trace_csv(trace, r);
  CHECK(csv.str().rfind("lf_name,kd_weighted_vs_gt", 0) == 0);
  const std::string lines = trace.str();
  CHECK(std::count(lines.begin(), lines.end(), '\n') == 2001);
  CHECK(to_json(r).at("experts").size() == 2);
}
