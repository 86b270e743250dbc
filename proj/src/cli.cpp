#include "dynens/cli.hpp"

#include "dynens/benchmark.hpp"
#include "dynens/diagnostics.hpp"
#include "dynens/ensemble.hpp"
#include "dynens/report.hpp"
#include "dynens/search.hpp"
#include "dynens/synthetic.hpp"
#include "dynens/training.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <stdexcept>

namespace dynens {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class CommandError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

fs::path output_dir(const std::string& flag) {
  if (const char* env = std::getenv(kOutputDirEnv); env && *env) return env;
  return flag.empty() ? fs::path(".") : fs::path(flag);
}

// Explicit paths are used as given; omitted ones land in the output dir.
fs::path resolve(const std::string& given, const fs::path& dir, const char* fallback) {
  return given.empty() ? dir / fallback : fs::path(given);
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

std::ofstream open_out(const fs::path& p) {
  ensure_parent(p);
  std::ofstream f(p);
  if (!f) throw CommandError("cannot write " + p.string());
  return f;
}

json read_json(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw CommandError("cannot read " + p.string());
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw CommandError(p.string() + ": " + e.what());
  }
}

void write_json(const fs::path& p, const json& j) { open_out(p) << j.dump(2) << "\n"; }

void write_echo(const fs::path& dir, const std::string& command, json j) {
  j["command"] = command;
  write_json(dir / (command + ".config.json"), j);
}

// Flags given on the command line win; everything else may come from the
// --config file, which uses the same layout as the echoed config.
struct Overlay {
  const json* file = nullptr;

  bool from_file(const CLI::Option* opt, const char* key) const {
    return opt->count() == 0 && file && file->contains(key);
  }
  template <class T>
  void apply(const CLI::Option* opt, const char* key, T& target) const {
    if (from_file(opt, key)) target = file->at(key).get<T>();
  }
};

struct TrainArgs {
  std::string data, mode = "dynamic", single_lf, split_mode = "index", checkpoint, report, out_dir, config;
  double gt_fraction = 0.01, lf_fraction = 1.0, lr = 1e-3, margin = kDefaultMargin, dropout = 0.1;
  std::uint64_t seed = 0;
  int epochs_pretrain = 200, epochs_finetune = 200, batch_size = 0;
  std::map<std::string, CLI::Option*> opts;
};

void add_train_flags(CLI::App* sub, TrainArgs& a) {
  auto& o = a.opts;
  o["data"] = sub->add_option("--data", a.data, "benchmark JSONL file");
  o["mode"] = sub->add_option("--mode", a.mode,
                              "dynamic|vanilla|single_lf|uniform|simple_avg|equal_weight");
  o["single_lf"] = sub->add_option("--single-lf", a.single_lf, "LF column for single_lf");
  o["gt_fraction"] = sub->add_option("--gt-fraction", a.gt_fraction, "share of train records with gt");
  o["lf_fraction"] = sub->add_option("--lf-fraction", a.lf_fraction, "share of train records with LF");
  o["split_mode"] = sub->add_option("--split-mode", a.split_mode, "index|random");
  o["seed"] = sub->add_option("--seed", a.seed);
  o["epochs_pretrain"] = sub->add_option("--epochs-pretrain", a.epochs_pretrain);
  o["epochs_finetune"] = sub->add_option("--epochs-finetune", a.epochs_finetune);
  o["batch_size"] = sub->add_option("--batch-size", a.batch_size, "0 picks by table size");
  o["learning_rate"] = sub->add_option("--lr", a.lr);
  o["margin"] = sub->add_option("--margin", a.margin);
  o["dropout"] = sub->add_option("--dropout", a.dropout);
}

TrainConfig train_config(const TrainArgs& a, const json* file) {
  TrainConfig c;
  if (file && file->contains("train")) c = train_config_from_json(file->at("train"));
  auto given = [&](const char* k) { return a.opts.at(k)->count() > 0; };
  if (given("mode") || !file) c.mode = parse_mode(a.mode);
  if (given("single_lf") || !file) c.single_lf = a.single_lf;
  if (given("gt_fraction") || !file) c.gt_fraction = a.gt_fraction;
  if (given("lf_fraction") || !file) c.lf_fraction = a.lf_fraction;
  if (given("split_mode") || !file) {
    if (a.split_mode == "index") c.split_mode = SplitMode::kByIndex;
    else if (a.split_mode == "random") c.split_mode = SplitMode::kRandom;
    else throw CommandError("unknown split mode '" + a.split_mode + "'");
  }
  if (given("seed") || !file) c.seed = a.seed;
  if (given("epochs_pretrain") || !file) c.epochs_pretrain = a.epochs_pretrain;
  if (given("epochs_finetune") || !file) c.epochs_finetune = a.epochs_finetune;
  if (given("batch_size") || !file) c.batch_size = a.batch_size;
  if (given("learning_rate") || !file) c.learning_rate = a.lr;
  if (given("margin") || !file) c.margin = a.margin;
  if (given("dropout") || !file) c.dropout = a.dropout;
  c.validate();
  return c;
}

int cmd_gen(const std::string& out_path, std::uint64_t seed, int size, int seq_len, int vocab,
            const std::string& out_dir, std::ostream& out) {
  SyntheticConfig c;
  c.seed = seed;
  c.size = size;
  c.seq_len = seq_len;
  c.vocab_size = vocab;
  const fs::path dir = output_dir(out_dir);
  const fs::path path = resolve(out_path, dir, "synthetic.jsonl");
  const BenchmarkTable table = gen_synthetic(c);
  ensure_parent(path);
  save_benchmark(path, table);
  write_echo(dir, "gen-synthetic",
             {{"out", path.string()}, {"seed", seed}, {"size", size}, {"seq_len", seq_len},
              {"vocab_size", vocab}, {"train_share", c.train_share}});
  out << "wrote " << table.size() << " records to " << path.string() << "\n";
  return 0;
}

int cmd_train(TrainArgs& a, std::ostream& out) {
  json file;
  const bool has_file = !a.config.empty();
  if (has_file) file = read_json(a.config);
  Overlay ov{has_file ? &file : nullptr};
  ov.apply(a.opts.at("data"), "data", a.data);
  ov.apply(a.opts.at("checkpoint"), "checkpoint", a.checkpoint);
  ov.apply(a.opts.at("report"), "report", a.report);
  if (a.data.empty()) throw CommandError("--data is required");

  const TrainConfig config = train_config(a, has_file ? &file : nullptr);
  const fs::path dir = output_dir(a.out_dir);
  const fs::path ckpt = resolve(a.checkpoint, dir, "model.json");
  const fs::path report = resolve(a.report, dir, "report.json");

  const BenchmarkTable table = load_benchmark(a.data);
  TrainRun run = run_training(table, config);
  ensure_parent(ckpt);
  save_model(ckpt, *run.result.model);
  write_json(report, run.report);
  write_echo(dir, "train",
             {{"data", a.data}, {"checkpoint", ckpt.string()}, {"report", report.string()},
              {"train", to_json(config)}});
  out << "validation_kd " << run.report.at("validation_kd").get<double>() << "\n";
  return 0;
}

int cmd_analyze(const std::string& checkpoint, const std::string& data, double gt_fraction,
                const std::string& report, const std::string& expert_csv, const std::string& trace_csv,
                const std::string& out_dir, std::ostream& out) {
  const auto model = load_model(checkpoint);
  const auto* ensemble = dynamic_cast<const DynamicEnsemblePredictor*>(model.get());
  if (!ensemble) throw CommandError(checkpoint + " holds a single predictor, not an ensemble");
  const BenchmarkTable table = make_split(load_benchmark(data), gt_fraction);
  const DiagnosticsReport r = diagnostics(*ensemble, table);

  const fs::path dir = output_dir(out_dir);
  const fs::path report_path = resolve(report, dir, "analysis.json");
  const fs::path expert_path = resolve(expert_csv, dir, "experts.csv");
  const fs::path trace_path = resolve(trace_csv, dir, "gate_trace.csv");
  write_json(report_path, to_json(r));
  {
    auto f = open_out(expert_path);
    write_expert_csv(f, r);
  }
  {
    auto f = open_out(trace_path);
    write_gate_trace_csv(f, r);
  }
  write_echo(dir, "analyze",
             {{"checkpoint", checkpoint}, {"data", data}, {"gt_fraction", gt_fraction},
              {"out", report_path.string()}, {"expert_csv", expert_path.string()},
              {"gate_trace_csv", trace_path.string()}});
  out << "ensemble_kd " << r.ensemble_kd << " over " << r.count << " architectures\n";
  return 0;
}

struct SearchArgs {
  std::string data, mode = "dynamic", config, out, out_dir;
  std::uint64_t seed = 0;
  double flops_limit = 0.0;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* flops_opt = nullptr;
  CLI::Option* data_opt = nullptr;
  CLI::Option* mode_opt = nullptr;
  CLI::Option* out_opt = nullptr;
};

int cmd_search(SearchArgs& a, std::ostream& out) {
  json file;
  const bool has_file = !a.config.empty();
  if (has_file) file = read_json(a.config);
  Overlay ov{has_file ? &file : nullptr};
  ov.apply(a.data_opt, "data", a.data);
  ov.apply(a.mode_opt, "mode", a.mode);
  ov.apply(a.out_opt, "out", a.out);
  if (a.data.empty()) throw CommandError("--data is required");

  SearchConfig c;
  if (has_file) c = search_config_from_json(file.contains("search") ? file.at("search") : file);
  if (a.seed_opt->count() > 0) c.seed = a.seed;
  if (a.flops_opt->count() > 0) c.flops_limit = a.flops_limit;
  c.train.seed = c.seed;
  c.validate();
  const SearchMode mode = parse_search_mode(a.mode);

  const fs::path dir = output_dir(a.out_dir);
  const fs::path history_path = resolve(a.out, dir, "history.csv");
  const BenchmarkTable table = load_benchmark(a.data);
  const SearchHistory h = run_search(table, c, mode);
  {
    auto f = open_out(history_path);
    write_history_csv(f, h);
  }
  write_echo(dir, "search",
             {{"data", a.data}, {"mode", a.mode}, {"out", history_path.string()}, {"search", to_json(c)}});
  out << "best " << h.best().arch_id << " gt " << h.best_gt() << " after " << h.distinct_queries()
      << " queries\n";
  return 0;
}

int cmd_topk(const std::string& checkpoint, const std::string& data, int k, CLI::Option* flops_opt,
             double flops_limit, const std::string& out_path, const std::string& out_dir,
             std::ostream& out) {
  const auto model = load_model(checkpoint);
  const BenchmarkTable table = load_benchmark(data);
  std::optional<double> limit;
  if (flops_opt->count() > 0) limit = flops_limit;
  if (k < 1) throw CommandError("--k must be at least 1");
  const auto ids = topk_select(*model, table, static_cast<std::size_t>(k), limit);

  json result = json::array();
  std::optional<std::string> best;
  double best_gt = 0.0;
  for (const auto& id : ids) {
    const auto& rec = table.records()[*table.index_of(id)];
    json row = {{"arch_id", id}, {"gt", nullptr}, {"flops", nullptr}};
    if (rec.gt_accuracy) {
      row["gt"] = *rec.gt_accuracy;
      if (!best || *rec.gt_accuracy > best_gt) {
        best = id;
        best_gt = *rec.gt_accuracy;
      }
    }
    if (rec.flops) row["flops"] = *rec.flops;
    result.push_back(row);
  }
  json doc = {{"topk", result}, {"best_arch_id", nullptr}, {"best_gt", nullptr}};
  if (best) {
    doc["best_arch_id"] = *best;
    doc["best_gt"] = best_gt;
  }

  const fs::path dir = output_dir(out_dir);
  const fs::path path = resolve(out_path, dir, "topk.json");
  write_json(path, doc);
  json echo = {{"checkpoint", checkpoint}, {"data", data}, {"k", k}, {"out", path.string()},
               {"flops_limit", nullptr}};
  if (limit) echo["flops_limit"] = *limit;
  write_echo(dir, "topk", echo);
  for (const auto& id : ids) out << id << "\n";
  return 0;
}

int cmd_report(const std::vector<std::string>& runs, const std::string& format,
               const std::string& out_path, std::ostream& out, std::ostream& err) {
  std::vector<fs::path> paths(runs.begin(), runs.end());
  const auto rows = aggregate(collect_runs(paths, err));
  if (rows.empty()) throw CommandError("no readable runs");
  auto emit = [&](std::ostream& s) {
    if (format == "csv") write_report_csv(s, rows);
    else write_report_markdown(s, rows);
  };
  if (out_path.empty()) {
    emit(out);
  } else {
    auto f = open_out(out_path);
    emit(f);
  }
  return 0;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"dynamic ensemble performance predictor", "dynens"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-synthetic", "write a synthetic benchmark");
  std::string gen_out, gen_dir;
  std::uint64_t gen_seed = 0;
  int gen_size = 2000, gen_len = 6, gen_vocab = 5;
  gen->add_option("--out", gen_out, "output JSONL path");
  gen->add_option("--out-dir", gen_dir);
  gen->add_option("--seed", gen_seed);
  gen->add_option("--size", gen_size);
  gen->add_option("--seq-len", gen_len);
  gen->add_option("--vocab-size", gen_vocab);

  auto* train = app.add_subcommand("train", "train one predictor");
  TrainArgs ta;
  add_train_flags(train, ta);
  ta.opts["checkpoint"] = train->add_option("--out-checkpoint", ta.checkpoint);
  ta.opts["report"] = train->add_option("--report", ta.report);
  train->add_option("--out-dir", ta.out_dir);
  train->add_option("--config", ta.config, "JSON config in echo format")->check(CLI::ExistingFile);

  auto* analyze = app.add_subcommand("analyze", "per-expert diagnostics of a trained ensemble");
  std::string an_ckpt, an_data, an_out, an_experts, an_trace, an_dir;
  double an_fraction = 0.01;
  analyze->add_option("--checkpoint", an_ckpt)->required()->check(CLI::ExistingFile);
  analyze->add_option("--data", an_data)->required()->check(CLI::ExistingFile);
  analyze->add_option("--gt-fraction", an_fraction);
  analyze->add_option("--out", an_out, "report JSON");
  analyze->add_option("--expert-csv", an_experts);
  analyze->add_option("--gate-trace", an_trace);
  analyze->add_option("--out-dir", an_dir);

  auto* search = app.add_subcommand("search", "run a query-budgeted architecture search");
  SearchArgs sa;
  sa.data_opt = search->add_option("--data", sa.data);
  sa.mode_opt = search->add_option("--mode", sa.mode, "dynamic|vanilla-predictor|random|evolution");
  search->add_option("--config", sa.config, "search JSON")->check(CLI::ExistingFile);
  sa.seed_opt = search->add_option("--seed", sa.seed);
  sa.flops_opt = search->add_option("--flops-limit", sa.flops_limit);
  sa.out_opt = search->add_option("--out", sa.out, "history CSV");
  search->add_option("--out-dir", sa.out_dir);

  auto* topk = app.add_subcommand("topk", "rank a table with a trained predictor");
  std::string tk_ckpt, tk_data, tk_out, tk_dir;
  int tk_k = 10;
  double tk_flops = 0.0;
  topk->add_option("--checkpoint", tk_ckpt)->required()->check(CLI::ExistingFile);
  topk->add_option("--data", tk_data)->required()->check(CLI::ExistingFile);
  topk->add_option("--k", tk_k);
  auto* tk_flops_opt = topk->add_option("--flops-limit", tk_flops);
  topk->add_option("--out", tk_out);
  topk->add_option("--out-dir", tk_dir);

  auto* report = app.add_subcommand("report", "aggregate run reports");
  std::vector<std::string> rp_runs;
  std::string rp_format = "markdown", rp_out;
  report->add_option("runs", rp_runs, "run directories or report files")->required();
  report->add_option("--format", rp_format)->check(CLI::IsMember({"markdown", "csv"}));
  report->add_option("--out", rp_out);

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen(gen_out, gen_seed, gen_size, gen_len, gen_vocab, gen_dir, out);
    if (train->parsed()) return cmd_train(ta, out);
    if (analyze->parsed())
      return cmd_analyze(an_ckpt, an_data, an_fraction, an_out, an_experts, an_trace, an_dir, out);
    if (search->parsed()) return cmd_search(sa, out);
    if (topk->parsed()) return cmd_topk(tk_ckpt, tk_data, tk_k, tk_flops_opt, tk_flops, tk_out, tk_dir, out);
    if (report->parsed()) return cmd_report(rp_runs, rp_format, rp_out, out, err);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return dispatch(args, out, err);
}

}  // namespace dynens
