#include "dynens/benchmark.hpp"
#include "dynens/cli.hpp"
#include "dynens/diagnostics.hpp"
#include "dynens/ensemble.hpp"
#include "dynens/kendall.hpp"
#include "dynens/params.hpp"
#include "dynens/ranking_loss.hpp"
#include "dynens/search.hpp"
#include "dynens/synthetic.hpp"
#include "dynens/training.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

namespace py = pybind11;
using namespace dynens;
using nlohmann::json;

namespace {

// JSON crosses the boundary as text; the Python layer parses it.
json parse_config(const std::string& text) { return text.empty() ? json::object() : json::parse(text); }

struct Model {
  std::shared_ptr<RankModel> impl;

  std::vector<double> predict(const std::vector<std::vector<int>>& seqs) const {
    SeqList ptrs;
    for (const auto& s : seqs) ptrs.push_back(&s);
    return impl->predict(ptrs);
  }
  const DynamicEnsemblePredictor* ensemble() const {
    return dynamic_cast<const DynamicEnsemblePredictor*>(impl.get());
  }
};

SeqList all_tokens(const BenchmarkTable& t) {
  SeqList seqs;
  for (const auto& r : t.records()) seqs.push_back(&r.tokens);
  return seqs;
}

}  // namespace

PYBIND11_MODULE(_dynens, m) {
  m.doc() = "Dynamic ensemble performance predictor";

  py::register_exception<BenchmarkError>(m, "BenchmarkError", PyExc_ValueError);
  py::register_exception<SearchError>(m, "SearchError", PyExc_ValueError);
  py::register_exception<NonFiniteGradient>(m, "NonFiniteGradient", PyExc_FloatingPointError);

  py::class_<BenchmarkTable>(m, "Table")
      .def_property_readonly("seq_len", &BenchmarkTable::seq_len)
      .def_property_readonly("vocab_size", &BenchmarkTable::vocab_size)
      .def_property_readonly("lf_names", &BenchmarkTable::lf_names)
      .def("__len__", &BenchmarkTable::size)
      .def("__eq__", [](const BenchmarkTable& a, const BenchmarkTable& b) { return a == b; })
      .def_property_readonly("ids", [](const BenchmarkTable& t) {
        std::vector<std::string> ids;
        for (const auto& r : t.records()) ids.push_back(r.id);
        return ids;
      })
      .def_property_readonly("tokens", [](const BenchmarkTable& t) {
        std::vector<std::vector<int>> out;
        for (const auto& r : t.records()) out.push_back(r.tokens);
        return out;
      })
      .def_property_readonly("gt", [](const BenchmarkTable& t) {
        std::vector<std::optional<double>> out;
        for (const auto& r : t.records()) out.push_back(r.gt_accuracy);
        return out;
      })
      .def_property_readonly("flops", [](const BenchmarkTable& t) {
        std::vector<std::optional<double>> out;
        for (const auto& r : t.records()) out.push_back(r.flops);
        return out;
      })
      .def("lf", [](const BenchmarkTable& t, const std::string& name) {
        std::vector<std::optional<double>> out;
        for (const auto& r : t.records()) {
          auto it = r.lf_values.find(name);
          out.push_back(it == r.lf_values.end() ? std::nullopt : std::optional<double>(it->second));
        }
        return out;
      }, py::arg("name"))
      .def_property_readonly("train_indices", &BenchmarkTable::train_indices)
      .def_property_readonly("validation_indices", &BenchmarkTable::validation_indices)
      .def_property_readonly("finetune_indices", &BenchmarkTable::finetune_indices)
      .def("make_split", [](const BenchmarkTable& t, double fraction, const std::string& mode, std::uint64_t seed) {
        if (mode != "index" && mode != "random") throw py::value_error("split mode must be 'index' or 'random'");
        return make_split(t, fraction, mode == "index" ? SplitMode::kByIndex : SplitMode::kRandom, seed);
      }, py::arg("gt_fraction"), py::arg("mode") = "index", py::arg("seed") = 0)
      .def("save", [](const BenchmarkTable& t, const std::filesystem::path& p) { save_benchmark(p, t); },
           py::arg("path"))
      .def("to_jsonl", [](const BenchmarkTable& t) {
        std::ostringstream s;
        write_benchmark(s, t);
        return s.str();
      });

  m.def("load_table", &load_benchmark, py::arg("path"));
  m.def("table_from_jsonl", [](const std::string& text) {
    std::istringstream in(text);
    return read_benchmark(in, "<string>");
  }, py::arg("text"));

  m.def("gen_synthetic", [](std::uint64_t seed, int size, int seq_len, int vocab_size) {
    SyntheticConfig c;
    c.seed = seed;
    c.size = size;
    c.seq_len = seq_len;
    c.vocab_size = vocab_size;
    return gen_synthetic(c);
  }, py::arg("seed") = 0, py::arg("size") = 2000, py::arg("seq_len") = 6, py::arg("vocab_size") = 5);

  m.def("kendall_tau", [](const std::vector<double>& pred, const std::vector<double>& gt, const std::string& variant) {
    if (variant != "a" && variant != "b") throw py::value_error("variant must be 'a' or 'b'");
    return kendall_tau(pred, gt, variant == "a" ? TauVariant::kA : TauVariant::kB).kd;
  }, py::arg("pred"), py::arg("gt"), py::arg("variant") = "a");

  m.def("hinge_ranking_loss", [](const std::vector<double>& s, const std::vector<double>& t, double margin) {
    return hinge_ranking_loss(s, t, margin);
  }, py::arg("scores"), py::arg("targets"), py::arg("margin") = kDefaultMargin);

  m.def("softmax", &softmax, py::arg("logits"));
  m.def("fuse", [](const Eigen::VectorXd& scores, const Eigen::VectorXd& logits) {
    const EnsembleOutput o = fuse(scores, logits);
    py::dict d;
    d["score"] = o.score;
    d["logit"] = o.logit;
    d["gate_weights"] = o.gate_weights;
    d["weighted"] = o.weighted;
    return d;
  }, py::arg("expert_scores"), py::arg("gate_logits"));

  py::class_<Model>(m, "Model")
      .def("predict", &Model::predict, py::arg("sequences"))
      .def("predict_table", [](const Model& self, const BenchmarkTable& t) { return self.impl->predict(all_tokens(t)); },
           py::arg("table"))
      .def("validation_kd", [](const Model& self, const BenchmarkTable& t) { return validation_kd(*self.impl, t); },
           py::arg("table"))
      .def("save", [](const Model& self, const std::filesystem::path& p) { save_model(p, *self.impl); }, py::arg("path"))
      .def_property_readonly("is_ensemble", [](const Model& self) { return self.ensemble() != nullptr; })
      .def_property_readonly("lf_names", [](const Model& self) {
        const auto* e = self.ensemble();
        return e ? e->lf_names() : std::vector<std::string>{};
      })
      .def("gate_weights", [](const Model& self, const std::vector<int>& tokens) {
        const auto* e = self.ensemble();
        if (!e) throw py::type_error("gate weights need an ensemble model");
        return e->gate_weights(tokens);
      }, py::arg("tokens"))
      .def("diagnostics", [](const Model& self, const BenchmarkTable& t) {
        const auto* e = self.ensemble();
        if (!e) throw py::type_error("diagnostics need an ensemble model");
        return to_json(diagnostics(*e, t)).dump();
      }, py::arg("table"));

  m.def("load_model", [](const std::filesystem::path& p) { return Model{std::shared_ptr<RankModel>(load_model(p))}; },
        py::arg("path"));

  m.def("_train", [](const BenchmarkTable& t, const std::string& config) {
    const TrainConfig c = train_config_from_json(parse_config(config));
    TrainRun run;
    {
      py::gil_scoped_release release;
      run = run_training(t, c);
    }
    return py::make_tuple(Model{std::shared_ptr<RankModel>(std::move(run.result.model))}, run.report.dump());
  }, py::arg("table"), py::arg("config"));

  m.def("_run_search", [](const BenchmarkTable& t, const std::string& mode, const std::string& config) {
    const SearchConfig c = search_config_from_json(parse_config(config));
    const SearchMode sm = parse_search_mode(mode);
    SearchHistory h;
    {
      py::gil_scoped_release release;
      h = run_search(t, c, sm);
    }
    py::list out;
    for (const auto& q : h.queries) {
      py::dict d;
      d["stage"] = q.stage;
      d["arch_id"] = q.arch_id;
      d["predicted"] = q.predicted;
      d["gt"] = q.gt;
      d["best_so_far"] = q.best_so_far;
      out.append(d);
    }
    return out;
  }, py::arg("table"), py::arg("mode"), py::arg("config"));

  m.def("topk", [](const Model& model, const BenchmarkTable& t, std::size_t k, std::optional<double> flops_limit) {
    return topk_select(*model.impl, t, k, flops_limit);
  }, py::arg("model"), py::arg("table"), py::arg("k"), py::arg("flops_limit") = std::nullopt);

  m.def("cli", [](const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = dispatch(args, out, err);
    return py::make_tuple(code, out.str(), err.str());
  }, py::arg("args"));
}
