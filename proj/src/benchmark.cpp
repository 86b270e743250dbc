#include "dynens/benchmark.hpp"

#include "dynens/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace dynens {

using nlohmann::json;

const char* split_name(Split s) { return s == Split::kTrain ? "train" : "validation"; }

BenchmarkTable::BenchmarkTable(int seq_len, int vocab_size, std::vector<std::string> lf_names,
                               std::vector<ArchitectureRecord> records, std::vector<Split> splits)
    : seq_len_(seq_len),
      vocab_size_(vocab_size),
      lf_names_(std::move(lf_names)),
      records_(std::move(records)),
      splits_(std::move(splits)),
      lf_visible_(records_.size(), true) {
  validate();
  for (std::size_t i = 0; i < records_.size(); ++i) {
    by_id_.emplace(records_[i].id, i);
    by_tokens_.emplace(records_[i].tokens, i);
  }
}

void BenchmarkTable::validate() const {
  if (seq_len_ < 1) throw BenchmarkError("seq_len must be positive");
  if (vocab_size_ < 1) throw BenchmarkError("vocab_size must be positive");
  if (lf_names_.empty()) throw BenchmarkError("lf_names must not be empty");
  if (splits_.size() != records_.size()) throw BenchmarkError("split count differs from record count");
  std::unordered_map<std::string, std::size_t> seen;
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const ArchitectureRecord& r = records_[i];
    const std::string where = "record " + std::to_string(i) + " (" + r.id + ")";
    if (!seen.emplace(r.id, i).second) throw BenchmarkError("duplicate id in " + where);
    if (static_cast<int>(r.tokens.size()) != seq_len_) {
      throw BenchmarkError(where + ": expected " + std::to_string(seq_len_) + " tokens, got " +
                           std::to_string(r.tokens.size()));
    }
    for (int t : r.tokens) {
      if (t < 0 || t >= vocab_size_) {
        throw BenchmarkError(where + ": token " + std::to_string(t) + " outside vocabulary of size " +
                             std::to_string(vocab_size_));
      }
    }
    if (r.gt_accuracy && (*r.gt_accuracy < 0.0 || *r.gt_accuracy > 1.0 ||
                          !std::isfinite(*r.gt_accuracy))) {
      throw BenchmarkError(where + ": gt accuracy outside [0,1]");
    }
    if (!r.lf_values.empty()) {
      if (r.lf_values.size() != lf_names_.size()) {
        throw BenchmarkError(where + ": low-fidelity columns differ from header lf_names");
      }
      for (const auto& name : lf_names_) {
        if (!r.lf_values.contains(name)) {
          throw BenchmarkError(where + ": missing low-fidelity column " + name);
        }
      }
    }
    if (r.flops && !(*r.flops >= 0.0)) throw BenchmarkError(where + ": flops must be >= 0");
  }
}

std::vector<std::size_t> BenchmarkTable::train_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < splits_.size(); ++i) {
    if (splits_[i] == Split::kTrain) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> BenchmarkTable::validation_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < splits_.size(); ++i) {
    if (splits_[i] == Split::kValidation) out.push_back(i);
  }
  return out;
}

std::optional<std::size_t> BenchmarkTable::index_of(const std::string& id) const {
  if (auto it = by_id_.find(id); it != by_id_.end()) return it->second;
  return std::nullopt;
}

std::optional<std::size_t> BenchmarkTable::find_tokens(const std::vector<int>& tokens) const {
  if (auto it = by_tokens_.find(tokens); it != by_tokens_.end()) return it->second;
  return std::nullopt;
}

void BenchmarkTable::require_gt(const std::vector<std::size_t>& indices, const char* context) const {
  for (std::size_t i : indices) {
    if (!records_.at(i).gt_accuracy) {
      throw BenchmarkError(std::string(context) + ": record " + records_[i].id +
                           " has no ground-truth accuracy");
    }
  }
}

bool operator==(const BenchmarkTable& a, const BenchmarkTable& b) {
  return a.seq_len_ == b.seq_len_ && a.vocab_size_ == b.vocab_size_ &&
         a.lf_names_ == b.lf_names_ && a.records_ == b.records_ && a.splits_ == b.splits_;
}

BenchmarkTable make_split(const BenchmarkTable& table, double gt_fraction, SplitMode mode,
                          std::uint64_t seed) {
  if (!(gt_fraction > 0.0 && gt_fraction <= 1.0)) {
    throw BenchmarkError("gt fraction must lie in (0, 1], got " + std::to_string(gt_fraction));
  }
  std::vector<std::size_t> train = table.train_indices();
  if (train.empty()) throw BenchmarkError("table has no training records");
  // Guard against 0.29 * 100 = 28.999... rounding up past the intended count.
  const double exact = gt_fraction * static_cast<double>(train.size());
  auto count = static_cast<std::size_t>(std::ceil(exact - 1e-9));
  count = std::clamp<std::size_t>(count, 1, train.size());
  if (mode == SplitMode::kRandom) {
    Rng rng = make_rng(seed, "split");
    std::shuffle(train.begin(), train.end(), rng);
    train.resize(count);
    std::sort(train.begin(), train.end());
  } else {
    train.resize(count);
  }
  BenchmarkTable out = table;
  out.finetune_ = std::move(train);
  out.finetune_marked_ = true;
  return out;
}

BenchmarkTable restrict_lf(const BenchmarkTable& table, double lf_fraction) {
  if (!(lf_fraction >= 0.0 && lf_fraction <= 1.0)) {
    throw BenchmarkError("lf fraction must lie in [0, 1], got " + std::to_string(lf_fraction));
  }
  std::vector<std::size_t> carriers;
  for (std::size_t i : table.train_indices()) {
    if (!table.record(i).lf_values.empty()) carriers.push_back(i);
  }
  const auto keep = static_cast<std::size_t>(
      std::ceil(lf_fraction * static_cast<double>(carriers.size()) - 1e-9));
  BenchmarkTable out = table;
  std::fill(out.lf_visible_.begin(), out.lf_visible_.end(), false);
  for (std::size_t k = 0; k < keep && k < carriers.size(); ++k) out.lf_visible_[carriers[k]] = true;
  return out;
}

namespace {

[[noreturn]] void line_error(const std::string& source, std::size_t line, const std::string& what) {
  throw BenchmarkError(source + ":" + std::to_string(line) + ": " + what);
}

}  // namespace

BenchmarkTable read_benchmark(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t lineno = 0;
  json header;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      header = json::parse(line);
    } catch (const json::exception& e) {
      line_error(source, lineno, std::string("malformed header: ") + e.what());
    }
    break;
  }
  if (header.is_null()) throw BenchmarkError(source + ": empty benchmark file");
  int seq_len = 0;
  int vocab = 0;
  std::vector<std::string> lf_names;
  try {
    seq_len = header.at("seq_len").get<int>();
    vocab = header.at("vocab_size").get<int>();
    lf_names = header.at("lf_names").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    line_error(source, lineno, std::string("header: ") + e.what());
  }

  std::vector<ArchitectureRecord> records;
  std::vector<std::optional<Split>> tags;
  std::unordered_map<std::string, std::size_t> ids;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ArchitectureRecord r;
    std::optional<Split> tag;
    try {
      const json j = json::parse(line);
      for (const char* field : {"id", "tokens"}) {
        if (!j.contains(field)) line_error(source, lineno, std::string("missing field \"") + field + "\"");
      }
      r.id = j.at("id").get<std::string>();
      r.tokens = j.at("tokens").get<std::vector<int>>();
      if (j.contains("gt") && !j.at("gt").is_null()) r.gt_accuracy = j.at("gt").get<double>();
      if (j.contains("lf") && !j.at("lf").is_null()) {
        r.lf_values = j.at("lf").get<std::map<std::string, double>>();
      }
      if (j.contains("flops") && !j.at("flops").is_null()) r.flops = j.at("flops").get<double>();
      if (j.contains("split") && !j.at("split").is_null()) {
        const auto s = j.at("split").get<std::string>();
        if (s == "train") tag = Split::kTrain;
        else if (s == "validation") tag = Split::kValidation;
        else line_error(source, lineno, "unknown split \"" + s + "\"");
      }
    } catch (const json::exception& e) {
      line_error(source, lineno, e.what());
    }
    if (static_cast<int>(r.tokens.size()) != seq_len) {
      line_error(source, lineno, "expected " + std::to_string(seq_len) + " tokens, got " +
                                     std::to_string(r.tokens.size()));
    }
    for (int t : r.tokens) {
      if (t < 0 || t >= vocab) {
        line_error(source, lineno, "token " + std::to_string(t) + " out of range for vocab_size " +
                                       std::to_string(vocab));
      }
    }
    if (!ids.emplace(r.id, lineno).second) {
      line_error(source, lineno, "duplicate id \"" + r.id + "\"");
    }
    if (r.gt_accuracy && (*r.gt_accuracy < 0.0 || *r.gt_accuracy > 1.0)) {
      line_error(source, lineno, "gt accuracy outside [0,1]");
    }
    if (!r.lf_values.empty()) {
      const bool same = r.lf_values.size() == lf_names.size() &&
                        std::all_of(lf_names.begin(), lf_names.end(),
                                    [&](const std::string& n) { return r.lf_values.contains(n); });
      if (!same) line_error(source, lineno, "low-fidelity columns differ from header lf_names");
    }
    records.push_back(std::move(r));
    tags.push_back(tag);
  }

  const auto tagged = std::count_if(tags.begin(), tags.end(), [](const auto& t) { return t.has_value(); });
  std::vector<Split> splits(records.size(), Split::kTrain);
  if (tagged == 0) {
    const auto n_train = static_cast<std::size_t>(
        std::ceil(kDefaultTrainShare * static_cast<double>(records.size())));
    for (std::size_t i = n_train; i < records.size(); ++i) splits[i] = Split::kValidation;
  } else if (static_cast<std::size_t>(tagged) != records.size()) {
    throw BenchmarkError(source + ": split tags must be present on every record or on none");
  } else {
    for (std::size_t i = 0; i < tags.size(); ++i) splits[i] = *tags[i];
  }
  try {
    return BenchmarkTable(seq_len, vocab, std::move(lf_names), std::move(records), std::move(splits));
  } catch (const BenchmarkError& e) {
    throw BenchmarkError(source + ": " + e.what());
  }
}

BenchmarkTable load_benchmark(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw BenchmarkError("cannot open " + path.string());
  return read_benchmark(in, path.string());
}

void write_benchmark(std::ostream& out, const BenchmarkTable& table) {
  json header = {{"seq_len", table.seq_len()},
                 {"vocab_size", table.vocab_size()},
                 {"lf_names", table.lf_names()}};
  out << header.dump() << '\n';
  for (std::size_t i = 0; i < table.size(); ++i) {
    const ArchitectureRecord& r = table.record(i);
    json j;
    j["id"] = r.id;
    j["tokens"] = r.tokens;
    j["gt"] = r.gt_accuracy ? json(*r.gt_accuracy) : json(nullptr);
    j["lf"] = r.lf_values;
    j["flops"] = r.flops ? json(*r.flops) : json(nullptr);
    j["split"] = split_name(table.split(i));
    out << j.dump() << '\n';
  }
}

void save_benchmark(const std::filesystem::path& path, const BenchmarkTable& table) {
  std::ofstream out(path);
  if (!out) throw BenchmarkError("cannot write " + path.string());
  write_benchmark(out, table);
}

}  // namespace dynens
