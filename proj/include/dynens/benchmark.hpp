#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace dynens {

class BenchmarkError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Split : std::uint8_t { kTrain, kValidation };

const char* split_name(Split s);

enum class SplitMode { kByIndex, kRandom };

struct ArchitectureRecord {
  std::string id;
  std::vector<int> tokens;
  std::optional<double> gt_accuracy;
  std::map<std::string, double> lf_values;
  std::optional<double> flops;

  friend bool operator==(const ArchitectureRecord&, const ArchitectureRecord&) = default;
};

/// A search space as an ordered table of architectures with a train /
/// validation partition. Immutable after construction; the derived-table
/// helpers below return modified copies.
class BenchmarkTable {
 public:
  BenchmarkTable(int seq_len, int vocab_size, std::vector<std::string> lf_names,
                 std::vector<ArchitectureRecord> records, std::vector<Split> splits);

  int seq_len() const { return seq_len_; }
  int vocab_size() const { return vocab_size_; }
  const std::vector<std::string>& lf_names() const { return lf_names_; }
  const std::vector<ArchitectureRecord>& records() const { return records_; }
  const ArchitectureRecord& record(std::size_t i) const { return records_.at(i); }
  std::size_t size() const { return records_.size(); }
  Split split(std::size_t i) const { return splits_.at(i); }
  const std::vector<Split>& splits() const { return splits_; }

  std::vector<std::size_t> train_indices() const;
  std::vector<std::size_t> validation_indices() const;

  /// Train records whose ground truth may be used for finetuning.
  const std::vector<std::size_t>& finetune_indices() const { return finetune_; }
  bool has_finetune_subset() const { return finetune_marked_; }

  /// Whether record i exposes its low-fidelity values to training.
  bool lf_visible(std::size_t i) const { return lf_visible_.at(i); }

  std::optional<std::size_t> index_of(const std::string& id) const;
  std::optional<std::size_t> find_tokens(const std::vector<int>& tokens) const;

  /// Throws if any listed record lacks ground truth.
  void require_gt(const std::vector<std::size_t>& indices, const char* context) const;

  friend bool operator==(const BenchmarkTable& a, const BenchmarkTable& b);

 private:
  friend BenchmarkTable make_split(const BenchmarkTable&, double, SplitMode, std::uint64_t);
  friend BenchmarkTable restrict_lf(const BenchmarkTable&, double);

  void validate() const;

  int seq_len_;
  int vocab_size_;
  std::vector<std::string> lf_names_;
  std::vector<ArchitectureRecord> records_;
  std::vector<Split> splits_;
  std::vector<std::size_t> finetune_;
  bool finetune_marked_ = false;
  std::vector<bool> lf_visible_;
  std::unordered_map<std::string, std::size_t> by_id_;
  std::map<std::vector<int>, std::size_t> by_tokens_;
};

/// Marks ceil(gt_fraction * |train|) train records as the finetune subset.
BenchmarkTable make_split(const BenchmarkTable& table, double gt_fraction,
                          SplitMode mode = SplitMode::kByIndex, std::uint64_t seed = 0);

/// Keeps low-fidelity values visible on only the first
/// ceil(lf_fraction * |train records carrying LF|) train records, by index.
BenchmarkTable restrict_lf(const BenchmarkTable& table, double lf_fraction);

/// Reads the JSONL format: a header line, then one record per line.
BenchmarkTable load_benchmark(const std::filesystem::path& path);
BenchmarkTable read_benchmark(std::istream& in, const std::string& source = "<stream>");
void write_benchmark(std::ostream& out, const BenchmarkTable& table);
void save_benchmark(const std::filesystem::path& path, const BenchmarkTable& table);

/// Default partition when records carry no split tag: the first
/// ceil(0.8 * n) records train, the rest validate.
inline constexpr double kDefaultTrainShare = 0.8;

}  // namespace dynens
