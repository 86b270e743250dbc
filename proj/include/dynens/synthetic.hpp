#pragma once

#include "dynens/benchmark.hpp"

#include <cstdint>

namespace dynens {

/// Desk-scale benchmark with a known ground truth and five low-fidelity
/// columns of deliberately different quality:
///
///   proxy_a        tracks gt closely where tokens[0] is even (region A),
///                  unrelated to gt elsewhere
///   proxy_b        the mirror image: valid only where tokens[0] is odd
///   proxy_global   monotone transform of gt plus moderate disturbance
///   proxy_adverse  anti-correlated with gt
///   proxy_noise    unrelated to gt everywhere
///
/// Every column, disturbances included, is a deterministic function of the
/// token sequence, so a predictor can learn each one exactly.
struct SyntheticConfig {
  std::uint64_t seed = 0;
  int size = 2000;
  int seq_len = 6;
  int vocab_size = 5;
  double train_share = kDefaultTrainShare;
};

inline constexpr const char* kSyntheticLfNames[] = {"proxy_a", "proxy_b", "proxy_global",
                                                    "proxy_adverse", "proxy_noise"};

BenchmarkTable gen_synthetic(const SyntheticConfig& config);

/// Region A membership used by the generator.
inline bool in_region_a(const ArchitectureRecord& r) { return r.tokens.at(0) % 2 == 0; }

}  // namespace dynens
