#pragma once

#include <cstdint>
#include <span>

namespace dynens {

/// Pair counts behind Kendall's tau. A pair tied in either vector is
/// counted as tied, never as concordant or discordant.
struct RankReport {
  double kd = 0.0;
  std::int64_t n = 0;
  std::int64_t concordant = 0;
  std::int64_t discordant = 0;
  std::int64_t tied = 0;
};

enum class TauVariant { kA, kB };

/// Tau-a by default: (C - D) / (n(n-1)/2). Tau-b divides by
/// sqrt((n0 - ties_pred)(n0 - ties_gt)) instead. O(n log n).
RankReport kendall_tau(std::span<const double> pred, std::span<const double> gt,
                       TauVariant variant = TauVariant::kA);

/// The same counts by direct enumeration of all pairs, O(n^2).
RankReport kendall_tau_pairwise(std::span<const double> pred, std::span<const double> gt,
                                TauVariant variant = TauVariant::kA);

}  // namespace dynens
