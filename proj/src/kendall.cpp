#include "dynens/kendall.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace dynens {

namespace {

void check_inputs(std::span<const double> pred, std::span<const double> gt) {
  if (pred.size() != gt.size()) throw std::invalid_argument("kendall_tau: length mismatch");
  if (pred.size() < 2) throw std::invalid_argument("kendall_tau: need at least two items");
}

double finish(RankReport& r, std::int64_t ties_pred, std::int64_t ties_gt, TauVariant variant) {
  const std::int64_t n0 = r.n * (r.n - 1) / 2;
  const double diff = static_cast<double>(r.concordant - r.discordant);
  if (variant == TauVariant::kA) return diff / static_cast<double>(n0);
  const double denom = std::sqrt(static_cast<double>(n0 - ties_pred) * static_cast<double>(n0 - ties_gt));
  return denom > 0.0 ? diff / denom : 0.0;
}

/// Number of pairs sharing a value, for a sorted run structure.
template <typename Eq>
std::int64_t tied_pairs(const std::vector<std::size_t>& order, Eq same) {
  std::int64_t total = 0;
  std::int64_t run = 1;
  for (std::size_t i = 1; i < order.size(); ++i) {
    if (same(order[i - 1], order[i])) {
      ++run;
    } else {
      total += run * (run - 1) / 2;
      run = 1;
    }
  }
  return total + run * (run - 1) / 2;
}

/// Merge sort on `keys`, returning the number of inversions (strict).
std::int64_t count_inversions(std::vector<double>& keys, std::vector<double>& scratch,
                              std::size_t lo, std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  std::int64_t inv = count_inversions(keys, scratch, lo, mid) + count_inversions(keys, scratch, mid, hi);
  std::size_t i = lo;
  std::size_t j = mid;
  std::size_t k = lo;
  while (i < mid && j < hi) {
    if (keys[j] < keys[i]) {
      inv += static_cast<std::int64_t>(mid - i);
      scratch[k++] = keys[j++];
    } else {
      scratch[k++] = keys[i++];
    }
  }
  while (i < mid) scratch[k++] = keys[i++];
  while (j < hi) scratch[k++] = keys[j++];
  std::copy(scratch.begin() + static_cast<std::ptrdiff_t>(lo), scratch.begin() + static_cast<std::ptrdiff_t>(hi),
            keys.begin() + static_cast<std::ptrdiff_t>(lo));
  return inv;
}

}  // namespace

RankReport kendall_tau(std::span<const double> pred, std::span<const double> gt, TauVariant variant) {
  check_inputs(pred, gt);
  const std::size_t n = pred.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  // Sort by (pred, gt) so that within a pred-tie block gt is ascending and
  // contributes no inversions.
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return pred[a] < pred[b] || (pred[a] == pred[b] && gt[a] < gt[b]);
  });
  const std::int64_t ties_pred = tied_pairs(order, [&](std::size_t a, std::size_t b) { return pred[a] == pred[b]; });
  const std::int64_t ties_joint = tied_pairs(order, [&](std::size_t a, std::size_t b) {
    return pred[a] == pred[b] && gt[a] == gt[b];
  });

  std::vector<double> keys(n);
  for (std::size_t i = 0; i < n; ++i) keys[i] = gt[order[i]];
  std::vector<double> scratch(n);
  const std::int64_t discordant = count_inversions(keys, scratch, 0, n);
  // keys is now sorted by gt.
  std::int64_t ties_gt = 0;
  {
    std::int64_t run = 1;
    for (std::size_t i = 1; i < n; ++i) {
      if (keys[i] == keys[i - 1]) {
        ++run;
      } else {
        ties_gt += run * (run - 1) / 2;
        run = 1;
      }
    }
    ties_gt += run * (run - 1) / 2;
  }

  RankReport r;
  r.n = static_cast<std::int64_t>(n);
  const std::int64_t n0 = r.n * (r.n - 1) / 2;
  r.tied = ties_pred + ties_gt - ties_joint;
  r.discordant = discordant;
  r.concordant = n0 - r.tied - r.discordant;
  r.kd = finish(r, ties_pred, ties_gt, variant);
  return r;
}

RankReport kendall_tau_pairwise(std::span<const double> pred, std::span<const double> gt,
                                TauVariant variant) {
  check_inputs(pred, gt);
  RankReport r;
  r.n = static_cast<std::int64_t>(pred.size());
  std::int64_t ties_pred = 0;
  std::int64_t ties_gt = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    for (std::size_t j = i + 1; j < pred.size(); ++j) {
      const double dp = pred[i] - pred[j];
      const double dg = gt[i] - gt[j];
      if (dp == 0.0) ++ties_pred;
      if (dg == 0.0) ++ties_gt;
      if (dp == 0.0 || dg == 0.0) {
        ++r.tied;
      } else if ((dp > 0.0) == (dg > 0.0)) {
        ++r.concordant;
      } else {
        ++r.discordant;
      }
    }
  }
  r.kd = finish(r, ties_pred, ties_gt, variant);
  return r;
}

}  // namespace dynens
