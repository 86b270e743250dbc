#pragma once

// Independent reference implementations used by the tests. Nothing here
// calls into the library code it is meant to check.

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

namespace oracle {

struct PairCount {
  std::int64_t concordant = 0;
  std::int64_t discordant = 0;
  std::int64_t tied = 0;
  double tau_a = 0.0;
};

inline PairCount brute_force_tau(const std::vector<double>& x, const std::vector<double>& y) {
  PairCount c;
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dx = x[i] - x[j];
      const double dy = y[i] - y[j];
      if (dx == 0.0 || dy == 0.0) ++c.tied;
      else if ((dx > 0) == (dy > 0)) ++c.concordant;
      else ++c.discordant;
    }
  }
  const double pairs = 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);
  c.tau_a = static_cast<double>(c.concordant - c.discordant) / pairs;
  return c;
}

/// Central difference of f with respect to the scalar `x` (restored after).
inline double central_difference(const std::function<double()>& f, double& x, double h) {
  const double keep = x;
  x = keep + h;
  const double up = f();
  x = keep - h;
  const double down = f();
  x = keep;
  return (up - down) / (2.0 * h);
}

/// Relative error with a small absolute floor for near-zero gradients.
inline double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-3});
  return std::abs(analytic - numeric) / scale;
}

/// Straightforward pairwise hinge loss.
inline double hinge_loss(const std::vector<double>& s, const std::vector<double>& t, double m) {
  double total = 0.0;
  int pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (t[i] > t[j]) {
        total += std::max(0.0, m - (s[i] - s[j]));
        ++pairs;
      }
    }
  }
  return pairs == 0 ? 0.0 : total / pairs;
}

}  // namespace oracle
