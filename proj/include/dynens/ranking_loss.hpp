#pragma once

#include "dynens/autodiff.hpp"

#include <span>
#include <vector>

namespace dynens {

inline constexpr double kDefaultMargin = 0.1;

/// Ordered index pairs (i, j) with targets[i] > targets[j], flattened as
/// i0, j0, i1, j1, ... Equal targets contribute no pair.
std::vector<int> ranking_pairs(std::span<const double> targets);

/// Mean over ranking_pairs of max(0, margin - (s_i - s_j)); 0 when there is
/// no valid pair.
double hinge_ranking_loss(std::span<const double> scores, std::span<const double> targets,
                          double margin = kDefaultMargin);

/// Differentiable version over a batch x 1 score column.
ad::Var hinge_ranking_loss(ad::Var scores, std::span<const double> targets,
                           double margin = kDefaultMargin);

}  // namespace dynens
