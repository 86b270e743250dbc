#include "dynens/ranking_loss.hpp"

#include <algorithm>
#include <stdexcept>

namespace dynens {

std::vector<int> ranking_pairs(std::span<const double> targets) {
  std::vector<int> pairs;
  const int n = static_cast<int>(targets.size());
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (targets[i] > targets[j]) {
        pairs.push_back(i);
        pairs.push_back(j);
      } else if (targets[j] > targets[i]) {
        pairs.push_back(j);
        pairs.push_back(i);
      }
    }
  }
  return pairs;
}

double hinge_ranking_loss(std::span<const double> scores, std::span<const double> targets,
                          double margin) {
  if (scores.size() != targets.size()) throw std::invalid_argument("ranking loss: length mismatch");
  const std::vector<int> pairs = ranking_pairs(targets);
  if (pairs.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t k = 0; k < pairs.size(); k += 2) {
    total += std::max(0.0, margin - (scores[pairs[k]] - scores[pairs[k + 1]]));
  }
  return total / static_cast<double>(pairs.size() / 2);
}

ad::Var hinge_ranking_loss(ad::Var scores, std::span<const double> targets, double margin) {
  if (scores.cols() != 1 || scores.rows() != static_cast<Eigen::Index>(targets.size())) {
    throw std::invalid_argument("ranking loss: expected a " + std::to_string(targets.size()) +
                                "x1 score column");
  }
  std::vector<int> pairs = ranking_pairs(targets);
  if (pairs.empty()) return scores.graph->constant_scalar(0.0);
  const ad::Var diff = ad::pair_diff(scores, std::move(pairs));
  return ad::mean(ad::relu(ad::add_scalar(ad::scale(diff, -1.0), margin)));
}

}  // namespace dynens
