#pragma once

// Optimal bipartite assignment for set-prediction training.

#include <cstdint>
#include <vector>

namespace aqdet {

// Minimum-cost injective assignment of ground truths to predictions.
// `cost` is [n_pred, n_gt] row-major and must be finite; requires
// n_pred >= n_gt. Returns gt -> pred indices. O(n_gt^2 * n_pred) potentials
// method; among equal-cost optima the scan order prefers lower pred indices.
std::vector<int64_t> hungarian_match(const std::vector<double>& cost, int64_t n_pred,
                                     int64_t n_gt);

}  // namespace aqdet
