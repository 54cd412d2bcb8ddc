#include "aqdet/matching.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace aqdet {

std::vector<int64_t> hungarian_match(const std::vector<double>& cost, int64_t n_pred,
                                     int64_t n_gt) {
  if (n_gt < 0 || n_pred < 0 || cost.size() != static_cast<std::size_t>(n_pred * n_gt))
    throw std::invalid_argument("hungarian_match: cost matrix size does not match dims");
  if (n_gt > n_pred)
    throw std::invalid_argument("hungarian_match: need at least as many predictions (" +
                                std::to_string(n_pred) + ") as ground truths (" +
                                std::to_string(n_gt) + ")");
  for (double c : cost)
    if (!std::isfinite(c)) throw std::invalid_argument("hungarian_match: non-finite cost");
  if (n_gt == 0) return {};

  const double inf = std::numeric_limits<double>::infinity();
  // rows = ground truths (1-based), cols = predictions (1-based)
  std::vector<double> u(static_cast<std::size_t>(n_gt + 1), 0.0);
  std::vector<double> v(static_cast<std::size_t>(n_pred + 1), 0.0);
  std::vector<int64_t> matched_row(static_cast<std::size_t>(n_pred + 1), 0);  // col -> row
  std::vector<int64_t> way(static_cast<std::size_t>(n_pred + 1), 0);

  auto a = [&](int64_t row, int64_t col) -> double {
    return cost[static_cast<std::size_t>((col - 1) * n_gt + (row - 1))];
  };

  for (int64_t i = 1; i <= n_gt; ++i) {
    matched_row[0] = i;
    int64_t j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n_pred + 1), inf);
    std::vector<bool> used(static_cast<std::size_t>(n_pred + 1), false);
    do {
      used[static_cast<std::size_t>(j0)] = true;
      const int64_t i0 = matched_row[static_cast<std::size_t>(j0)];
      double delta = inf;
      int64_t j1 = -1;
      for (int64_t j = 1; j <= n_pred; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = a(i0, j) - u[static_cast<std::size_t>(i0)] -
                           v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int64_t j = 0; j <= n_pred; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(matched_row[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (matched_row[static_cast<std::size_t>(j0)] != 0);
    do {
      const int64_t j1 = way[static_cast<std::size_t>(j0)];
      matched_row[static_cast<std::size_t>(j0)] = matched_row[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<int64_t> assignment(static_cast<std::size_t>(n_gt), -1);
  for (int64_t j = 1; j <= n_pred; ++j) {
    const int64_t row = matched_row[static_cast<std::size_t>(j)];
    if (row > 0) assignment[static_cast<std::size_t>(row - 1)] = j - 1;
  }
  return assignment;
}

}  // namespace aqdet
