#pragma once

// Shared test helpers that need the library types.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "aqdet/tensor.hpp"

namespace test_util {

// Central-difference check of dLoss/dParam at the given element indices; the
// loss closure must rebuild the full graph from current parameter values.
inline double fd_check_param(const std::function<double()>& loss_value,
                             const std::function<aqdet::Tensor<double>()>& loss_graph,
                             aqdet::Tensor<double> param, const std::vector<int64_t>& indices,
                             double h = 1e-6) {
  param.zero_grad();
  aqdet::Tensor<double> loss = loss_graph();
  loss.backward();
  std::vector<double> analytic;
  analytic.reserve(indices.size());
  for (int64_t i : indices) analytic.push_back(param.grad()[i]);

  double max_err = 0.0;
  auto values = param.mutable_data();
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const int64_t i = indices[k];
    const double saved = values[i];
    values[i] = saved + h;
    const double fp = loss_value();
    values[i] = saved - h;
    const double fm = loss_value();
    values[i] = saved;
    const double numeric = (fp - fm) / (2.0 * h);
    const double denom = std::max({std::abs(analytic[k]), std::abs(numeric), 1e-8});
    max_err = std::max(max_err, std::abs(analytic[k] - numeric) / denom);
  }
  return max_err;
}

}  // namespace test_util
