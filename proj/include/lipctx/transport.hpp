// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "lipctx/measure.hpp"

namespace lipctx {

inline constexpr std::size_t kDefaultTransportCap = 4096;

struct TransportPlan {
  double value = 0.0;
  /// Basic cells (i, j, flow) of the final tree, zero flows included.
  struct Cell {
    std::size_t i;
    std::size_t j;
    double flow;
  };
  std::vector<Cell> cells;
  std::size_t pivots = 0;
};

/// Balanced transportation problem min <cost, P> subject to row sums `supply`
/// and column sums `demand`, solved with the transportation simplex.
/// Supplies and demands must be positive with (nearly) equal totals.
TransportPlan solve_transport(const Matrix& cost, const std::vector<double>& supply,
                              const std::vector<double>& demand);

/// Exact W1 with Euclidean ground cost. Zero-weight atoms are dropped before
/// solving; throws when n_mu * n_nu exceeds `cap`.
double w1_exact(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu,
                std::size_t cap = kDefaultTransportCap);

/// Integral of |F_mu - F_nu| for one-dimensional measures.
double w1_exact_1d(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu);

}  // namespace lipctx
