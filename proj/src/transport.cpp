// SPDX-License-Identifier: Apache-2.0
#include "lipctx/transport.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "lipctx/error.hpp"

namespace lipctx {

namespace {

// Spanning tree over m row nodes [0, m) and n column nodes [m, m+n); each
// basic cell (i, j) is an edge between node i and node m+j.
class BasisTree {
 public:
  BasisTree(std::size_t m, std::size_t n) : m_(m), adj_(m + n) {}

  void add(std::size_t cell, std::size_t i, std::size_t j) {
    adj_[i].push_back({m_ + j, cell});
    adj_[m_ + j].push_back({i, cell});
  }

  void remove(std::size_t i, std::size_t j) {
    erase(adj_[i], m_ + j);
    erase(adj_[m_ + j], i);
  }

  // Breadth-first labelling from `root`; parent_[v] = (node, cell).
  void root_at(std::size_t root) {
    const std::size_t none = std::numeric_limits<std::size_t>::max();
    parent_.assign(adj_.size(), {none, none});
    order_.clear();
    order_.push_back(root);
    parent_[root] = {root, none};
    for (std::size_t k = 0; k < order_.size(); ++k) {
      const std::size_t v = order_[k];
      for (const Edge& e : adj_[v]) {
        if (parent_[e.to].first == none) {
          parent_[e.to] = {v, e.cell};
          order_.push_back(e.to);
        }
      }
    }
  }

  std::size_t reached() const { return order_.size(); }
  const std::vector<std::size_t>& order() const { return order_; }
  std::pair<std::size_t, std::size_t> parent(std::size_t v) const { return parent_[v]; }

 private:
  struct Edge {
    std::size_t to;
    std::size_t cell;
  };

  static void erase(std::vector<Edge>& edges, std::size_t to) {
    for (std::size_t k = 0; k < edges.size(); ++k) {
      if (edges[k].to == to) {
        edges.erase(edges.begin() + static_cast<std::ptrdiff_t>(k));
        return;
      }
    }
  }

  std::size_t m_;
  std::vector<std::vector<Edge>> adj_;
  std::vector<std::pair<std::size_t, std::size_t>> parent_;
  std::vector<std::size_t> order_;
};

struct Basic {
  std::size_t i;
  std::size_t j;
  double flow;
};

}  // namespace

TransportPlan solve_transport(const Matrix& cost, const std::vector<double>& supply,
                              const std::vector<double>& demand) {
  const std::size_t m = supply.size();
  const std::size_t n = demand.size();
  if (m == 0 || n == 0) throw DimensionError("empty transportation problem");
  if (static_cast<std::size_t>(cost.rows()) != m || static_cast<std::size_t>(cost.cols()) != n)
    throw DimensionError("cost matrix shape does not match marginals");
  if (!cost.allFinite()) throw Error("non-finite transport cost");

  // North-west corner rule along a monotone staircase: exactly m+n-1 cells,
  // which always form a spanning tree.
  std::vector<Basic> basis;
  basis.reserve(m + n - 1);
  {
    std::vector<double> rs = supply;
    std::vector<double> rd = demand;
    std::size_t i = 0;
    std::size_t j = 0;
    while (i < m && j < n) {
      const double x = std::max(0.0, std::min(rs[i], rd[j]));
      basis.push_back({i, j, x});
      rs[i] -= x;
      rd[j] -= x;
      if (i == m - 1) {
        ++j;
      } else if (j == n - 1) {
        ++i;
      } else if (rs[i] <= rd[j]) {
        ++i;
      } else {
        ++j;
      }
    }
  }

  BasisTree tree(m, n);
  std::vector<std::vector<std::size_t>> cell_of(m, std::vector<std::size_t>(n, SIZE_MAX));
  for (std::size_t k = 0; k < basis.size(); ++k) {
    tree.add(k, basis[k].i, basis[k].j);
    cell_of[basis[k].i][basis[k].j] = k;
  }

  const double scale = std::max(1.0, cost.cwiseAbs().maxCoeff());
  const double tol = 1e-12 * scale;
  std::vector<double> u(m);
  std::vector<double> v(n);
  std::size_t pivots = 0;
  std::size_t degenerate_streak = 0;
  const std::size_t max_pivots = 200 * (m + n) * (m + n) + 1000;

  while (true) {
    // Dual potentials from u_0 = 0 along the tree.
    tree.root_at(0);
    if (tree.reached() != m + n) throw Error("transport basis is not a spanning tree");
    u[0] = 0.0;
    for (std::size_t k = 1; k < tree.order().size(); ++k) {
      const std::size_t node = tree.order()[k];
      const auto [par, cell] = tree.parent(node);
      const Basic& b = basis[cell];
      if (node >= m) {
        v[node - m] = cost(static_cast<Eigen::Index>(b.i), static_cast<Eigen::Index>(b.j)) - u[par];
      } else {
        u[node] = cost(static_cast<Eigen::Index>(b.i), static_cast<Eigen::Index>(b.j)) - v[par - m];
      }
    }

    // Dantzig pricing; Bland's smallest-index rule after a run of degenerate
    // pivots to rule out cycling.
    const bool bland = degenerate_streak > m + n;
    std::size_t ei = m;
    std::size_t ej = n;
    double best = -tol;
    for (std::size_t i = 0; i < m && !(bland && ei < m); ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (cell_of[i][j] != SIZE_MAX) continue;
        const double rc = cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) - u[i] - v[j];
        if (rc < best) {
          ei = i;
          ej = j;
          if (bland) break;
          best = rc;
        }
      }
    }
    if (ei == m) break;
    if (++pivots > max_pivots) throw Error("transportation simplex did not converge");

    // Cycle: entering cell plus the tree path from column ej back to row ei.
    tree.root_at(ei);
    std::vector<std::size_t> path;
    for (std::size_t node = m + ej; node != ei;) {
      const auto [par, cell] = tree.parent(node);
      path.push_back(cell);
      node = par;
    }
    // Cells at even path positions lose flow.
    double theta = std::numeric_limits<double>::infinity();
    std::size_t leave = SIZE_MAX;
    for (std::size_t k = 0; k < path.size(); k += 2) {
      const Basic& b = basis[path[k]];
      bool better = leave == SIZE_MAX || b.flow < theta;
      if (!better && b.flow == theta) {
        const Basic& cur = basis[leave];
        better = b.i < cur.i || (b.i == cur.i && b.j < cur.j);
      }
      if (better) {
        theta = b.flow;
        leave = path[k];
      }
    }
    theta = std::max(theta, 0.0);
    degenerate_streak = theta == 0.0 ? degenerate_streak + 1 : 0;
    for (std::size_t k = 0; k < path.size(); ++k) {
      Basic& b = basis[path[k]];
      b.flow = (k % 2 == 0) ? std::max(0.0, b.flow - theta) : b.flow + theta;
    }
    Basic& out = basis[leave];
    tree.remove(out.i, out.j);
    cell_of[out.i][out.j] = SIZE_MAX;
    out = {ei, ej, theta};
    tree.add(leave, ei, ej);
    cell_of[ei][ej] = leave;
  }

  TransportPlan plan;
  plan.pivots = pivots;
  std::sort(basis.begin(), basis.end(), [](const Basic& a, const Basic& b) {
    return a.i != b.i ? a.i < b.i : a.j < b.j;
  });
  std::vector<double> terms;
  terms.reserve(basis.size());
  for (const Basic& b : basis) {
    plan.cells.push_back({b.i, b.j, b.flow});
    terms.push_back(b.flow * cost(static_cast<Eigen::Index>(b.i), static_cast<Eigen::Index>(b.j)));
  }
  plan.value = pairwise_sum(terms);
  return plan;
}

double w1_exact(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu, std::size_t cap) {
  if (mu.dim() != nu.dim()) throw DimensionError("w1 of measures with different dimension");
  std::vector<std::size_t> ri;
  std::vector<std::size_t> ci;
  for (std::size_t i = 0; i < mu.size(); ++i)
    if (mu.weight(i) > 0.0) ri.push_back(i);
  for (std::size_t j = 0; j < nu.size(); ++j)
    if (nu.weight(j) > 0.0) ci.push_back(j);
  if (ri.size() * ci.size() > cap) throw Error("transport instance exceeds the cell cap");
  Matrix cost(static_cast<Eigen::Index>(ri.size()), static_cast<Eigen::Index>(ci.size()));
  std::vector<double> supply;
  std::vector<double> demand;
  for (std::size_t a = 0; a < ri.size(); ++a) {
    supply.push_back(mu.weight(ri[a]));
    for (std::size_t b = 0; b < ci.size(); ++b) {
      cost(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
          norm2(mu.point(ri[a]) - nu.point(ci[b]));
    }
  }
  for (std::size_t j : ci) demand.push_back(nu.weight(j));
  return std::max(0.0, solve_transport(cost, supply, demand).value);
}

double w1_exact_1d(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
  if (mu.dim() != 1 || nu.dim() != 1) throw DimensionError("w1_exact_1d needs one-dimensional measures");
  std::vector<std::pair<double, double>> events;
  events.reserve(mu.size() + nu.size());
  for (std::size_t i = 0; i < mu.size(); ++i) events.emplace_back(mu.points()(0, static_cast<Eigen::Index>(i)), mu.weight(i));
  for (std::size_t j = 0; j < nu.size(); ++j) events.emplace_back(nu.points()(0, static_cast<Eigen::Index>(j)), -nu.weight(j));
  std::sort(events.begin(), events.end());
  std::vector<double> terms;
  double diff = 0.0;
  for (std::size_t k = 0; k + 1 < events.size(); ++k) {
    diff += events[k].second;
    const double gap = events[k + 1].first - events[k].first;
    if (gap > 0.0) terms.push_back(std::abs(diff) * gap);
  }
  return pairwise_sum(terms);
}

}  // namespace lipctx
