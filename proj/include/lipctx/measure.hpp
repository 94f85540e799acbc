// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <vector>

#include "lipctx/linalg.hpp"

namespace lipctx {

/// Finite weighted point cloud sum_i w_i delta_{x_i}. Atoms are stored as the
/// columns of a d x n matrix; duplicates are kept.
class EmpiricalMeasure {
 public:
  /// Weights default to uniform and are renormalized to sum to one.
  explicit EmpiricalMeasure(const std::vector<Vector>& points,
                            std::vector<double> weights = {});
  EmpiricalMeasure(Matrix points, std::vector<double> weights);

  /// Takes weights verbatim (they must already sum to one within 1e-12).
  static EmpiricalMeasure from_normalized(Matrix points, std::vector<double> weights);

  std::size_t size() const { return weights_.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(points_.rows()); }
  const Matrix& points() const { return points_; }
  Vector point(std::size_t i) const { return points_.col(static_cast<Eigen::Index>(i)); }
  const std::vector<double>& weights() const { return weights_; }
  double weight(std::size_t i) const { return weights_[i]; }

  /// Same measure with atoms sorted lexicographically by coordinates, then by
  /// weight. Equal multisets map to identical representations.
  EmpiricalMeasure canonical() const;

 private:
  EmpiricalMeasure() = default;
  void validate() const;

  Matrix points_;
  std::vector<double> weights_;
};

EmpiricalMeasure pushforward(const EmpiricalMeasure& mu,
                             const std::function<Vector(const Vector&)>& f);

/// True when both measures agree as weighted multisets once duplicate atoms
/// are merged (atoms compared exactly, weights within tol).
bool same_weighted_multiset(const EmpiricalMeasure& a, const EmpiricalMeasure& b,
                            double tol = 1e-12);

/// Joint measure on R^{h+h'}; the first `split` coordinates belong to the
/// first marginal.
struct Coupling {
  EmpiricalMeasure joint;
  std::size_t split;

  EmpiricalMeasure first_marginal() const;
  EmpiricalMeasure second_marginal() const;
};

/// Index pairing when sizes and weight lists coincide, product coupling
/// otherwise.
Coupling pair_coupling(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu);

struct DomainBall {
  Vector center;
  double radius = 0.0;

  std::size_t dim() const { return static_cast<std::size_t>(center.size()); }
  bool contains(const Vector& x) const;
};

/// Product of balls over consecutive coordinate ranges. A single block is an
/// ordinary ball.
class ProductDomain {
 public:
  ProductDomain() = default;
  ProductDomain(const DomainBall& ball);  // NOLINT(google-explicit-constructor)
  explicit ProductDomain(std::vector<DomainBall> blocks);

  std::size_t dim() const { return offsets_.empty() ? 0 : offsets_.back(); }
  std::size_t num_blocks() const { return blocks_.size(); }
  const DomainBall& block(std::size_t k) const { return blocks_[k]; }
  const std::vector<DomainBall>& blocks() const { return blocks_; }
  std::size_t offset(std::size_t k) const { return offsets_[k]; }
  std::size_t block_size(std::size_t k) const { return offsets_[k + 1] - offsets_[k]; }

  Vector center() const;
  /// sqrt(sum_k r_k^2): radius of the ball around center() covering the product.
  double outer_radius() const;
  /// sup of ||y|| over the domain, bounded by sqrt(sum_k (||c_k|| + r_k)^2).
  double norm_bound() const;
  /// Per-block containment, ||x_k - c_k|| <= r_k (1 + rel_tol) + 1e-9.
  bool contains(const Vector& x, double rel_tol = 1e-6) const;

 private:
  std::vector<DomainBall> blocks_;
  std::vector<std::size_t> offsets_{0};
};

/// Ball around the coordinate mean containing every point, radius inflated by
/// margin and a relative 1e-9.
DomainBall bounding_ball(const std::vector<Vector>& points, double margin = 0.0);

}  // namespace lipctx
