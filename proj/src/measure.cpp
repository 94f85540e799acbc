// SPDX-License-Identifier: Apache-2.0
#include "lipctx/measure.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lipctx/error.hpp"

namespace lipctx {

namespace {

Matrix stack_columns(const std::vector<Vector>& points) {
  if (points.empty()) throw DimensionError("measure needs at least one atom");
  const Eigen::Index d = points.front().size();
  if (d < 1) throw DimensionError("atoms must have dimension >= 1");
  Matrix m(d, static_cast<Eigen::Index>(points.size()));
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (points[i].size() != d) throw DimensionError("atoms of unequal dimension");
    m.col(static_cast<Eigen::Index>(i)) = points[i];
  }
  return m;
}

std::vector<double> normalize(std::vector<double> w, std::size_t n) {
  if (w.empty()) return std::vector<double>(n, 1.0 / static_cast<double>(n));
  if (w.size() != n) throw DimensionError("weight count does not match atom count");
  for (double x : w) {
    if (!std::isfinite(x)) throw Error("non-finite weight");
    if (x < 0.0) throw Error("negative weight");
  }
  const double s = pairwise_sum(w);
  if (s <= 0.0) throw Error("weights sum to zero");
  if (s != 1.0) {
    for (double& x : w) x /= s;
  }
  return w;
}

// Lexicographic order on (coordinates, weight) of columns i and j.
bool atom_less(const Matrix& p, const std::vector<double>& w, std::size_t i, std::size_t j) {
  const auto ci = static_cast<Eigen::Index>(i);
  const auto cj = static_cast<Eigen::Index>(j);
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    if (p(r, ci) < p(r, cj)) return true;
    if (p(r, cj) < p(r, ci)) return false;
  }
  return w[i] < w[j];
}

struct MergedAtoms {
  Matrix points;
  std::vector<double> weights;
};

MergedAtoms merge_duplicates(const EmpiricalMeasure& m) {
  const EmpiricalMeasure c = m.canonical();
  MergedAtoms out;
  std::vector<Eigen::Index> keep;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const auto ci = static_cast<Eigen::Index>(i);
    if (!keep.empty() && c.points().col(keep.back()) == c.points().col(ci)) {
      out.weights.back() += c.weight(i);
    } else {
      keep.push_back(ci);
      out.weights.push_back(c.weight(i));
    }
  }
  out.points.resize(c.points().rows(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t k = 0; k < keep.size(); ++k)
    out.points.col(static_cast<Eigen::Index>(k)) = c.points().col(keep[k]);
  return out;
}

EmpiricalMeasure marginal(const Coupling& c, std::size_t begin, std::size_t count) {
  return EmpiricalMeasure::from_normalized(
      c.joint.points().middleRows(static_cast<Eigen::Index>(begin),
                                  static_cast<Eigen::Index>(count)),
      c.joint.weights());
}

}  // namespace

EmpiricalMeasure::EmpiricalMeasure(const std::vector<Vector>& points, std::vector<double> weights)
    : points_(stack_columns(points)), weights_(normalize(std::move(weights), points.size())) {}

EmpiricalMeasure::EmpiricalMeasure(Matrix points, std::vector<double> weights)
    : points_(std::move(points)) {
  if (points_.cols() == 0) throw DimensionError("measure needs at least one atom");
  if (points_.rows() < 1) throw DimensionError("atoms must have dimension >= 1");
  weights_ = normalize(std::move(weights), static_cast<std::size_t>(points_.cols()));
}

EmpiricalMeasure EmpiricalMeasure::from_normalized(Matrix points, std::vector<double> weights) {
  EmpiricalMeasure m;
  m.points_ = std::move(points);
  m.weights_ = std::move(weights);
  m.validate();
  return m;
}

void EmpiricalMeasure::validate() const {
  if (points_.cols() == 0) throw DimensionError("measure needs at least one atom");
  if (points_.rows() < 1) throw DimensionError("atoms must have dimension >= 1");
  if (static_cast<std::size_t>(points_.cols()) != weights_.size())
    throw DimensionError("weight count does not match atom count");
  for (double w : weights_)
    if (!(w >= 0.0)) throw Error("negative or non-finite weight");
  if (std::abs(pairwise_sum(weights_) - 1.0) > 1e-12) throw Error("weights do not sum to one");
}

EmpiricalMeasure EmpiricalMeasure::canonical() const {
  std::vector<std::size_t> order(size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [this](std::size_t i, std::size_t j) {
    return atom_less(points_, weights_, i, j);
  });
  EmpiricalMeasure out;
  out.points_.resize(points_.rows(), points_.cols());
  out.weights_.resize(size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    out.points_.col(static_cast<Eigen::Index>(k)) = points_.col(static_cast<Eigen::Index>(order[k]));
    out.weights_[k] = weights_[order[k]];
  }
  return out;
}

EmpiricalMeasure pushforward(const EmpiricalMeasure& mu,
                             const std::function<Vector(const Vector&)>& f) {
  std::vector<Vector> images;
  images.reserve(mu.size());
  for (std::size_t i = 0; i < mu.size(); ++i) images.push_back(f(mu.point(i)));
  return EmpiricalMeasure::from_normalized(stack_columns(images), mu.weights());
}

bool same_weighted_multiset(const EmpiricalMeasure& a, const EmpiricalMeasure& b, double tol) {
  if (a.dim() != b.dim()) return false;
  const MergedAtoms ma = merge_duplicates(a);
  const MergedAtoms mb = merge_duplicates(b);
  if (ma.weights.size() != mb.weights.size()) return false;
  for (std::size_t i = 0; i < ma.weights.size(); ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    if (ma.points.col(c) != mb.points.col(c)) return false;
    if (std::abs(ma.weights[i] - mb.weights[i]) > tol) return false;
  }
  return true;
}

EmpiricalMeasure Coupling::first_marginal() const { return marginal(*this, 0, split); }

EmpiricalMeasure Coupling::second_marginal() const {
  return marginal(*this, split, joint.dim() - split);
}

Coupling pair_coupling(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
  const auto h = static_cast<Eigen::Index>(mu.dim());
  const auto hp = static_cast<Eigen::Index>(nu.dim());
  if (mu.size() == nu.size() && mu.weights() == nu.weights()) {
    Matrix joint(h + hp, static_cast<Eigen::Index>(mu.size()));
    joint.topRows(h) = mu.points();
    joint.bottomRows(hp) = nu.points();
    return {EmpiricalMeasure::from_normalized(std::move(joint), mu.weights()), mu.dim()};
  }
  const std::size_t n = mu.size();
  const std::size_t m = nu.size();
  Matrix joint(h + hp, static_cast<Eigen::Index>(n * m));
  std::vector<double> w(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const auto c = static_cast<Eigen::Index>(i * m + j);
      joint.col(c).head(h) = mu.points().col(static_cast<Eigen::Index>(i));
      joint.col(c).tail(hp) = nu.points().col(static_cast<Eigen::Index>(j));
      w[i * m + j] = mu.weight(i) * nu.weight(j);
    }
  }
  return {EmpiricalMeasure(std::move(joint), std::move(w)), mu.dim()};
}

bool DomainBall::contains(const Vector& x) const {
  if (x.size() != center.size()) throw DimensionError("point and ball dimension differ");
  return norm2(x - center) <= radius + 1e-9;
}

ProductDomain::ProductDomain(const DomainBall& ball) : ProductDomain(std::vector<DomainBall>{ball}) {}

ProductDomain::ProductDomain(std::vector<DomainBall> blocks) : blocks_(std::move(blocks)) {
  for (const DomainBall& b : blocks_) {
    if (b.dim() == 0) throw DimensionError("empty domain block");
    if (!(b.radius >= 0.0)) throw Error("domain radius must be nonnegative");
    offsets_.push_back(offsets_.back() + b.dim());
  }
}

Vector ProductDomain::center() const {
  Vector c(static_cast<Eigen::Index>(dim()));
  for (std::size_t k = 0; k < blocks_.size(); ++k)
    c.segment(static_cast<Eigen::Index>(offsets_[k]), static_cast<Eigen::Index>(block_size(k))) =
        blocks_[k].center;
  return c;
}

double ProductDomain::outer_radius() const {
  double s = 0.0;
  for (const DomainBall& b : blocks_) s += b.radius * b.radius;
  return std::sqrt(s);
}

double ProductDomain::norm_bound() const {
  double s = 0.0;
  for (const DomainBall& b : blocks_) {
    const double r = norm2(b.center) + b.radius;
    s += r * r;
  }
  return std::sqrt(s);
}

bool ProductDomain::contains(const Vector& x, double rel_tol) const {
  if (static_cast<std::size_t>(x.size()) != dim())
    throw DimensionError("point and domain dimension differ");
  for (std::size_t k = 0; k < blocks_.size(); ++k) {
    const Vector seg = x.segment(static_cast<Eigen::Index>(offsets_[k]),
                                 static_cast<Eigen::Index>(block_size(k)));
    if (!(norm2(seg - blocks_[k].center) <= blocks_[k].radius * (1.0 + rel_tol) + 1e-9)) return false;
  }
  return true;
}

DomainBall bounding_ball(const std::vector<Vector>& points, double margin) {
  if (points.empty()) throw DimensionError("bounding ball of an empty set");
  if (!(margin >= 0.0)) throw Error("margin must be nonnegative");
  const Matrix m = stack_columns(points);
  Vector center(m.rows());
  std::vector<double> coord(points.size());
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (std::size_t i = 0; i < points.size(); ++i) coord[i] = m(r, static_cast<Eigen::Index>(i));
    center[r] = pairwise_sum(coord) / static_cast<double>(points.size());
  }
  double r = 0.0;
  for (const Vector& p : points) r = std::max(r, norm2(p - center));
  return {center, (r + margin) * (1.0 + 1e-9)};
}

}  // namespace lipctx
