// SPDX-License-Identifier: Apache-2.0
#include "lipctx/linalg.hpp"

#include <algorithm>
#include <cmath>

namespace lipctx {

namespace {

constexpr std::size_t kLeaf = 8;

std::size_t num_leaves(std::size_t n) { return (n + kLeaf - 1) / kLeaf; }

}  // namespace

// Sequential sums over leaves of kLeaf terms, then a balanced combine of the
// leaf sums by doubling stride. The vector variant uses the identical tree.
double pairwise_sum(std::span<const double> values) {
  const std::size_t n = values.size();
  if (n == 0) return 0.0;
  const std::size_t nb = num_leaves(n);
  thread_local std::vector<double> leaf;
  leaf.assign(nb, 0.0);
  for (std::size_t b = 0; b < nb; ++b) {
    double s = 0.0;
    for (std::size_t i = b * kLeaf; i < std::min(n, (b + 1) * kLeaf); ++i) s += values[i];
    leaf[b] = s;
  }
  for (std::size_t stride = 1; stride < nb; stride *= 2)
    for (std::size_t i = 0; i + stride < nb; i += 2 * stride) leaf[i] += leaf[i + stride];
  return leaf[0];
}

Vector pairwise_weighted_sum(const Matrix& columns, std::span<const double> coeffs) {
  const std::size_t n = coeffs.size();
  const Eigen::Index h = columns.rows();
  if (n == 0) return Vector::Zero(h);
  const std::size_t nb = num_leaves(n);
  Matrix leaf = Matrix::Zero(h, static_cast<Eigen::Index>(nb));
  for (std::size_t b = 0; b < nb; ++b) {
    const auto cb = static_cast<Eigen::Index>(b);
    for (std::size_t i = b * kLeaf; i < std::min(n, (b + 1) * kLeaf); ++i) {
      const double c = coeffs[i];
      const auto ci = static_cast<Eigen::Index>(i);
      for (Eigen::Index r = 0; r < h; ++r) leaf(r, cb) += c * columns(r, ci);
    }
  }
  for (std::size_t stride = 1; stride < nb; stride *= 2) {
    for (std::size_t i = 0; i + stride < nb; i += 2 * stride) {
      const auto a = static_cast<Eigen::Index>(i);
      const auto b = static_cast<Eigen::Index>(i + stride);
      for (Eigen::Index r = 0; r < h; ++r) leaf(r, a) += leaf(r, b);
    }
  }
  return leaf.col(0);
}

double dot(const Vector& a, const Vector& b) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(const Vector& v) { return std::sqrt(dot(v, v)); }

Vector multiply(const SparseMatrix& m, const Vector& x) {
  Vector y = Vector::Zero(m.rows());
  for (Eigen::Index r = 0; r < m.outerSize(); ++r) {
    double s = 0.0;
    for (SparseMatrix::InnerIterator it(m, r); it; ++it) s += it.value() * x[it.col()];
    y[r] = s;
  }
  return y;
}

Vector multiply_transposed(const SparseMatrix& m, const Vector& x) {
  Vector y = Vector::Zero(m.cols());
  for (Eigen::Index r = 0; r < m.outerSize(); ++r) {
    const double xr = x[r];
    if (xr == 0.0) continue;
    for (SparseMatrix::InnerIterator it(m, r); it; ++it) y[it.col()] += it.value() * xr;
  }
  return y;
}

Vector multiply(const Matrix& m, const Vector& x) {
  Vector y(m.rows());
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    double s = 0.0;
    for (Eigen::Index c = 0; c < m.cols(); ++c) s += m(r, c) * x[c];
    y[r] = s;
  }
  return y;
}

SparseMatrix to_sparse(const Matrix& dense) {
  SparseMatrix s = dense.sparseView(0.0, 0.0);
  s.prune(0.0, 0.0);
  s.makeCompressed();
  return s;
}

Matrix to_dense(const SparseMatrix& sparse) { return Matrix(sparse); }

SparseMatrix block_diagonal(const SparseMatrix& a, const SparseMatrix& b) {
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(static_cast<std::size_t>(a.nonZeros() + b.nonZeros()));
  for (Eigen::Index r = 0; r < a.outerSize(); ++r)
    for (SparseMatrix::InnerIterator it(a, r); it; ++it) t.emplace_back(it.row(), it.col(), it.value());
  for (Eigen::Index r = 0; r < b.outerSize(); ++r)
    for (SparseMatrix::InnerIterator it(b, r); it; ++it)
      t.emplace_back(a.rows() + it.row(), a.cols() + it.col(), it.value());
  SparseMatrix out(a.rows() + b.rows(), a.cols() + b.cols());
  out.setFromTriplets(t.begin(), t.end());
  out.makeCompressed();
  return out;
}

SparseMatrix sub_block(const SparseMatrix& m, std::size_t r0, std::size_t nr,
                       std::size_t c0, std::size_t nc) {
  std::vector<Eigen::Triplet<double>> t;
  for (std::size_t r = r0; r < r0 + nr; ++r) {
    for (SparseMatrix::InnerIterator it(m, static_cast<Eigen::Index>(r)); it; ++it) {
      const auto c = static_cast<std::size_t>(it.col());
      if (c >= c0 && c < c0 + nc) {
        t.emplace_back(static_cast<int>(r - r0), static_cast<int>(c - c0), it.value());
      }
    }
  }
  SparseMatrix out(static_cast<Eigen::Index>(nr), static_cast<Eigen::Index>(nc));
  out.setFromTriplets(t.begin(), t.end());
  out.makeCompressed();
  return out;
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

bool all_finite(const SparseMatrix& m) {
  for (Eigen::Index i = 0; i < m.nonZeros(); ++i)
    if (!std::isfinite(m.valuePtr()[i])) return false;
  return true;
}

bool all_finite(const Vector& v) { return v.allFinite(); }

}  // namespace lipctx
