// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>
#include <span>
#include <vector>

namespace lipctx {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Pairwise (tree) summation in fixed index order.
double pairwise_sum(std::span<const double> values);

/// Pairwise summation of coeffs[i] * columns.col(i); same tree as
/// pairwise_sum so results are reproducible bit for bit.
Vector pairwise_weighted_sum(const Matrix& columns, std::span<const double> coeffs);

/// Sequential dot product / norm; avoids the size-dependent vectorized
/// reductions of Eigen so equal data gives equal bits.
double dot(const Vector& a, const Vector& b);
double norm2(const Vector& v);

/// y = M x and y = M^T x, visiting stored nonzeros in row order.
Vector multiply(const SparseMatrix& m, const Vector& x);
Vector multiply_transposed(const SparseMatrix& m, const Vector& x);
Vector multiply(const Matrix& m, const Vector& x);

/// Sparse copy with explicit zeros removed.
SparseMatrix to_sparse(const Matrix& dense);
Matrix to_dense(const SparseMatrix& sparse);

/// Block-diagonal stacking diag(a, b).
SparseMatrix block_diagonal(const SparseMatrix& a, const SparseMatrix& b);

/// Submatrix restricted to rows [r0, r0+nr) and columns [c0, c0+nc).
SparseMatrix sub_block(const SparseMatrix& m, std::size_t r0, std::size_t nr,
                       std::size_t c0, std::size_t nc);

bool all_finite(const Matrix& m);
bool all_finite(const SparseMatrix& m);
bool all_finite(const Vector& v);

}  // namespace lipctx
