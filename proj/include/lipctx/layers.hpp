// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <limits>
#include <vector>

#include "lipctx/linalg.hpp"
#include "lipctx/measure.hpp"

namespace lipctx {

/// Certified upper bound on the largest singular value. The nonzero pattern
/// is split into connected components; single-row or single-column
/// components are measured exactly, the rest by power iteration on M^T M
/// (all-ones and seeded random starts, dense eigen-solve fallback) inflated
/// by (1 + 1e-6).
double spectral_norm(const SparseMatrix& m);
double spectral_norm(const Matrix& m);

inline constexpr double kUnboundedStep = std::numeric_limits<double>::infinity();

/// F(x) = x - tau W^T relu(W x + b).
struct MlpLayer {
  SparseMatrix W;
  Vector b;
  double tau = 0.0;
  double cert_spec_norm = 0.0;

  MlpLayer() = default;
  MlpLayer(const Matrix& W, Vector b, double tau, bool clamp = true);
  MlpLayer(SparseMatrix W, Vector b, double tau, bool clamp = true);

  std::size_t dim() const { return static_cast<std::size_t>(W.cols()); }
  std::size_t width() const { return static_cast<std::size_t>(W.rows()); }
  bool is_identity() const { return tau == 0.0 || W.nonZeros() == 0; }
};

MlpLayer mlp_clamp_step(const MlpLayer& layer);
Vector mlp_forward(const MlpLayer& layer, const Vector& x);
/// Largest tau for which the layer is certified nonexpansive; infinite when W = 0.
double mlp_step_bound(const MlpLayer& layer);

/// Gamma(mu, x) = x - eta sum_i p_i(x) A y_i, softmax weights p_i proportional
/// to w_i exp(<x, A y_i>).
struct AttentionLayer {
  SparseMatrix A;
  double eta = 0.0;
  ProductDomain domain;
  double sup_Ay = 0.0;

  AttentionLayer() = default;
  AttentionLayer(const Matrix& A, double eta, ProductDomain domain, bool clamp = true);
  AttentionLayer(SparseMatrix A, double eta, ProductDomain domain, bool clamp = true);

  std::size_t dim() const { return static_cast<std::size_t>(A.cols()); }
  bool is_identity() const { return eta == 0.0 || A.nonZeros() == 0; }
};

/// ||A c|| + sum_k r_k ||A[:, block k]||, an upper bound on sup ||A y|| over the domain.
double sup_ay_bound(const SparseMatrix& A, const ProductDomain& domain);
/// 2 / sup_Ay^2, or kUnboundedStep when sup_Ay = 0.
double attn_step_bound(const SparseMatrix& A, const ProductDomain& domain);
double attn_step_bound(const Matrix& A, const DomainBall& domain);
AttentionLayer attn_clamp_step(const AttentionLayer& layer);
/// Replaces the declared domain (and sup_Ay) without touching eta.
AttentionLayer with_domain(const AttentionLayer& layer, const ProductDomain& domain);

/// Attention of one layer against a fixed measure. Keys A y_i (restricted to
/// the nonzero rows of A) and log weights are computed once; atoms are
/// checked against the layer domain.
class AttentionContext {
 public:
  AttentionContext(const AttentionLayer& layer, const EmpiricalMeasure& mu, int stage = -1);

  std::vector<double> softmax(const Vector& x) const;
  /// m(x) = sum_i p_i(x) A y_i, the gradient of the potential.
  Vector mean(const Vector& x) const;
  Vector forward(const Vector& x) const;
  double potential(const Vector& x) const;
  Matrix covariance(const Vector& x) const;
  Matrix jacobian(const Vector& x) const;

  /// Applies forward() to every atom (synchronous update) and keeps weights.
  EmpiricalMeasure push(const EmpiricalMeasure& mu) const;

  double eta() const { return eta_; }

 private:
  void check_query(const Vector& x) const;
  // Shifted log-weights l_i - max_j l_j; returns the max.
  double shifted_scores(const Vector& x, std::vector<double>& out) const;

  double eta_;
  ProductDomain domain_;
  std::size_t dim_;
  std::vector<Eigen::Index> rows_;
  Matrix keys_;
  std::vector<double> log_w_;
  int stage_;
};

Vector attn_forward(const AttentionLayer& layer, const EmpiricalMeasure& mu, const Vector& x);
double attn_potential(const AttentionLayer& layer, const EmpiricalMeasure& mu, const Vector& x);
Matrix attn_jacobian(const AttentionLayer& layer, const EmpiricalMeasure& mu, const Vector& x);

/// Sound image of the domain under Gamma(mu, .) for any mu supported in it:
/// same centers, block radii grown by eta times the per-block bound on ||(A y)_j||.
ProductDomain attention_image(const AttentionLayer& layer, const ProductDomain& domain);
/// Sound image under F: centers mapped by F, radii scaled by the Lipschitz
/// bound of each block group. Blocks coupled by a row of W are merged.
ProductDomain mlp_image(const MlpLayer& layer, const ProductDomain& domain);
/// True when every point of `inner` lies in `outer` (up to rounding slack).
bool domain_contains(const ProductDomain& outer, const ProductDomain& inner);

}  // namespace lipctx
