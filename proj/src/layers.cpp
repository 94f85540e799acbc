// SPDX-License-Identifier: Apache-2.0
#include "lipctx/layers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Eigenvalues>

#include "lipctx/error.hpp"
#include "lipctx/random.hpp"

namespace lipctx {

namespace {

constexpr double kNormInflation = 1.0 + 1e-6;
constexpr int kPowerIterations = 500;
constexpr double kPowerResidual = 1e-13;

struct UnionFind {
  std::vector<std::size_t> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

// Rayleigh-quotient power iteration on M^T M; returns (sigma, converged).
std::pair<double, bool> power_iteration(const Matrix& m, Vector v) {
  double nv = norm2(v);
  if (nv == 0.0) return {0.0, false};
  v /= nv;
  const Matrix mt = m.transpose();
  double rho = 0.0;
  for (int it = 0; it < kPowerIterations; ++it) {
    const Vector w = multiply(mt, multiply(m, v));
    rho = dot(v, w);
    const double res = norm2(w - rho * v);
    if (rho > 0.0 && res <= kPowerResidual * rho) return {std::sqrt(rho), true};
    const double nw = norm2(w);
    if (nw == 0.0) return {0.0, false};
    v = w / nw;
  }
  return {std::sqrt(std::max(rho, 0.0)), false};
}

double component_norm(const Matrix& m) {
  if (m.rows() == 1 || m.cols() == 1) {
    double s = 0.0;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) s += m(r, c) * m(r, c);
    return std::sqrt(s);
  }
  const auto [a, ca] = power_iteration(m, Vector::Ones(m.cols()));
  Rng rng(0x9d2c5680u);
  const auto [b, cb] = power_iteration(m, random_normal_vector(rng, static_cast<std::size_t>(m.cols())));
  double sigma = std::max(a, b);
  if (!ca || !cb) {
    const Matrix g = m.transpose() * m;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(g, Eigen::EigenvaluesOnly);
    sigma = std::max(sigma, std::sqrt(std::max(0.0, eig.eigenvalues().maxCoeff())));
  }
  return sigma * kNormInflation;
}

double segment_norm(const Vector& v, std::size_t off, std::size_t len) {
  double s = 0.0;
  for (std::size_t i = off; i < off + len; ++i) s += v[static_cast<Eigen::Index>(i)] * v[static_cast<Eigen::Index>(i)];
  return std::sqrt(s);
}

std::vector<std::size_t> column_blocks(const ProductDomain& domain) {
  std::vector<std::size_t> out(domain.dim());
  for (std::size_t k = 0; k < domain.num_blocks(); ++k)
    for (std::size_t c = domain.offset(k); c < domain.offset(k) + domain.block_size(k); ++c) out[c] = k;
  return out;
}

// Sorted distinct column blocks touched by the nonzeros of rows [r0, r0+nr).
std::vector<std::size_t> touched_blocks(const SparseMatrix& a, std::size_t r0, std::size_t nr,
                                        const std::vector<std::size_t>& col_block) {
  std::vector<std::size_t> ks;
  for (std::size_t r = r0; r < r0 + nr; ++r)
    for (SparseMatrix::InnerIterator it(a, static_cast<Eigen::Index>(r)); it; ++it)
      ks.push_back(col_block[static_cast<std::size_t>(it.col())]);
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  return ks;
}

void check_finite_step(double step, const char* name) {
  if (!std::isfinite(step)) throw Error(std::string(name) + " must be finite");
}

}  // namespace

double spectral_norm(const SparseMatrix& m) {
  if (!all_finite(m)) throw Error("spectral_norm of a matrix with non-finite entries");
  const auto rows = static_cast<std::size_t>(m.rows());
  const auto cols = static_cast<std::size_t>(m.cols());
  UnionFind uf(rows + cols);
  for (Eigen::Index r = 0; r < m.outerSize(); ++r)
    for (SparseMatrix::InnerIterator it(m, r); it; ++it)
      if (it.value() != 0.0) uf.unite(static_cast<std::size_t>(r), rows + static_cast<std::size_t>(it.col()));

  // Group nonzero rows/columns by component root, in index order.
  std::vector<std::vector<std::size_t>> comp_rows(rows + cols);
  std::vector<std::vector<std::size_t>> comp_cols(rows + cols);
  std::vector<bool> row_used(rows, false);
  std::vector<bool> col_used(cols, false);
  for (Eigen::Index r = 0; r < m.outerSize(); ++r) {
    for (SparseMatrix::InnerIterator it(m, r); it; ++it) {
      if (it.value() == 0.0) continue;
      row_used[static_cast<std::size_t>(r)] = true;
      col_used[static_cast<std::size_t>(it.col())] = true;
    }
  }
  for (std::size_t r = 0; r < rows; ++r)
    if (row_used[r]) comp_rows[uf.find(r)].push_back(r);
  for (std::size_t c = 0; c < cols; ++c)
    if (col_used[c]) comp_cols[uf.find(rows + c)].push_back(c);

  std::vector<Eigen::Index> col_pos(cols, -1);
  double best = 0.0;
  for (std::size_t root = 0; root < rows + cols; ++root) {
    if (comp_rows[root].empty()) continue;
    const auto& rs = comp_rows[root];
    const auto& cs = comp_cols[root];
    for (std::size_t k = 0; k < cs.size(); ++k) col_pos[cs[k]] = static_cast<Eigen::Index>(k);
    Matrix sub = Matrix::Zero(static_cast<Eigen::Index>(rs.size()), static_cast<Eigen::Index>(cs.size()));
    for (std::size_t k = 0; k < rs.size(); ++k)
      for (SparseMatrix::InnerIterator it(m, static_cast<Eigen::Index>(rs[k])); it; ++it)
        sub(static_cast<Eigen::Index>(k), col_pos[static_cast<std::size_t>(it.col())]) = it.value();
    best = std::max(best, component_norm(sub));
  }
  return best;
}

double spectral_norm(const Matrix& m) {
  if (!m.allFinite()) throw Error("spectral_norm of a matrix with non-finite entries");
  return spectral_norm(to_sparse(m));
}

MlpLayer::MlpLayer(const Matrix& W, Vector b, double tau, bool clamp)
    : MlpLayer(to_sparse(W), std::move(b), tau, clamp) {}

MlpLayer::MlpLayer(SparseMatrix W_, Vector b_, double tau_, bool clamp)
    : W(std::move(W_)), b(std::move(b_)), tau(tau_) {
  W.prune(0.0, 0.0);
  W.makeCompressed();
  if (b.size() != W.rows()) throw DimensionError("mlp bias length does not match W rows");
  if (!all_finite(W) || !all_finite(b)) throw Error("mlp parameters must be finite");
  check_finite_step(tau, "tau");
  cert_spec_norm = spectral_norm(W);
  if (clamp) *this = mlp_clamp_step(*this);
}

MlpLayer mlp_clamp_step(const MlpLayer& layer) {
  MlpLayer out = layer;
  out.cert_spec_norm = spectral_norm(out.W);
  if (out.cert_spec_norm > 0.0) out.tau = std::min(out.tau, 2.0 / (out.cert_spec_norm * out.cert_spec_norm));
  out.tau = std::max(out.tau, 0.0);
  return out;
}

double mlp_step_bound(const MlpLayer& layer) {
  if (layer.cert_spec_norm == 0.0) return kUnboundedStep;
  return 2.0 / (layer.cert_spec_norm * layer.cert_spec_norm);
}

Vector mlp_forward(const MlpLayer& layer, const Vector& x) {
  if (static_cast<std::size_t>(x.size()) != layer.dim()) throw DimensionError("mlp input dimension mismatch");
  if (layer.tau == 0.0) return x;
  Vector z = multiply(layer.W, x);
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = std::max(z[i] + layer.b[i], 0.0);
  const Vector g = multiply_transposed(layer.W, z);
  Vector out(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) out[i] = x[i] - layer.tau * g[i];
  return out;
}

AttentionLayer::AttentionLayer(const Matrix& A_, double eta_, ProductDomain domain_, bool clamp)
    : AttentionLayer(to_sparse(A_), eta_, std::move(domain_), clamp) {}

AttentionLayer::AttentionLayer(SparseMatrix A_, double eta_, ProductDomain domain_, bool clamp)
    : A(std::move(A_)), eta(eta_), domain(std::move(domain_)) {
  A.prune(0.0, 0.0);
  A.makeCompressed();
  if (A.rows() != A.cols()) throw DimensionError("attention matrix must be square");
  if (domain.dim() != dim()) throw DimensionError("attention domain dimension mismatch");
  if (!all_finite(A)) throw Error("attention parameters must be finite");
  check_finite_step(eta, "eta");
  sup_Ay = sup_ay_bound(A, domain);
  if (clamp) *this = attn_clamp_step(*this);
}

double sup_ay_bound(const SparseMatrix& A, const ProductDomain& domain) {
  if (static_cast<std::size_t>(A.cols()) != domain.dim()) throw DimensionError("domain dimension mismatch");
  if (A.nonZeros() == 0) return 0.0;
  double s = norm2(multiply(A, domain.center()));
  const std::vector<std::size_t> col_block = column_blocks(domain);
  for (std::size_t k : touched_blocks(A, 0, static_cast<std::size_t>(A.rows()), col_block)) {
    const double r = domain.block(k).radius;
    if (r == 0.0) continue;
    s += r * spectral_norm(sub_block(A, 0, static_cast<std::size_t>(A.rows()), domain.offset(k), domain.block_size(k)));
  }
  return s;
}

double attn_step_bound(const SparseMatrix& A, const ProductDomain& domain) {
  const double s = sup_ay_bound(A, domain);
  return s > 0.0 ? 2.0 / (s * s) : kUnboundedStep;
}

double attn_step_bound(const Matrix& A, const DomainBall& domain) {
  return attn_step_bound(to_sparse(A), ProductDomain(domain));
}

AttentionLayer attn_clamp_step(const AttentionLayer& layer) {
  AttentionLayer out = layer;
  out.sup_Ay = sup_ay_bound(out.A, out.domain);
  if (out.sup_Ay > 0.0) out.eta = std::min(out.eta, 2.0 / (out.sup_Ay * out.sup_Ay));
  out.eta = std::max(out.eta, 0.0);
  return out;
}

AttentionLayer with_domain(const AttentionLayer& layer, const ProductDomain& domain) {
  if (domain.dim() != layer.dim()) throw DimensionError("attention domain dimension mismatch");
  AttentionLayer out = layer;
  out.domain = domain;
  out.sup_Ay = sup_ay_bound(out.A, out.domain);
  return out;
}

AttentionContext::AttentionContext(const AttentionLayer& layer, const EmpiricalMeasure& mu, int stage)
    : eta_(layer.eta), domain_(layer.domain), dim_(layer.dim()), stage_(stage) {
  if (mu.dim() != layer.dim()) throw DimensionError("measure dimension does not match attention layer");
  for (Eigen::Index r = 0; r < layer.A.outerSize(); ++r)
    if (SparseMatrix::InnerIterator(layer.A, r)) rows_.push_back(r);
  const auto n = static_cast<Eigen::Index>(mu.size());
  keys_.resize(static_cast<Eigen::Index>(rows_.size()), n);
  log_w_.resize(mu.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vector y = mu.points().col(i);
    if (!domain_.contains(y)) throw DomainError("atom outside the attention domain", stage_);
    for (std::size_t a = 0; a < rows_.size(); ++a) {
      double s = 0.0;
      for (SparseMatrix::InnerIterator it(layer.A, rows_[a]); it; ++it) s += it.value() * y[it.col()];
      keys_(static_cast<Eigen::Index>(a), i) = s;
    }
    const double w = mu.weight(static_cast<std::size_t>(i));
    log_w_[static_cast<std::size_t>(i)] = w > 0.0 ? std::log(w) : -std::numeric_limits<double>::infinity();
  }
}

void AttentionContext::check_query(const Vector& x) const {
  if (static_cast<std::size_t>(x.size()) != dim_) throw DimensionError("query dimension mismatch");
  if (!domain_.contains(x)) throw DomainError("query outside the attention domain", stage_);
}

double AttentionContext::shifted_scores(const Vector& x, std::vector<double>& out) const {
  const auto k = static_cast<Eigen::Index>(rows_.size());
  out.resize(log_w_.size());
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < log_w_.size(); ++i) {
    double s = 0.0;
    const auto c = static_cast<Eigen::Index>(i);
    for (Eigen::Index a = 0; a < k; ++a) s += x[rows_[static_cast<std::size_t>(a)]] * keys_(a, c);
    out[i] = s + log_w_[i];
    top = std::max(top, out[i]);
  }
  for (double& v : out) v -= top;
  return top;
}

std::vector<double> AttentionContext::softmax(const Vector& x) const {
  check_query(x);
  std::vector<double> p;
  shifted_scores(x, p);
  for (double& v : p) v = std::exp(v);
  const double z = pairwise_sum(p);
  for (double& v : p) v /= z;
  return p;
}

Vector AttentionContext::mean(const Vector& x) const {
  const std::vector<double> p = softmax(x);
  const Vector m = pairwise_weighted_sum(keys_, p);
  Vector full = Vector::Zero(static_cast<Eigen::Index>(dim_));
  for (std::size_t a = 0; a < rows_.size(); ++a) full[rows_[a]] = m[static_cast<Eigen::Index>(a)];
  return full;
}

Vector AttentionContext::forward(const Vector& x) const {
  if (eta_ == 0.0 || rows_.empty()) {
    check_query(x);
    return x;
  }
  const std::vector<double> p = softmax(x);
  const Vector m = pairwise_weighted_sum(keys_, p);
  Vector out = x;
  for (std::size_t a = 0; a < rows_.size(); ++a) out[rows_[a]] = x[rows_[a]] - eta_ * m[static_cast<Eigen::Index>(a)];
  return out;
}

double AttentionContext::potential(const Vector& x) const {
  check_query(x);
  std::vector<double> e;
  const double top = shifted_scores(x, e);
  for (double& v : e) v = std::exp(v);
  return top + std::log(pairwise_sum(e));
}

Matrix AttentionContext::covariance(const Vector& x) const {
  const std::vector<double> p = softmax(x);
  const Vector m = pairwise_weighted_sum(keys_, p);
  const auto k = static_cast<Eigen::Index>(rows_.size());
  const Matrix d = keys_.colwise() - m;
  Matrix cov = Matrix::Zero(static_cast<Eigen::Index>(dim_), static_cast<Eigen::Index>(dim_));
  std::vector<double> terms(p.size());
  for (Eigen::Index a = 0; a < k; ++a) {
    for (Eigen::Index b = 0; b <= a; ++b) {
      for (std::size_t i = 0; i < p.size(); ++i) {
        const auto c = static_cast<Eigen::Index>(i);
        terms[i] = p[i] * d(a, c) * d(b, c);
      }
      const Eigen::Index ra = rows_[static_cast<std::size_t>(a)];
      const Eigen::Index rb = rows_[static_cast<std::size_t>(b)];
      cov(ra, rb) = cov(rb, ra) = pairwise_sum(terms);
    }
  }
  return cov;
}

Matrix AttentionContext::jacobian(const Vector& x) const {
  const auto h = static_cast<Eigen::Index>(dim_);
  if (eta_ == 0.0 || rows_.empty()) {
    check_query(x);
    return Matrix::Identity(h, h);
  }
  return Matrix::Identity(h, h) - eta_ * covariance(x);
}

EmpiricalMeasure AttentionContext::push(const EmpiricalMeasure& mu) const {
  if (eta_ == 0.0 || rows_.empty()) return mu;
  Matrix out(mu.points().rows(), mu.points().cols());
  for (Eigen::Index i = 0; i < mu.points().cols(); ++i) out.col(i) = forward(mu.points().col(i));
  return EmpiricalMeasure::from_normalized(std::move(out), mu.weights());
}

Vector attn_forward(const AttentionLayer& layer, const EmpiricalMeasure& mu, const Vector& x) {
  return AttentionContext(layer, mu).forward(x);
}

double attn_potential(const AttentionLayer& layer, const EmpiricalMeasure& mu, const Vector& x) {
  return AttentionContext(layer, mu).potential(x);
}

Matrix attn_jacobian(const AttentionLayer& layer, const EmpiricalMeasure& mu, const Vector& x) {
  return AttentionContext(layer, mu).jacobian(x);
}

ProductDomain attention_image(const AttentionLayer& layer, const ProductDomain& domain) {
  if (domain.dim() != layer.dim()) throw DimensionError("domain dimension mismatch");
  if (layer.is_identity()) return domain;
  const Vector ac = multiply(layer.A, domain.center());
  const std::vector<std::size_t> col_block = column_blocks(domain);
  std::vector<DomainBall> blocks;
  blocks.reserve(domain.num_blocks());
  for (std::size_t j = 0; j < domain.num_blocks(); ++j) {
    const std::size_t rj = domain.offset(j);
    const std::size_t nj = domain.block_size(j);
    double s = segment_norm(ac, rj, nj);
    for (std::size_t k : touched_blocks(layer.A, rj, nj, col_block)) {
      const double r = domain.block(k).radius;
      if (r == 0.0) continue;
      s += r * spectral_norm(sub_block(layer.A, rj, nj, domain.offset(k), domain.block_size(k)));
    }
    blocks.push_back({domain.block(j).center, domain.block(j).radius + layer.eta * s});
  }
  return ProductDomain(std::move(blocks));
}

ProductDomain mlp_image(const MlpLayer& layer, const ProductDomain& domain) {
  if (domain.dim() != layer.dim()) throw DimensionError("domain dimension mismatch");
  if (layer.is_identity()) return domain;
  const std::size_t nb = domain.num_blocks();
  const std::vector<std::size_t> col_block = column_blocks(domain);

  // link[k]: blocks k and k+1 belong to one group; rows bucketed by the
  // first block they touch.
  std::vector<bool> link(nb, false);
  std::vector<std::vector<Eigen::Index>> rows_from(nb);
  for (Eigen::Index r = 0; r < layer.W.outerSize(); ++r) {
    std::size_t lo = SIZE_MAX;
    std::size_t hi = 0;
    for (SparseMatrix::InnerIterator it(layer.W, r); it; ++it) {
      const std::size_t k = col_block[static_cast<std::size_t>(it.col())];
      lo = std::min(lo, k);
      hi = std::max(hi, k);
    }
    if (lo == SIZE_MAX) continue;
    rows_from[lo].push_back(r);
    for (std::size_t k = lo; k < hi; ++k) link[k] = true;
  }

  const Vector fc = mlp_forward(layer, domain.center());
  std::vector<DomainBall> blocks;
  std::size_t g0 = 0;
  while (g0 < nb) {
    std::size_t g1 = g0;
    while (g1 + 1 < nb && link[g1]) ++g1;
    const std::size_t c0 = domain.offset(g0);
    const std::size_t cn = domain.offset(g1) + domain.block_size(g1) - c0;
    std::vector<Eigen::Triplet<double>> t;
    Eigen::Index nrows = 0;
    for (std::size_t k = g0; k <= g1; ++k) {
      for (Eigen::Index r : rows_from[k]) {
        for (SparseMatrix::InnerIterator it(layer.W, r); it; ++it)
          t.emplace_back(nrows, static_cast<Eigen::Index>(static_cast<std::size_t>(it.col()) - c0), it.value());
        ++nrows;
      }
    }
    double lip = 1.0;
    if (nrows > 0) {
      SparseMatrix sub(nrows, static_cast<Eigen::Index>(cn));
      sub.setFromTriplets(t.begin(), t.end());
      const double c = spectral_norm(sub);
      const double q = layer.tau * c * c;
      if (q > 2.0 * (1.0 + 1e-12)) lip = q - 1.0;
    }
    const Vector center = fc.segment(static_cast<Eigen::Index>(c0), static_cast<Eigen::Index>(cn));
    if (g0 == g1) {
      blocks.push_back({center, domain.block(g0).radius * lip});
    } else {
      double s = 0.0;
      for (std::size_t k = g0; k <= g1; ++k) s += domain.block(k).radius * domain.block(k).radius;
      blocks.push_back({center, std::sqrt(s) * lip});
    }
    g0 = g1 + 1;
  }
  return ProductDomain(std::move(blocks));
}

bool domain_contains(const ProductDomain& outer, const ProductDomain& inner) {
  if (outer.dim() != inner.dim()) return false;
  std::size_t k = 0;
  for (std::size_t j = 0; j < outer.num_blocks(); ++j) {
    const std::size_t lo = outer.offset(j);
    const std::size_t hi = lo + outer.block_size(j);
    if (k >= inner.num_blocks() || inner.offset(k) != lo) return false;
    double r2 = 0.0;
    double d2 = 0.0;
    while (k < inner.num_blocks() && inner.offset(k) < hi) {
      const std::size_t end = inner.offset(k) + inner.block_size(k);
      if (end > hi) return false;
      const DomainBall& b = inner.block(k);
      const Vector diff = b.center - outer.block(j).center.segment(
                                         static_cast<Eigen::Index>(inner.offset(k) - lo),
                                         static_cast<Eigen::Index>(inner.block_size(k)));
      d2 += dot(diff, diff);
      r2 += b.radius * b.radius;
      ++k;
    }
    const double r = outer.block(j).radius;
    if (!(std::sqrt(d2) + std::sqrt(r2) <= r + 1e-9 * (1.0 + r))) return false;
  }
  return k == inner.num_blocks();
}

}  // namespace lipctx
