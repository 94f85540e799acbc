// SPDX-License-Identifier: Apache-2.0
#include "lipctx/transformer.hpp"

#include <cmath>
#include <numeric>

#include "lipctx/error.hpp"
#include "lipctx/random.hpp"

namespace lipctx {

Lifting::Lifting(Matrix A_, Vector b_, std::vector<std::size_t> blocks_)
    : A(std::move(A_)), b(std::move(b_)), blocks(std::move(blocks_)) {
  if (A.rows() < 1 || A.cols() < 1) throw DimensionError("lifting must have positive dimensions");
  if (b.size() != A.rows()) throw DimensionError("lifting bias length does not match A rows");
  if (!A.allFinite() || !b.allFinite()) throw Error("lifting parameters must be finite");
  if (blocks.empty()) blocks.push_back(out_dim());
  if (std::accumulate(blocks.begin(), blocks.end(), std::size_t{0}) != out_dim())
    throw DimensionError("lifting blocks do not partition the output");
  for (std::size_t s : blocks)
    if (s == 0) throw DimensionError("empty lifting block");
}

Lifting Lifting::identity(std::size_t d) {
  const auto n = static_cast<Eigen::Index>(d);
  return Lifting(Matrix::Identity(n, n), Vector::Zero(n));
}

Vector Lifting::apply(const Vector& x) const {
  if (static_cast<std::size_t>(x.size()) != in_dim()) throw DimensionError("lifting input dimension mismatch");
  Vector y = multiply(A, x);
  for (Eigen::Index i = 0; i < y.size(); ++i) y[i] += b[i];
  return y;
}

void ScalarModel::validate() const {
  const std::size_t h = width();
  if (static_cast<std::size_t>(readout.size()) != h) throw DimensionError("readout length does not match width");
  if (input_domain.dim() != input_dim()) throw DimensionError("input domain dimension mismatch");
  for (const Block& blk : blocks) {
    if (blk.attention.dim() != h || blk.mlp.dim() != h) throw DimensionError("block width mismatch");
  }
  if (!readout.allFinite()) throw Error("readout must be finite");
  if (!(lipschitz_c > 0.0)) throw Error("lipschitz_c must be positive");
}

bool DomainChain::all_valid() const {
  for (bool v : valid)
    if (!v) return false;
  return true;
}

ProductDomain lifting_image(const Lifting& lifting, const DomainBall& input) {
  const Vector c = lifting.apply(input.center);
  std::vector<DomainBall> out;
  std::size_t off = 0;
  for (std::size_t size : lifting.blocks) {
    const auto o = static_cast<Eigen::Index>(off);
    const auto s = static_cast<Eigen::Index>(size);
    double r = 0.0;
    if (input.radius != 0.0) {
      const Matrix sub = lifting.A.middleRows(o, s);
      if ((sub.array() != 0.0).any()) r = input.radius * spectral_norm(sub);
    }
    out.push_back({c.segment(o, s), r});
    off += size;
  }
  return ProductDomain(std::move(out));
}

namespace {

void check_input(const ScalarModel& model, const EmpiricalMeasure& mu, const Vector& x) {
  if (mu.dim() != model.input_dim() || static_cast<std::size_t>(x.size()) != model.input_dim())
    throw DimensionError("input dimension does not match the model");
  if (!model.input_domain.contains(x)) throw DomainError("query outside the input domain", 0);
  for (std::size_t i = 0; i < mu.size(); ++i)
    if (!model.input_domain.contains(mu.point(i))) throw DomainError("atom outside the input domain", 0);
}

EmpiricalMeasure lift_measure(const Lifting& lifting, const EmpiricalMeasure& mu) {
  Matrix pts(static_cast<Eigen::Index>(lifting.out_dim()), static_cast<Eigen::Index>(mu.size()));
  for (std::size_t i = 0; i < mu.size(); ++i) pts.col(static_cast<Eigen::Index>(i)) = lifting.apply(mu.point(i));
  return EmpiricalMeasure::from_normalized(std::move(pts), mu.weights());
}

EmpiricalMeasure push_mlp(const MlpLayer& layer, const EmpiricalMeasure& mu) {
  if (layer.tau == 0.0) return mu;
  Matrix pts(mu.points().rows(), mu.points().cols());
  for (Eigen::Index i = 0; i < pts.cols(); ++i) pts.col(i) = mlp_forward(layer, mu.points().col(i));
  return EmpiricalMeasure::from_normalized(std::move(pts), mu.weights());
}

}  // namespace

std::pair<EmpiricalMeasure, Vector> lift(const ScalarModel& model, const EmpiricalMeasure& mu, const Vector& x) {
  model.validate();
  check_input(model, mu, x);
  return {lift_measure(model.lifting, mu), model.lifting.apply(x)};
}

std::pair<EmpiricalMeasure, Vector> forward_tokens(const ScalarModel& model, const EmpiricalMeasure& mu,
                                                   const Vector& x) {
  auto [tokens, q] = lift(model, mu, x);
  for (std::size_t l = 0; l < model.blocks.size(); ++l) {
    const Block& blk = model.blocks[l];
    const AttentionContext ctx(blk.attention, tokens, static_cast<int>(2 * l + 1));
    q = ctx.forward(q);
    tokens = ctx.push(tokens);
    q = mlp_forward(blk.mlp, q);
    tokens = push_mlp(blk.mlp, tokens);
  }
  return {std::move(tokens), std::move(q)};
}

double evaluate(const ScalarModel& model, const EmpiricalMeasure& mu, const Vector& x) {
  return ModelEvaluator(model, mu)(x);
}

ModelEvaluator::ModelEvaluator(const ScalarModel& model, const EmpiricalMeasure& mu) : model_(&model) {
  model.validate();
  if (mu.dim() != model.input_dim()) throw DimensionError("input dimension does not match the model");
  for (std::size_t i = 0; i < mu.size(); ++i)
    if (!model.input_domain.contains(mu.point(i))) throw DomainError("atom outside the input domain", 0);
  tokens_.reserve(model.blocks.size() + 1);
  contexts_.reserve(model.blocks.size());
  tokens_.push_back(lift_measure(model.lifting, mu.canonical()));
  for (std::size_t l = 0; l < model.blocks.size(); ++l) {
    const Block& blk = model.blocks[l];
    contexts_.emplace_back(blk.attention, tokens_.back(), static_cast<int>(2 * l + 1));
    tokens_.push_back(push_mlp(blk.mlp, contexts_.back().push(tokens_.back())));
  }
}

Vector ModelEvaluator::final_query(const Vector& x) const {
  if (static_cast<std::size_t>(x.size()) != model_->input_dim())
    throw DimensionError("input dimension does not match the model");
  if (!model_->input_domain.contains(x)) throw DomainError("query outside the input domain", 0);
  Vector q = model_->lifting.apply(x);
  for (std::size_t l = 0; l < contexts_.size(); ++l) {
    q = contexts_[l].forward(q);
    q = mlp_forward(model_->blocks[l].mlp, q);
  }
  return q;
}

double ModelEvaluator::operator()(const Vector& x) const { return dot(model_->readout, final_query(x)); }

DomainChain propagate_domains(const ScalarModel& model) {
  model.validate();
  DomainChain chain;
  chain.domains.push_back(lifting_image(model.lifting, model.input_domain));
  for (const Block& blk : model.blocks) {
    const ProductDomain& d = chain.domains.back();
    chain.valid.push_back(domain_contains(blk.attention.domain, d));
    ProductDomain a = attention_image(blk.attention, d);
    chain.domains.push_back(a);
    chain.domains.push_back(mlp_image(blk.mlp, a));
  }
  return chain;
}

ScalarModel clamp_model(const ScalarModel& model) {
  model.validate();
  ScalarModel out = model;
  ProductDomain d = lifting_image(out.lifting, out.input_domain);
  for (Block& blk : out.blocks) {
    blk.attention = attn_clamp_step(with_domain(blk.attention, d));
    d = attention_image(blk.attention, d);
    blk.mlp = mlp_clamp_step(blk.mlp);
    d = mlp_image(blk.mlp, d);
  }
  return out;
}

bool is_clamped(const ScalarModel& model, double tol) {
  if (!propagate_domains(model).all_valid()) return false;
  for (const Block& blk : model.blocks) {
    const AttentionLayer& a = blk.attention;
    if (!(a.eta >= 0.0)) return false;
    const double s = sup_ay_bound(a.A, a.domain);
    if (s > 0.0 && a.eta > (2.0 / (s * s)) * (1.0 + tol)) return false;
    const MlpLayer& m = blk.mlp;
    if (!(m.tau >= 0.0)) return false;
    const double c = spectral_norm(m.W);
    if (c > 0.0 && m.tau > (2.0 / (c * c)) * (1.0 + tol)) return false;
  }
  return true;
}

ScalarModel random_model(const RandomModelConfig& cfg, std::uint64_t seed) {
  if (cfg.dim < 1 || cfg.width < 1) throw DimensionError("random model needs positive dimensions");
  Rng rng(seed);
  const auto d = static_cast<Eigen::Index>(cfg.dim);
  const auto h = static_cast<Eigen::Index>(cfg.width);
  auto normal_matrix = [&rng](Eigen::Index r, Eigen::Index c) {
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal();
    return m;
  };

  ScalarModel model;
  Matrix aq = normal_matrix(h, d);
  aq /= spectral_norm(aq);
  Vector bq = 0.1 * random_normal_vector(rng, cfg.width);
  model.lifting = Lifting(std::move(aq), std::move(bq));
  model.input_domain = {Vector::Zero(d), cfg.input_radius};

  ProductDomain dom = lifting_image(model.lifting, model.input_domain);
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    const Matrix a = normal_matrix(h, h) * (cfg.attention_scale / std::sqrt(static_cast<double>(h)));
    const double frac_eta = rng.uniform(0.3, 1.3);
    const AttentionLayer probe(a, 0.0, dom, false);
    const double eta_max = attn_step_bound(probe.A, dom);
    const double eta = std::isfinite(eta_max) ? frac_eta * eta_max : 1.0;
    AttentionLayer attn(a, eta, dom);
    dom = attention_image(attn, dom);

    const Matrix w = normal_matrix(h, h) / std::sqrt(static_cast<double>(h));
    const Vector b = 0.3 * random_normal_vector(rng, cfg.width);
    const double c = spectral_norm(w);
    const double frac_tau = rng.uniform(0.3, 1.3);
    MlpLayer mlp(w, b, c > 0.0 ? frac_tau * 2.0 / (c * c) : 0.0);
    dom = mlp_image(mlp, dom);
    model.blocks.push_back({std::move(attn), std::move(mlp)});
  }
  Vector v = random_normal_vector(rng, cfg.width);
  model.readout = v / norm2(v);
  return model;
}

}  // namespace lipctx
