// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "lipctx/layers.hpp"
#include "lipctx/measure.hpp"

namespace lipctx {

/// Affine token map x -> A x + b. `blocks` partitions the output coordinates
/// into consecutive groups that are tracked as separate domain balls.
struct Lifting {
  Matrix A;
  Vector b;
  std::vector<std::size_t> blocks;

  Lifting() = default;
  Lifting(Matrix A, Vector b, std::vector<std::size_t> blocks = {});
  static Lifting identity(std::size_t d);

  std::size_t in_dim() const { return static_cast<std::size_t>(A.cols()); }
  std::size_t out_dim() const { return static_cast<std::size_t>(A.rows()); }
  Vector apply(const Vector& x) const;
};

struct Block {
  AttentionLayer attention;
  MlpLayer mlp;
};

/// x -> readout^T T(Q_# mu, Q x) with T the alternating attention/MLP stack.
struct ScalarModel {
  Lifting lifting;
  std::vector<Block> blocks;
  Vector readout;
  DomainBall input_domain;
  double lipschitz_c = 1.0;

  std::size_t input_dim() const { return lifting.in_dim(); }
  std::size_t width() const { return lifting.out_dim(); }
  std::size_t depth() const { return blocks.size(); }
  /// Throws DimensionError unless all layer shapes chain.
  void validate() const;
};

/// domains[0] is the lifted input domain, domains[2l+1] the image of the
/// attention of block l, domains[2l+2] the image of its MLP. valid[l] tells
/// whether the declared domain of attention l contains domains[2l].
struct DomainChain {
  std::vector<ProductDomain> domains;
  std::vector<bool> valid;

  bool all_valid() const;
};

ProductDomain lifting_image(const Lifting& lifting, const DomainBall& input);

std::pair<EmpiricalMeasure, Vector> lift(const ScalarModel& model, const EmpiricalMeasure& mu,
                                         const Vector& x);
/// Runs the stack keeping atom order; every atom attends over the same
/// pre-update measure.
std::pair<EmpiricalMeasure, Vector> forward_tokens(const ScalarModel& model,
                                                   const EmpiricalMeasure& mu, const Vector& x);
/// Evaluates on the canonical atom order, so the result depends only on the
/// measure, not on how its atoms are listed.
double evaluate(const ScalarModel& model, const EmpiricalMeasure& mu, const Vector& x);

/// Precomputes the token trajectory of one measure; each query then costs
/// one pass over the stack. Results equal evaluate() bit for bit.
class ModelEvaluator {
 public:
  ModelEvaluator(const ScalarModel& model, const EmpiricalMeasure& mu);

  Vector final_query(const Vector& x) const;
  double operator()(const Vector& x) const;
  /// Token measure before block l (l = depth() gives the output measure).
  const EmpiricalMeasure& tokens(std::size_t l) const { return tokens_[l]; }

 private:
  const ScalarModel* model_;
  std::vector<EmpiricalMeasure> tokens_;
  std::vector<AttentionContext> contexts_;
};

DomainChain propagate_domains(const ScalarModel& model);
/// Sets every attention domain to its propagated domain and clamps all step
/// sizes, front to back.
ScalarModel clamp_model(const ScalarModel& model);
/// Domains valid and all step sizes within their bounds up to relative tol.
bool is_clamped(const ScalarModel& model, double tol = 1e-12);

struct RandomModelConfig {
  std::size_t dim = 2;
  std::size_t width = 4;
  std::size_t depth = 2;
  double input_radius = 1.0;
  double attention_scale = 1.0;
};

/// Seeded random clamped model with unit readout.
ScalarModel random_model(const RandomModelConfig& cfg, std::uint64_t seed);

}  // namespace lipctx
