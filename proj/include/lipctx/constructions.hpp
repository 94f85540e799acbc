// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "lipctx/critic.hpp"
#include "lipctx/layers.hpp"
#include "lipctx/measure.hpp"
#include "lipctx/transformer.hpp"

namespace lipctx {

enum class LatticeOp { Min, Max };

/// Attention with eta = 0 (A = 0) and MLP with tau = 0. The attention domain
/// is unbounded until clamp_model narrows it.
Block identity_block(std::size_t h);

/// One MLP layer on R^2 whose first output coordinate is min or max of the input.
struct Gate {
  MlpLayer layer;
  Vector readout;
};
Gate minmax_gate(LatticeOp kind);

/// Block-diagonal MLP acting as (F(x), F'(x')). Both inputs are first
/// rescaled to unit step via positive homogeneity of ReLU.
MlpLayer parallel_mlp(const MlpLayer& f, const MlpLayer& g);

/// Two attention layers on R^{h+h'}: blockdiag(A, 0) with eta, then
/// blockdiag(0, A') with eta'. Composed on any coupling of (mu, mu') they
/// return (Gamma(mu, x); Gamma'(mu', x')).
std::pair<AttentionLayer, AttentionLayer> parallel_attention(const AttentionLayer& a,
                                                             const AttentionLayer& b);

struct PairedModelInput {
  Coupling coupling;
  Vector query;
};

/// Query output of the two layers of parallel_attention applied in sequence.
Vector apply_parallel_attention(const std::pair<AttentionLayer, AttentionLayer>& layers,
                                const PairedModelInput& input);

/// Model computing min or max of two models with the same input space and
/// input domain.
ScalarModel lattice_combine(const ScalarModel& a, const ScalarModel& b, LatticeOp kind);
/// Model computing a + b.
ScalarModel sum_models(const ScalarModel& a, const ScalarModel& b);
/// Model computing alpha * m + beta, using an appended constant coordinate.
ScalarModel affine_rescale(const ScalarModel& m, double alpha, double beta);
/// Constant model on the given domain.
ScalarModel constant_model(const DomainBall& domain, double value);

/// Model whose output is C * sum_i w_i critic(y_i) for every query.
ScalarModel kr_integrator(const Critic& critic, double C, const DomainBall& domain);

struct SeparatorOptions {
  TrainConfig train{400, 0.05, 0, 6, 1};
  /// Extra attempts (more iterations, new seeds) when the critic falls short.
  int retries = 3;
  /// Input domain; defaults to a ball around all anchor atoms and queries.
  std::optional<DomainBall> domain;
  double margin = 1.0;
};

/// Model in the (1, C)-Lipschitz class taking value a at (mu, x) and b at
/// (mu', x'). Requires |a - b| < ||x - x'|| + C W1(mu, mu').
ScalarModel separator(const EmpiricalMeasure& mu, const Vector& x, const EmpiricalMeasure& mu2,
                      const Vector& x2, double a, double b, double C, double eps,
                      const SeparatorOptions& opts = {});

struct Sample {
  EmpiricalMeasure measure;
  Vector query;
  double target;
};

struct RswOptions {
  SeparatorOptions separator;
  std::size_t max_samples = 16;
  double eps = 0.05;
};

/// max_i min_{j != i} of pairwise separators; reproduces every target.
ScalarModel rsw_interpolate(const std::vector<Sample>& samples, double C, const RswOptions& opts = {});

}  // namespace lipctx
