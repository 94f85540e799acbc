// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lipctx/layers.hpp"
#include "lipctx/measure.hpp"
#include "lipctx/random.hpp"
#include "lipctx/transformer.hpp"

namespace lipctx {

/// Constants of the context-Lipschitz estimate for one attention layer on
/// its declared domain. R bounds ||y|| over the domain.
struct ContextConstants {
  double R = 0.0;
  double B = 0.0;
  double L_f = 0.0;
  double Z_lo = 1.0;
  double Z_hi = 1.0;
  /// ||Gamma(mu, x) - Gamma(nu, x)|| <= C1 W1(mu, nu).
  double C1 = 0.0;
  /// C1 overflowed and was capped at the largest double.
  bool vacuous = false;
};

ContextConstants context_lipschitz_bound(const AttentionLayer& layer);

/// ||v|| ||A_q|| (prod_l (1 + C1_l) - 1): bounds |f(mu, x) - f(nu, x)| / W1(mu, nu)
/// for a clamped model. Capped at the largest double when it overflows.
double model_context_bound(const ScalarModel& model, bool* vacuous = nullptr);

struct CertCheck {
  std::string name;
  double stat = 0.0;
  double bound = 0.0;
  bool pass = true;
  std::size_t n = 0;
  std::uint64_t seed = 0;
};

/// Input attaining the largest ratio of a check.
struct Witness {
  std::string check;
  std::vector<EmpiricalMeasure> measures;
  std::vector<Vector> queries;
  double ratio = 0.0;
};

struct CheckResult {
  CertCheck check;
  std::optional<Witness> witness;
};

/// Max of |f(mu, x1) - f(mu, x2)| / ||x1 - x2|| over seeded random measures
/// (1 to 32 uniform atoms in the input ball) and query pairs. Throws
/// PreconditionError for unclamped models.
CheckResult empirical_query_lipschitz(const ScalarModel& model, std::size_t n_measures, std::size_t n_pairs,
                                      std::uint64_t seed);

/// Max of |f(mu, x) - f(nu, x)| / W1(mu, nu) against model_context_bound.
CheckResult empirical_context_lipschitz(const ScalarModel& model, std::size_t n_anchors, std::size_t n_pairs,
                                        std::uint64_t seed);

/// Max of ||Gamma(mu, x) - Gamma(nu, x)|| / W1(mu, nu) over random triples in
/// the layer domain, against C1.
CheckResult empirical_layer_context_lipschitz(const AttentionLayer& layer, std::size_t n_triples,
                                              std::uint64_t seed);

/// Max of |f(mu, x) - f(nu, y)| / (||x - y|| + C W1(mu, nu)) over pairs of
/// probes. Probes are the anchors and jittered copies of them kept inside the
/// input ball.
CheckResult empirical_joint_lipschitz(const ScalarModel& model, double C,
                                      const std::vector<std::pair<EmpiricalMeasure, Vector>>& anchors,
                                      std::size_t n_pairs, std::uint64_t seed, double bound = 1.0 + 1e-9);

/// Largest relative entrywise error |J - J_fd| / max(1, |J|) between
/// attn_jacobian and central differences of attn_forward.
double jacobian_fd_check(const AttentionLayer& layer, const EmpiricalMeasure& mu, const Vector& x);

/// Largest relative error between the gradient read off the update,
/// (x - Gamma(mu, x)) / eta, and central differences of the potential. With
/// eta = 0 or use_mean set the softmax mean m(x) is compared instead.
double potential_grad_check(const AttentionLayer& layer, const EmpiricalMeasure& mu, const Vector& x,
                            bool use_mean = false);

struct CertifyOptions {
  std::size_t n_measures = 20;
  std::size_t n_pairs = 500;
  std::size_t n_anchors = 10;
  std::size_t n_context_pairs = 50;
  std::uint64_t seed = 0;
};

struct CertReport {
  std::string model_hash;
  std::vector<CertCheck> checks;
  std::optional<Witness> witness;

  bool all_pass() const;
};

/// Hex SHA-256 of the serialized model.
std::string model_hash(const ScalarModel& model);

/// Domain chain, query and context checks for a clamped model.
CertReport certify_model(const ScalarModel& model, const CertifyOptions& opts = {});

/// Random point of a product of balls (each block uniform in its ball).
Vector sample_in_domain(Rng& rng, const ProductDomain& domain);
/// n atoms uniform in the ball with uniform weights.
EmpiricalMeasure random_measure(Rng& rng, const DomainBall& ball, std::size_t n);

/// Worker count from LIPCTX_THREADS, else hardware concurrency.
std::size_t worker_threads();

}  // namespace lipctx
