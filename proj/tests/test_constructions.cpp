// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "lipctx/certify.hpp"
#include "lipctx/constructions.hpp"
#include "lipctx/error.hpp"
#include "lipctx/random.hpp"
#include "lipctx/transport.hpp"

using namespace lipctx;

namespace {

AttentionLayer random_attention(Rng& rng, std::size_t h, double radius, double frac) {
  Matrix a(h, h);
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) a(i, j) = rng.normal() / std::sqrt(double(h));
  const DomainBall ball{Vector::Zero(h), radius};
  return AttentionLayer(a, frac * attn_step_bound(a, ball), ProductDomain(ball));
}

MlpLayer random_mlp(Rng& rng, std::size_t k, std::size_t h) {
  Matrix w(k, h);
  for (Eigen::Index i = 0; i < w.rows(); ++i)
    for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = rng.normal();
  const double c = spectral_norm(w);
  return MlpLayer(w, random_normal_vector(rng, k), rng.uniform(0.1, 1.0) * 2.0 / (c * c));
}

ScalarModel model_with(std::size_t dim, std::size_t width, std::size_t depth, double radius, std::uint64_t seed) {
  RandomModelConfig cfg;
  cfg.dim = dim;
  cfg.width = width;
  cfg.depth = depth;
  cfg.input_radius = radius;
  return random_model(cfg, seed);
}

void expect_step_sizes_equal(const ScalarModel& a, const ScalarModel& b) {
  ASSERT_EQ(a.depth(), b.depth());
  for (std::size_t l = 0; l < a.depth(); ++l) {
    EXPECT_NEAR(a.blocks[l].attention.eta, b.blocks[l].attention.eta, 1e-12 * (1 + a.blocks[l].attention.eta));
    EXPECT_NEAR(a.blocks[l].mlp.tau, b.blocks[l].mlp.tau, 1e-12 * (1 + a.blocks[l].mlp.tau));
  }
}

}  // namespace

TEST(IdentityBlock, LeavesTokensUnchanged) {
  ScalarModel m;
  m.lifting = Lifting::identity(3);
  m.readout = Vector::Unit(3, 1);
  m.input_domain = {Vector::Zero(3), 2.0};
  for (int k = 0; k < 3; ++k) m.blocks.push_back(identity_block(3));
  m = clamp_model(m);
  EXPECT_TRUE(is_clamped(m));
  for (const Block& b : m.blocks) {
    EXPECT_EQ(b.attention.eta, 0.0);
    EXPECT_EQ(b.mlp.tau, 0.0);
  }
  Rng rng(1);
  const EmpiricalMeasure mu = random_measure(rng, m.input_domain, 5);
  const Vector x = sample_in_ball(rng, m.input_domain.center, 2.0);
  const auto [nu, q] = forward_tokens(m, mu, x);
  EXPECT_EQ(q, x);
  EXPECT_EQ(nu.points(), mu.points());
}

TEST(MinMaxGate, MatchesScalarMinAndMax) {
  const Gate lo = minmax_gate(LatticeOp::Min);
  const Gate hi = minmax_gate(LatticeOp::Max);
  EXPECT_EQ(lo.layer.tau, 2.0);
  Vector z(2);
  z << 3.0, 5.0;
  EXPECT_DOUBLE_EQ(lo.readout.dot(mlp_forward(lo.layer, z)), 3.0);
  EXPECT_DOUBLE_EQ(hi.readout.dot(mlp_forward(hi.layer, z)), 5.0);
  z << 4.0, 4.0;
  EXPECT_EQ(lo.readout.dot(mlp_forward(lo.layer, z)), 4.0);
  EXPECT_EQ(hi.readout.dot(mlp_forward(hi.layer, z)), 4.0);

  Rng rng(7);
  double worst = 0.0;
  for (int k = 0; k < 100000; ++k) {
    const Vector p = random_normal_vector(rng, 2) * 10.0;
    worst = std::max(worst, std::abs(lo.readout.dot(mlp_forward(lo.layer, p)) - std::min(p[0], p[1])));
    worst = std::max(worst, std::abs(hi.readout.dot(mlp_forward(hi.layer, p)) - std::max(p[0], p[1])));
    const Vector q = random_normal_vector(rng, 2) * 10.0;
    const double gp = hi.readout.dot(mlp_forward(hi.layer, p));
    const double gq = hi.readout.dot(mlp_forward(hi.layer, q));
    ASSERT_LE(std::abs(gp - gq), (p - q).norm() * (1 + 1e-12));
  }
  EXPECT_LE(worst, 1e-12);
}

TEST(ParallelMlp, IdentityPairIsIdentity) {
  const MlpLayer f(Matrix::Ones(2, 3), Vector::Ones(2), 0.0);
  const MlpLayer g(Matrix::Ones(1, 2), Vector::Ones(1), 0.0);
  const MlpLayer p = parallel_mlp(f, g);
  EXPECT_TRUE(p.is_identity());
  const Vector x = Vector::LinSpaced(5, -1.0, 1.0);
  EXPECT_EQ(mlp_forward(p, x), x);
}

TEST(ParallelMlp, MatchesSeparateEvaluation) {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const MlpLayer f = random_mlp(rng, 4, 3);
    const MlpLayer g = trial == 0 ? MlpLayer(Matrix::Zero(1, 2), Vector::Zero(1), 0.0) : random_mlp(rng, 5, 2);
    const MlpLayer p = parallel_mlp(f, g);
    EXPECT_LE(p.tau, 1.0);
    EXPECT_GE(p.tau, 1.0 - 1e-12);
    for (int k = 0; k < 100; ++k) {
      const Vector x = random_normal_vector(rng, 3);
      const Vector y = random_normal_vector(rng, 2);
      Vector xy(5);
      xy << x, y;
      const Vector out = mlp_forward(p, xy);
      EXPECT_LE((out.head(3) - mlp_forward(f, x)).cwiseAbs().maxCoeff(), 1e-12);
      EXPECT_LE((out.tail(2) - mlp_forward(g, y)).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(ParallelAttention, ExactForPairedAndProductCouplings) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const AttentionLayer a = random_attention(rng, 3, 1.5, 0.9);
    const AttentionLayer b = random_attention(rng, 2, 1.0, 0.7);
    const auto layers = parallel_attention(a, b);
    const EmpiricalMeasure mu = random_measure(rng, a.domain.block(0), 4);
    for (std::size_t m : {std::size_t{4}, std::size_t{3}}) {
      const EmpiricalMeasure nu = random_measure(rng, b.domain.block(0), m);
      const Coupling gamma = pair_coupling(mu, nu);
      EXPECT_EQ(gamma.joint.size(), m == 4 ? 4u : 12u);
      const Vector x = sample_in_ball(rng, Vector::Zero(3), 1.5);
      const Vector y = sample_in_ball(rng, Vector::Zero(2), 1.0);
      Vector xy(5);
      xy << x, y;
      const Vector out = apply_parallel_attention(layers, {gamma, xy});
      EXPECT_LE((out.head(3) - attn_forward(a, mu, x)).cwiseAbs().maxCoeff(), 1e-9);
      EXPECT_LE((out.tail(2) - attn_forward(b, nu, y)).cwiseAbs().maxCoeff(), 1e-9);
    }
  }
}

TEST(ParallelAttention, ZeroStepsGiveIdentityLayers) {
  const DomainBall ball{Vector::Zero(2), 1.0};
  const AttentionLayer a(Matrix::Identity(2, 2), 0.0, ball);
  const auto [first, second] = parallel_attention(a, a);
  EXPECT_TRUE(first.is_identity());
  EXPECT_TRUE(second.is_identity());
}

TEST(Lattice, SelfCombinationIsIdempotent) {
  const ScalarModel m = model_with(2, 3, 2, 1.0, 3);
  const ScalarModel g = lattice_combine(m, m, LatticeOp::Max);
  Rng rng(2);
  for (int k = 0; k < 20; ++k) {
    const EmpiricalMeasure mu = random_measure(rng, m.input_domain, 1 + k % 5);
    const Vector x = sample_in_ball(rng, m.input_domain.center, 1.0);
    EXPECT_NEAR(evaluate(g, mu, x), evaluate(m, mu, x), 1e-9);
  }
}

TEST(Lattice, MatchesPointwiseMinMaxAcrossDepths) {
  Rng rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    const ScalarModel a = model_with(3, 4, 1 + trial % 3, 1.0, 100 + trial);
    ScalarModel b = model_with(3, 5, trial % 4, 1.0, 200 + trial);
    b.readout *= 0.5 + trial * 0.2;
    const ScalarModel lo = lattice_combine(a, b, LatticeOp::Min);
    const ScalarModel hi = lattice_combine(a, b, LatticeOp::Max);
    EXPECT_TRUE(is_clamped(lo));
    expect_step_sizes_equal(clamp_model(hi), hi);
    for (int k = 0; k < 10; ++k) {
      const EmpiricalMeasure mu = random_measure(rng, a.input_domain, 1 + k % 6);
      const Vector x = sample_in_ball(rng, a.input_domain.center, 1.0);
      const double va = evaluate(a, mu, x);
      const double vb = evaluate(b, mu, x);
      const double l = evaluate(lo, mu, x);
      const double h = evaluate(hi, mu, x);
      EXPECT_NEAR(l, std::min(va, vb), 1e-9);
      EXPECT_NEAR(h, std::max(va, vb), 1e-9);
      EXPECT_NEAR(l + h, va + vb, 1e-9);
    }
  }
}

TEST(Lattice, RejectsMismatchedInputs) {
  const ScalarModel a = model_with(2, 3, 1, 1.0, 1);
  const ScalarModel b = model_with(3, 3, 1, 1.0, 2);
  const ScalarModel c = model_with(2, 3, 1, 2.0, 3);
  EXPECT_THROW(lattice_combine(a, b, LatticeOp::Min), DimensionError);
  EXPECT_THROW(lattice_combine(a, c, LatticeOp::Min), PreconditionError);
}

TEST(Lattice, ZeroReadoutsGiveZero) {
  ScalarModel a = model_with(2, 3, 1, 1.0, 4);
  a.readout.setZero();
  const ScalarModel g = lattice_combine(a, a, LatticeOp::Max);
  Rng rng(3);
  const EmpiricalMeasure mu = random_measure(rng, a.input_domain, 3);
  EXPECT_EQ(evaluate(g, mu, Vector::Zero(2)), 0.0);
}

TEST(Affine, RescaleSumAndConstant) {
  const ScalarModel a = model_with(2, 3, 2, 1.0, 5);
  const ScalarModel b = model_with(2, 4, 1, 1.0, 6);
  const ScalarModel r = affine_rescale(a, -0.5, 2.0);
  const ScalarModel s = sum_models(a, b);
  const ScalarModel k = constant_model(a.input_domain, 3.25);
  Rng rng(4);
  for (int t = 0; t < 10; ++t) {
    const EmpiricalMeasure mu = random_measure(rng, a.input_domain, 1 + t);
    const Vector x = sample_in_ball(rng, a.input_domain.center, 1.0);
    EXPECT_NEAR(evaluate(r, mu, x), -0.5 * evaluate(a, mu, x) + 2.0, 1e-12);
    EXPECT_NEAR(evaluate(s, mu, x), evaluate(a, mu, x) + evaluate(b, mu, x), 1e-9);
    EXPECT_EQ(evaluate(k, mu, x), 3.25);
  }
}

TEST(KrIntegrator, QueryIndependentMeanOfCritic) {
  Rng rng(21);
  const DomainBall dom{Vector::Zero(2), 2.0};
  for (int trial = 0; trial < 5; ++trial) {
    const Critic c = init_critic(2, 5, 1 + trial % 2, 40 + trial);
    const double C = 0.5 + trial;
    const ScalarModel m = kr_integrator(c, C, dom);
    EXPECT_TRUE(is_clamped(m));
    const EmpiricalMeasure nu = random_measure(rng, dom, 8);
    double want = 0.0;
    for (std::size_t i = 0; i < nu.size(); ++i) want += nu.weight(i) * critic_value(c, nu.point(i));
    want *= C;
    const ModelEvaluator f(m, nu);
    double lo = HUGE_VAL, hi = -HUGE_VAL;
    for (int q = 0; q < 100; ++q) {
      const double v = f(sample_in_ball(rng, dom.center, dom.radius));
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    EXPECT_LE(hi - lo, 1e-12);
    EXPECT_NEAR(hi, want, 1e-9);
    const EmpiricalMeasure single(std::vector<Vector>{nu.point(0)});
    EXPECT_NEAR(evaluate(m, single, Vector::Zero(2)), C * critic_value(c, nu.point(0)), 1e-9);
  }
}

TEST(KrIntegrator, ConstantCriticAndZeroCritic) {
  Critic c;
  Vector b(2);
  b << 0.75, 0.0;
  c.lifting = Lifting(Matrix::Zero(2, 1), b);
  c.readout = Vector::Unit(2, 0);
  const DomainBall dom{Vector::Zero(1), 1.0};
  const ScalarModel m = kr_integrator(c, 2.0, dom);
  const EmpiricalMeasure mu(std::vector<Vector>{Vector::Constant(1, 0.3), Vector::Constant(1, -0.4)});
  EXPECT_NEAR(evaluate(m, mu, Vector::Constant(1, 0.1)), 1.5, 1e-12);

  c.readout.setZero();
  const ScalarModel z = kr_integrator(c, 2.0, dom);
  EXPECT_EQ(evaluate(z, mu, Vector::Constant(1, 0.1)), 0.0);
}

TEST(Separator, PureQuerySeparation) {
  const EmpiricalMeasure mu(std::vector<Vector>{Vector::Zero(2)});
  Vector x(2), y(2);
  x << 1.0, 0.0;
  y << -1.0, 0.5;
  const ScalarModel g = separator(mu, x, mu, y, 0.3, -0.9, 1.0, 0.05);
  EXPECT_NEAR(evaluate(g, mu, x), 0.3, 1e-9);
  EXPECT_NEAR(evaluate(g, mu, y), -0.9, 1e-9);
}

TEST(Separator, MeasureOnlySeparation) {
  const EmpiricalMeasure mu(std::vector<Vector>{Vector::Zero(1)});
  const EmpiricalMeasure nu(std::vector<Vector>{Vector::Ones(1)});
  const Vector x = Vector::Constant(1, 0.5);
  const ScalarModel g = separator(mu, x, nu, x, 1.0, 0.2, 2.0, 0.05);
  EXPECT_NEAR(evaluate(g, mu, x), 1.0, 1e-9);
  EXPECT_NEAR(evaluate(g, nu, x), 0.2, 1e-9);
  EXPECT_THROW(separator(mu, x, nu, x, 3.0, 0.0, 1.0, 0.05), PreconditionError);
  EXPECT_THROW(separator(mu, x, mu, x, 1.0, 1.0, 1.0, 0.05), PreconditionError);
}

TEST(Separator, EqualTargetsGiveConstant) {
  const EmpiricalMeasure mu(std::vector<Vector>{Vector::Zero(1), Vector::Ones(1)});
  const EmpiricalMeasure nu(std::vector<Vector>{Vector::Ones(1)});
  const ScalarModel g = separator(mu, Vector::Zero(1), nu, Vector::Ones(1), 0.7, 0.7, 1.0, 0.05);
  EXPECT_NEAR(evaluate(g, mu, Vector::Zero(1)), 0.7, 1e-12);
  EXPECT_NEAR(evaluate(g, nu, Vector::Ones(1)), 0.7, 1e-12);
}

TEST(Rsw, SmallSampleSets) {
  Rng rng(33);
  const DomainBall box{Vector::Zero(2), 1.0};
  std::vector<Sample> samples;
  for (int i = 0; i < 4; ++i)
    samples.push_back({random_measure(rng, box, 3), sample_in_ball(rng, box.center, 1.0), 0.0});
  const double C = 1.0;
  // Targets from a (1, C)-Lipschitz function shrunk toward zero.
  for (Sample& s : samples) s.target = 0.5 * (s.query[0] + C * s.measure.points().row(0).mean());

  const ScalarModel one = rsw_interpolate({samples[0]}, C);
  EXPECT_NEAR(evaluate(one, samples[1].measure, samples[1].query), samples[0].target, 1e-12);

  const ScalarModel g = rsw_interpolate(samples, C);
  std::vector<std::pair<EmpiricalMeasure, Vector>> anchors;
  for (const Sample& s : samples) {
    EXPECT_NEAR(evaluate(g, s.measure, s.query), s.target, 1e-6);
    anchors.emplace_back(s.measure, s.query);
  }
  const CheckResult lip = empirical_joint_lipschitz(g, C, anchors, 200, 1, 1.0 + 1e-6);
  EXPECT_TRUE(lip.check.pass) << lip.check.stat;

  std::vector<Sample> bad = samples;
  bad[0].target = bad[1].target + 100.0;
  EXPECT_THROW(rsw_interpolate(bad, C), PreconditionError);
  EXPECT_THROW(rsw_interpolate({}, C), PreconditionError);
}
