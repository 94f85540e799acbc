// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>

#include "lipctx/certify.hpp"
#include "lipctx/constructions.hpp"
#include "lipctx/error.hpp"
#include "lipctx/random.hpp"
#include "lipctx/transformer.hpp"

using namespace lipctx;

namespace {

ScalarModel identity_model(std::size_t d, double radius) {
  ScalarModel m;
  m.lifting = Lifting::identity(d);
  m.readout = Vector::Unit(static_cast<Eigen::Index>(d), 0);
  m.input_domain = {Vector::Zero(static_cast<Eigen::Index>(d)), radius};
  return m;
}

ScalarModel random_of(std::size_t d, std::size_t h, std::size_t depth, std::uint64_t seed) {
  RandomModelConfig cfg;
  cfg.dim = d;
  cfg.width = h;
  cfg.depth = depth;
  return random_model(cfg, seed);
}

}  // namespace

TEST(Lift, IdentityTranslationAndCollapse) {
  ScalarModel m = identity_model(2, 2.0);
  Rng rng(1);
  const EmpiricalMeasure mu = random_measure(rng, m.input_domain, 4);
  const Vector x = sample_in_ball(rng, Vector::Zero(2), 2.0);
  auto [nu, q] = lift(m, mu, x);
  EXPECT_EQ(nu.points(), mu.points());
  EXPECT_EQ(q, x);

  m.lifting = Lifting(Matrix::Identity(2, 2), Vector::Constant(2, 0.5));
  std::tie(nu, q) = lift(m, mu, x);
  EXPECT_EQ(q, Vector(x.array() + 0.5));
  EXPECT_EQ(nu.point(2), Vector(mu.point(2).array() + 0.5));

  m.lifting = Lifting(Matrix::Zero(3, 2), Vector::Constant(3, -1.0));
  m.readout = Vector::Zero(3);
  std::tie(nu, q) = lift(m, mu, x);
  for (std::size_t i = 0; i < nu.size(); ++i) EXPECT_EQ(nu.point(i), Vector::Constant(3, -1.0));

  EXPECT_THROW(lift(identity_model(2, 0.5), mu, Vector::Constant(2, 3.0)), DomainError);
  try {
    lift(identity_model(2, 0.5), mu, Vector::Constant(2, 3.0));
  } catch (const DomainError& e) {
    EXPECT_EQ(e.stage(), 0);
  }
}

TEST(ForwardTokens, EmptyAndIdentityStacks) {
  ScalarModel m = identity_model(3, 1.0);
  Rng rng(2);
  const EmpiricalMeasure mu = random_measure(rng, m.input_domain, 5);
  const Vector x = sample_in_ball(rng, Vector::Zero(3), 1.0);
  auto [nu, q] = forward_tokens(m, mu, x);
  EXPECT_EQ(q, x);
  EXPECT_EQ(nu.points(), mu.points());
  for (int k = 0; k < 3; ++k) m.blocks.push_back(identity_block(3));
  m = clamp_model(m);
  std::tie(nu, q) = forward_tokens(m, mu, x);
  EXPECT_EQ(q, x);
  EXPECT_EQ(nu.points(), mu.points());
}

TEST(ForwardTokens, SingleAtomAttention) {
  ScalarModel m = identity_model(2, 1.0);
  const DomainBall ball{Vector::Zero(2), 1.0};
  Matrix a(2, 2);
  a << 0.5, 0.2, -0.1, 0.4;
  m.blocks.push_back({AttentionLayer(a, 0.3, ball), MlpLayer(Matrix::Zero(1, 2), Vector::Zero(1), 0.0)});
  Vector y(2), x(2);
  y << 0.2, -0.4;
  x << -0.3, 0.5;
  const auto [nu, q] = forward_tokens(m, EmpiricalMeasure(std::vector<Vector>{y}), x);
  EXPECT_LE((q - (x - 0.3 * a * y)).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LE((nu.point(0) - (y - 0.3 * a * y)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Evaluate, ReadoutLinearityAndExamples) {
  const ScalarModel id = identity_model(2, 1.0);
  Rng rng(3);
  const EmpiricalMeasure mu = random_measure(rng, id.input_domain, 3);
  Vector x(2);
  x << 0.25, -0.5;
  EXPECT_EQ(evaluate(id, mu, x), 0.25);

  ScalarModel m = random_of(2, 4, 2, 7);
  const Vector v = m.readout;
  const Vector w = random_normal_vector(rng, 4);
  const double fv = evaluate(m, mu, x);
  m.readout = w;
  const double fw = evaluate(m, mu, x);
  m.readout = v + w;
  EXPECT_NEAR(evaluate(m, mu, x), fv + fw, 1e-12);
  m.readout.setZero();
  EXPECT_EQ(evaluate(m, mu, x), 0.0);
}

TEST(Evaluate, PermutationInvariantToTheLastBit) {
  Rng rng(4);
  const ScalarModel m = random_of(3, 5, 3, 11);
  std::vector<Vector> pts;
  std::vector<double> w;
  for (int i = 0; i < 12; ++i) {
    pts.push_back(sample_in_ball(rng, Vector::Zero(3), 1.0));
    w.push_back(rng.uniform(0.1, 1.0));
  }
  const EmpiricalMeasure mu(pts, w);
  std::vector<std::size_t> perm(pts.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = (i * 7 + 3) % perm.size();
  std::vector<Vector> pp;
  std::vector<double> pw;
  for (std::size_t i : perm) {
    pp.push_back(pts[i]);
    pw.push_back(w[i]);
  }
  const EmpiricalMeasure nu = EmpiricalMeasure::from_normalized(EmpiricalMeasure(pp, pw).points(), [&] {
    std::vector<double> out;
    for (std::size_t i : perm) out.push_back(mu.weight(i));
    return out;
  }());
  const Vector x = sample_in_ball(rng, Vector::Zero(3), 1.0);
  EXPECT_EQ(evaluate(m, mu, x), evaluate(m, nu, x));
  const ModelEvaluator ev(m, nu);
  EXPECT_EQ(ev(x), evaluate(m, mu, x));
}

TEST(Evaluate, CompositionOfHalvesIsExact) {
  const ScalarModel m = random_of(2, 4, 4, 5);
  ScalarModel first = m;
  first.blocks.resize(2);
  ScalarModel second = m;
  second.blocks.erase(second.blocks.begin(), second.blocks.begin() + 2);
  second.lifting = Lifting::identity(4);
  Rng rng(6);
  const EmpiricalMeasure mu = random_measure(rng, m.input_domain, 6);
  const Vector x = sample_in_ball(rng, Vector::Zero(2), 1.0);
  const auto [mid, q] = forward_tokens(first, mu, x);
  second.input_domain = bounding_ball({q}, 100.0);
  const auto [end_a, qa] = forward_tokens(m, mu, x);
  // Continue from the intermediate tokens block by block.
  EmpiricalMeasure cur = mid;
  Vector cq = q;
  for (const Block& blk : second.blocks) {
    const AttentionContext ctx(blk.attention, cur);
    cq = ctx.forward(cq);
    cur = ctx.push(cur);
    cq = mlp_forward(blk.mlp, cq);
    cur = pushforward(cur, [&](const Vector& y) { return mlp_forward(blk.mlp, y); });
  }
  EXPECT_EQ(cq, qa);
  EXPECT_EQ(cur.points(), end_a.points());
}

TEST(PropagateDomains, IdentityAndGrowth) {
  ScalarModel m = identity_model(2, 1.5);
  m.blocks.push_back(identity_block(2));
  m = clamp_model(m);
  const DomainChain c = propagate_domains(m);
  ASSERT_EQ(c.domains.size(), 3u);
  for (const ProductDomain& d : c.domains) EXPECT_EQ(d.block(0).radius, 1.5);
  EXPECT_TRUE(c.all_valid());

  ScalarModel g = identity_model(2, 1.0);
  const DomainBall ball{Vector::Zero(2), 1.0};
  g.blocks.push_back({AttentionLayer(Matrix::Identity(2, 2), 2.0, ball),
                      MlpLayer(Matrix::Zero(1, 2), Vector::Zero(1), 0.0)});
  const DomainChain gc = propagate_domains(g);
  EXPECT_DOUBLE_EQ(gc.domains[1].block(0).radius, 1.0 + 2.0);
  EXPECT_TRUE(gc.all_valid());

  g.blocks[0].attention = with_domain(g.blocks[0].attention, ProductDomain(DomainBall{Vector::Zero(2), 0.5}));
  EXPECT_FALSE(propagate_domains(g).valid[0]);
  EXPECT_FALSE(is_clamped(g));
  EXPECT_TRUE(is_clamped(clamp_model(g)));
}

TEST(ClampModel, IdempotentAndFixesRandomModels) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const ScalarModel m = random_of(3, 6, 3, s);
    EXPECT_TRUE(propagate_domains(m).all_valid());
    const ScalarModel c = clamp_model(m);
    const ScalarModel cc = clamp_model(c);
    EXPECT_TRUE(is_clamped(c));
    for (std::size_t l = 0; l < c.depth(); ++l) {
      EXPECT_NEAR(c.blocks[l].attention.eta, cc.blocks[l].attention.eta, 1e-12 * c.blocks[l].attention.eta);
      EXPECT_NEAR(c.blocks[l].mlp.tau, cc.blocks[l].mlp.tau, 1e-12 * c.blocks[l].mlp.tau);
    }
  }
}

TEST(DeepModel, QueryLipschitzBoundHolds) {
  Rng rng(7);
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    ScalarModel m = clamp_model(random_of(3, 6, 3, 100 + s));
    m.readout *= 1.7;
    const EmpiricalMeasure mu = random_measure(rng, m.input_domain, 1 + rng.integer(0, 15));
    const ModelEvaluator f(m, mu);
    for (int k = 0; k < 300; ++k) {
      const Vector x = sample_in_ball(rng, m.input_domain.center, 1.0);
      const Vector y = sample_in_ball(rng, m.input_domain.center, 1.0);
      worst = std::max(worst, std::abs(f(x) - f(y)) / ((x - y).norm() * m.readout.norm()));
    }
  }
  EXPECT_LE(worst, 1 + 1e-9);
}
