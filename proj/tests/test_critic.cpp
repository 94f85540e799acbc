// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "lipctx/certify.hpp"
#include "lipctx/critic.hpp"
#include "lipctx/error.hpp"
#include "lipctx/random.hpp"
#include "lipctx/transport.hpp"
#include "oracles.hpp"

using namespace lipctx;

namespace {

EmpiricalMeasure line(std::initializer_list<double> xs) {
  std::vector<Vector> pts;
  for (double x : xs) pts.push_back(Vector::Constant(1, x));
  return EmpiricalMeasure(pts);
}

EmpiricalMeasure cloud(Rng& rng, std::size_t n, std::size_t d, double shift) {
  std::vector<Vector> pts;
  std::vector<double> w;
  for (std::size_t i = 0; i < n; ++i) {
    pts.push_back(random_normal_vector(rng, d) + Vector::Constant(static_cast<Eigen::Index>(d), shift));
    w.push_back(rng.uniform(0.2, 1.0));
  }
  return EmpiricalMeasure(pts, w);
}

Critic linear_critic(double sign) {
  Critic c;
  c.lifting = Lifting::identity(1);
  c.readout = Vector::Constant(1, sign);
  return c;
}

// Visits every scalar parameter through a mutable reference.
void for_each_param(Critic& c, const std::function<void(double&)>& f) {
  Matrix a = c.lifting.A;
  Vector b = c.lifting.b;
  for (Eigen::Index i = 0; i < a.size(); ++i) f(a.data()[i]);
  for (Eigen::Index i = 0; i < b.size(); ++i) f(b[i]);
  c.lifting = Lifting(a, b);
  for (MlpLayer& layer : c.stack) {
    Matrix w = to_dense(layer.W);
    Vector lb = layer.b;
    double tau = layer.tau;
    for (Eigen::Index i = 0; i < w.size(); ++i) f(w.data()[i]);
    for (Eigen::Index i = 0; i < lb.size(); ++i) f(lb[i]);
    f(tau);
    layer = MlpLayer(w, lb, tau, false);
  }
  for (Eigen::Index i = 0; i < c.readout.size(); ++i) f(c.readout[i]);
}

std::vector<double> flatten(const GradientSet& g) {
  std::vector<double> out;
  for (Eigen::Index i = 0; i < g.lift_A.size(); ++i) out.push_back(g.lift_A.data()[i]);
  for (Eigen::Index i = 0; i < g.lift_b.size(); ++i) out.push_back(g.lift_b[i]);
  for (std::size_t l = 0; l < g.W.size(); ++l) {
    for (Eigen::Index i = 0; i < g.W[l].size(); ++i) out.push_back(g.W[l].data()[i]);
    for (Eigen::Index i = 0; i < g.b[l].size(); ++i) out.push_back(g.b[l][i]);
    out.push_back(g.tau[l]);
  }
  for (Eigen::Index i = 0; i < g.readout.size(); ++i) out.push_back(g.readout[i]);
  return out;
}

double perturbed(const Critic& c, std::size_t k, double delta, const EmpiricalMeasure& mu,
                 const EmpiricalMeasure& nu) {
  Critic p = c;
  std::size_t idx = 0;
  for_each_param(p, [&](double& v) {
    if (idx++ == k) v += delta;
  });
  return kr_objective(p, mu, nu);
}

}  // namespace

TEST(CriticValue, Examples) {
  Critic c = linear_critic(1.0);
  EXPECT_EQ(critic_value(c, Vector::Constant(1, 0.75)), 0.75);
  c.readout.setZero();
  EXPECT_EQ(critic_value(c, Vector::Constant(1, 0.75)), 0.0);
  EXPECT_THROW(critic_value(c, Vector::Zero(2)), DimensionError);
}

TEST(CriticValue, OneLipschitzAfterProjection) {
  Rng rng(1);
  for (std::uint64_t s = 0; s < 5; ++s) {
    Critic c = init_critic(3, 6, 2, s);
    for_each_param(c, [&](double& v) { v *= 4.0; });
    c = project_params(c);
    double worst = 0.0;
    for (int k = 0; k < 2000; ++k) {
      const Vector x = 3.0 * random_normal_vector(rng, 3);
      const Vector y = k % 2 ? Vector(x + 1e-3 * random_normal_vector(rng, 3)) : Vector(3.0 * random_normal_vector(rng, 3));
      worst = std::max(worst, std::abs(critic_value(c, x) - critic_value(c, y)) / (x - y).norm());
    }
    EXPECT_LE(worst, 1 + 1e-9);
  }
}

TEST(KrObjective, Examples) {
  const EmpiricalMeasure d0 = line({0}), d1 = line({1});
  EXPECT_EQ(kr_objective(linear_critic(1.0), d0, d1), -1.0);
  EXPECT_EQ(kr_objective(linear_critic(-1.0), d0, d1), 1.0);
  const Critic c = init_critic(1, 4, 1, 3);
  EXPECT_EQ(kr_objective(c, d1, d1), 0.0);
  EXPECT_THROW(kr_objective(c, d0, EmpiricalMeasure(std::vector<Vector>{Vector::Zero(2)})), DimensionError);
}

TEST(KrObjective, NeverExceedsExactW1) {
  Rng rng(2);
  for (int t = 0; t < 50; ++t) {
    const std::size_t d = rng.integer(1, 3);
    const EmpiricalMeasure mu = cloud(rng, rng.integer(1, 8), d, 0.0);
    const EmpiricalMeasure nu = cloud(rng, rng.integer(1, 8), d, 0.5);
    const Critic c = init_critic(d, 5, rng.integer(0, 2), rng.next_u64());
    EXPECT_LE(kr_objective(c, mu, nu), w1_exact(mu, nu) + 1e-9);
  }
}

TEST(CriticGrads, LinearAndIdenticalMeasures) {
  Critic c;
  c.lifting = Lifting(Matrix::Identity(2, 2), Vector::Zero(2));
  c.readout = Vector::Zero(2);
  Vector a(2), b(2);
  a << 1, 2;
  b << -1, 0.5;
  const EmpiricalMeasure mu(std::vector<Vector>{a, b}), nu(std::vector<Vector>{b});
  const GradientSet g = critic_grads(c, mu, nu);
  EXPECT_NEAR((g.readout - (0.5 * (a + b) - b)).norm(), 0.0, 1e-15);

  const Critic r = init_critic(2, 4, 2, 5);
  for (double v : flatten(critic_grads(r, mu, mu))) EXPECT_NEAR(v, 0.0, 1e-15);
}

TEST(CriticGrads, MatchFiniteDifferences) {
  Rng rng(3);
  int points = 0;
  while (points < 50) {
    const std::size_t d = rng.integer(1, 3);
    const EmpiricalMeasure mu = cloud(rng, rng.integer(1, 5), d, 0.0);
    const EmpiricalMeasure nu = cloud(rng, rng.integer(1, 5), d, 0.3);
    const Critic c = init_critic(d, rng.integer(2, 5), rng.integer(0, 3), rng.next_u64());
    const std::vector<double> g = flatten(critic_grads(c, mu, nu));
    const double h = 1e-6;
    bool kink = false;
    std::vector<double> fd(g.size());
    for (std::size_t k = 0; k < g.size(); ++k) {
      const double fp = perturbed(c, k, h, mu, nu), fm = perturbed(c, k, -h, mu, nu);
      const double f0 = kr_objective(c, mu, nu);
      // Skip points where a ReLU switches inside the stencil.
      if (std::abs((fp - f0) - (f0 - fm)) > 1e-4 * h) kink = true;
      fd[k] = (fp - fm) / (2 * h);
    }
    if (kink) continue;
    ++points;
    for (std::size_t k = 0; k < g.size(); ++k)
      EXPECT_NEAR(g[k], fd[k], 1e-5 * std::max(1.0, std::abs(fd[k]))) << "param " << k;
  }
}

TEST(ProjectParams, FixedPointRadialAndSpectral) {
  const Critic feasible = init_critic(2, 4, 2, 7);
  const Critic again = project_params(feasible);
  EXPECT_EQ(again.readout, feasible.readout);
  EXPECT_EQ(again.lifting.A, feasible.lifting.A);

  Critic c = feasible;
  c.readout = Vector::Zero(4);
  c.readout[1] = 3.0;
  c.readout[2] = 4.0;
  const Critic p = project_params(c);
  EXPECT_NEAR(p.readout.norm(), 1.0, 1e-15);
  EXPECT_NEAR(p.readout[1] / p.readout[2], 0.75, 1e-15);

  c.lifting = Lifting(Matrix(3.0 * Matrix::Identity(4, 2)), Vector::Zero(4));
  const Critic q = project_params(c);
  EXPECT_LE(oracle::largest_singular_value(q.lifting.A), 1.0 + 1e-12);
  const Critic qq = project_params(q);
  EXPECT_LE((qq.lifting.A - q.lifting.A).cwiseAbs().maxCoeff(), 1e-12);
  for (std::size_t l = 0; l < q.stack.size(); ++l) EXPECT_NEAR(qq.stack[l].tau, q.stack[l].tau, 1e-12);
}

TEST(TrainCritic, DiracPairReachesOne) {
  TrainConfig cfg;
  cfg.depth = 0;
  const TrainResult r = train_critic(line({0}), line({1}), cfg);
  EXPECT_GE(r.estimate, 0.999);
  EXPECT_LE(r.estimate, 1.0 + 1e-9);
  EXPECT_LE(kr_gap(line({0}), line({1}), cfg).gap, 1e-3);
}

TEST(TrainCritic, IdenticalMeasuresGiveZero) {
  const EmpiricalMeasure mu = line({0, 1, 3});
  const KrGap g = kr_gap(mu, mu, TrainConfig{});
  EXPECT_EQ(g.estimate, 0.0);
  EXPECT_EQ(g.exact, 0.0);
  EXPECT_EQ(g.gap, 0.0);
}

TEST(TrainCritic, SixteenAtomCloudsIn1d) {
  Rng rng(4);
  double mean = 0.0;
  const int runs = 6;
  for (int t = 0; t < runs; ++t) {
    std::vector<Vector> p, q;
    const double shift = rng.uniform(-0.5, 0.5);
    for (int i = 0; i < 16; ++i) {
      p.push_back(Vector::Constant(1, rng.uniform()));
      q.push_back(Vector::Constant(1, rng.uniform() + shift));
    }
    const EmpiricalMeasure mu(p), nu(q);
    TrainConfig cfg;
    cfg.iterations = 2000;
    cfg.depth = 4;
    cfg.step_size = 0.2;
    cfg.seed = static_cast<std::uint64_t>(t);
    const double exact = w1_exact_1d(mu, nu);
    const TrainResult r = train_critic(mu, nu, cfg);
    for (double v : r.trace) EXPECT_LE(v, exact + 1e-9);
    mean += r.estimate / exact / runs;
  }
  EXPECT_GE(mean, 0.9);
}

TEST(TrainCritic, DualitySoundDeterministicAndMonotone) {
  Rng rng(5);
  for (int t = 0; t < 8; ++t) {
    const EmpiricalMeasure mu = cloud(rng, 8, 2, 0.0);
    const EmpiricalMeasure nu = cloud(rng, 8, 2, 0.7);
    TrainConfig cfg;
    cfg.iterations = 200;
    cfg.depth = 2;
    cfg.seed = static_cast<std::uint64_t>(t);
    const KrGap g = kr_gap(mu, nu, cfg);
    EXPECT_GE(g.gap, -1e-9);
    const TrainResult a = train_critic(mu, nu, cfg);
    const TrainResult b = train_critic(mu, nu, cfg);
    EXPECT_EQ(a.trace, b.trace);
    EXPECT_EQ(a.critic.readout, b.critic.readout);
    EXPECT_EQ(a.critic.lifting.A, b.critic.lifting.A);
    double best = -INFINITY;
    for (double v : a.trace) {
      EXPECT_LE(v, g.exact + 1e-9);
      best = std::max(best, v);
    }
    EXPECT_EQ(best, a.estimate);
    cfg.iterations = 100;
    EXPECT_LE(train_critic(mu, nu, cfg).estimate, a.estimate);
  }
}

TEST(TrainCritic, RejectsBadConfig) {
  TrainConfig cfg;
  cfg.step_size = 0.0;
  EXPECT_THROW(train_critic(line({0}), line({1}), cfg), Error);
  cfg = TrainConfig{};
  cfg.iterations = 0;
  EXPECT_THROW(train_critic(line({0}), line({1}), cfg), Error);
  EXPECT_THROW(train_critic(line({0}), EmpiricalMeasure(std::vector<Vector>{Vector::Zero(2)}), TrainConfig{}),
               DimensionError);
}

TEST(FoldCritic, ReachesW1OnSmallLines) {
  const EmpiricalMeasure mu = line({0}), nu = line({-1, 1});
  const TrainResult f = fold_critic(mu, nu);
  EXPECT_NEAR(f.estimate, w1_exact(mu, nu), 1e-12);
  EXPECT_EQ(f.estimate, kr_objective(f.critic, mu, nu));
  EXPECT_NEAR(fold_critic(line({0, 2}), line({1, 3})).estimate, 1.0, 1e-12);
}

TEST(FoldCritic, SoundOnRandomClouds) {
  Rng rng(21);
  for (int s = 0; s < 20; ++s) {
    const std::size_t d = 1 + rng.integer(0, 2);
    const DomainBall ball{Vector::Zero(static_cast<Eigen::Index>(d)), 1.0};
    const EmpiricalMeasure mu = random_measure(rng, ball, 1 + rng.integer(0, 4));
    const EmpiricalMeasure nu = random_measure(rng, ball, 1 + rng.integer(0, 4));
    const TrainResult f = fold_critic(mu, nu);
    EXPECT_LE(f.estimate, w1_exact(mu, nu) + 1e-9);
    EXPECT_GE(f.estimate, 0.0);
    for (int k = 0; k < 20; ++k) {
      const Vector p = sample_in_ball(rng, ball.center, ball.radius);
      const Vector q = sample_in_ball(rng, ball.center, ball.radius);
      EXPECT_LE(std::abs(critic_value(f.critic, p) - critic_value(f.critic, q)), (p - q).norm() + 1e-12);
    }
  }
  EXPECT_THROW(fold_critic(line({0}), EmpiricalMeasure(std::vector<Vector>{Vector::Zero(2)})), DimensionError);
}
