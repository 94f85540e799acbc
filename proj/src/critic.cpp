// SPDX-License-Identifier: Apache-2.0
#include "lipctx/critic.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "lipctx/error.hpp"
#include "lipctx/random.hpp"
#include "lipctx/transport.hpp"

namespace lipctx {

namespace {

void check_dims(const Critic& c, const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
  if (mu.dim() != c.input_dim() || nu.dim() != c.input_dim())
    throw DimensionError("measure dimension does not match the critic");
}

struct Tape {
  std::vector<Vector> z;  // z[0] lifted input, z[l+1] output of layer l
  std::vector<Vector> p;  // pre-activations
};

Tape run_forward(const Critic& c, const Vector& x) {
  Tape t;
  t.z.push_back(c.lifting.apply(x));
  for (const MlpLayer& layer : c.stack) {
    Vector p = multiply(layer.W, t.z.back());
    for (Eigen::Index i = 0; i < p.size(); ++i) p[i] += layer.b[i];
    Vector a = p.cwiseMax(0.0);
    const Vector g = multiply_transposed(layer.W, a);
    Vector next(g.size());
    for (Eigen::Index i = 0; i < g.size(); ++i) next[i] = t.z.back()[i] - layer.tau * g[i];
    t.p.push_back(std::move(p));
    t.z.push_back(std::move(next));
  }
  return t;
}

GradientSet zero_grads(const Critic& c) {
  GradientSet g;
  g.lift_A = Matrix::Zero(c.lifting.A.rows(), c.lifting.A.cols());
  g.lift_b = Vector::Zero(c.lifting.b.size());
  for (const MlpLayer& layer : c.stack) {
    g.W.push_back(Matrix::Zero(layer.W.rows(), layer.W.cols()));
    g.b.push_back(Vector::Zero(layer.b.size()));
    g.tau.push_back(0.0);
  }
  g.readout = Vector::Zero(c.readout.size());
  return g;
}

// Adds coef * d(critic(x))/d(params) to g.
void accumulate(const Critic& c, const Vector& x, double coef, GradientSet& g) {
  const Tape t = run_forward(c, x);
  g.readout += coef * t.z.back();
  Vector gz = coef * c.readout;
  for (std::size_t l = c.stack.size(); l-- > 0;) {
    const MlpLayer& layer = c.stack[l];
    const Matrix w = to_dense(layer.W);
    const Vector a = t.p[l].cwiseMax(0.0);
    const Vector wg = w * gz;
    g.tau[l] += -wg.dot(a);
    Vector dp = -layer.tau * wg;
    for (Eigen::Index i = 0; i < dp.size(); ++i)
      if (!(t.p[l][i] > 0.0)) dp[i] = 0.0;
    g.W[l] += -layer.tau * a * gz.transpose() + dp * t.z[l].transpose();
    g.b[l] += dp;
    gz += w.transpose() * dp;
  }
  g.lift_A += gz * x.transpose();
  g.lift_b += gz;
}

Critic apply_step(const Critic& c, const GradientSet& g, double step) {
  Critic out;
  out.lifting = Lifting(c.lifting.A + step * g.lift_A, c.lifting.b + step * g.lift_b);
  for (std::size_t l = 0; l < c.stack.size(); ++l) {
    const MlpLayer& layer = c.stack[l];
    out.stack.emplace_back(Matrix(to_dense(layer.W) + step * g.W[l]), Vector(layer.b + step * g.b[l]),
                           layer.tau + step * g.tau[l], false);
  }
  out.readout = c.readout + step * g.readout;
  return project_params(out);
}

// One-dimensional profile psi applied to t = u.z: t, -|t - c1| or
// -c2 - ||t - c1| - c2|, times sign.
struct Fold {
  Vector dir;
  int kind = 0;
  double c1 = 0.0;
  double c2 = 0.0;
  double sign = 1.0;
  double value = 0.0;
};

Fold best_fold(const std::vector<double>& t, const std::vector<double>& mass) {
  Fold best;
  auto consider = [&](int kind, double c1, double c2, double raw) {
    if (std::abs(raw) > best.value) {
      best.value = std::abs(raw);
      best.kind = kind;
      best.c1 = c1;
      best.c2 = c2;
      best.sign = raw < 0.0 ? -1.0 : 1.0;
    }
  };
  double lin = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) lin += mass[i] * t[i];
  consider(0, 0.0, 0.0, lin);
  for (double c1 : t) {
    double v = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) v -= mass[i] * std::abs(t[i] - c1);
    consider(1, c1, 0.0, v);
    for (double s : t) {
      const double c2 = std::abs(s - c1);
      if (c2 == 0.0) continue;
      double w = 0.0;
      for (std::size_t i = 0; i < t.size(); ++i) w -= mass[i] * (c2 + std::abs(std::abs(t[i] - c1) - c2));
      consider(2, c1, c2, w);
    }
  }
  return best;
}

}  // namespace

double critic_value(const Critic& c, const Vector& z) {
  if (static_cast<std::size_t>(z.size()) != c.input_dim()) throw DimensionError("critic input dimension mismatch");
  return dot(c.readout, run_forward(c, z).z.back());
}

double kr_objective(const Critic& c, const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
  check_dims(c, mu, nu);
  std::vector<double> a(mu.size());
  std::vector<double> b(nu.size());
  for (std::size_t i = 0; i < mu.size(); ++i) a[i] = mu.weight(i) * critic_value(c, mu.point(i));
  for (std::size_t j = 0; j < nu.size(); ++j) b[j] = nu.weight(j) * critic_value(c, nu.point(j));
  return pairwise_sum(a) - pairwise_sum(b);
}

GradientSet critic_grads(const Critic& c, const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
  check_dims(c, mu, nu);
  GradientSet g = zero_grads(c);
  for (std::size_t i = 0; i < mu.size(); ++i) accumulate(c, mu.point(i), mu.weight(i), g);
  for (std::size_t j = 0; j < nu.size(); ++j) accumulate(c, nu.point(j), -nu.weight(j), g);
  return g;
}

Critic project_params(const Critic& c) {
  Critic out = c;
  const double rn = norm2(out.readout);
  if (rn > 1.0) out.readout /= rn;
  const double an = spectral_norm(out.lifting.A);
  if (an > 1.0) out.lifting.A /= an;
  for (MlpLayer& layer : out.stack) layer = mlp_clamp_step(layer);
  return out;
}

Critic init_critic(std::size_t dim, std::size_t width, std::size_t depth, std::uint64_t seed) {
  if (dim < 1 || width < 1) throw DimensionError("critic needs positive dimensions");
  Rng rng(seed);
  const auto d = static_cast<Eigen::Index>(dim);
  const auto h = static_cast<Eigen::Index>(width);
  auto uniform_matrix = [&rng](Eigen::Index r, Eigen::Index c, double scale) {
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.uniform(-scale, scale);
    return m;
  };
  auto uniform_vector = [&rng](Eigen::Index n, double scale) {
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = rng.uniform(-scale, scale);
    return v;
  };
  Critic c;
  c.lifting = Lifting(uniform_matrix(h, d, 1.0), uniform_vector(h, 0.1));
  for (std::size_t l = 0; l < depth; ++l) {
    const Matrix w = uniform_matrix(h, h, 1.0 / std::sqrt(static_cast<double>(width)));
    const double sn = spectral_norm(w);
    c.stack.emplace_back(w, uniform_vector(h, 0.5), sn > 0.0 ? 1.0 / (sn * sn) : 0.0, false);
  }
  c.readout = uniform_vector(h, 1.0);
  return project_params(c);
}

TrainResult train_critic(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu, const TrainConfig& cfg) {
  if (mu.dim() != nu.dim()) throw DimensionError("measures of different dimension");
  if (cfg.iterations < 1) throw Error("iterations must be >= 1");
  if (!(cfg.step_size > 0.0 && cfg.step_size <= 1.0)) throw Error("step_size must lie in (0, 1]");
  Critic cur = init_critic(mu.dim(), cfg.width, cfg.depth, cfg.seed);
  TrainResult res;
  res.critic = cur;
  res.estimate = kr_objective(cur, mu, nu);
  res.trace.push_back(res.estimate);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    cur = apply_step(cur, critic_grads(cur, mu, nu), cfg.step_size);
    const double obj = kr_objective(cur, mu, nu);
    res.trace.push_back(obj);
    if (obj > res.estimate) {
      res.estimate = obj;
      res.critic = cur;
    }
  }
  return res;
}

TrainResult fold_critic(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
  if (mu.dim() != nu.dim()) throw DimensionError("measures of different dimension");
  const std::size_t d = mu.dim();
  const auto di = static_cast<Eigen::Index>(d);
  std::vector<Vector> atoms;
  std::vector<double> mass;
  Vector mean_diff = Vector::Zero(di);
  for (std::size_t i = 0; i < mu.size(); ++i) {
    atoms.push_back(mu.point(i));
    mass.push_back(mu.weight(i));
    mean_diff += mu.weight(i) * mu.point(i);
  }
  for (std::size_t j = 0; j < nu.size(); ++j) {
    atoms.push_back(nu.point(j));
    mass.push_back(-nu.weight(j));
    mean_diff -= nu.weight(j) * nu.point(j);
  }

  std::vector<Vector> dirs;
  auto add_dir = [&](const Vector& v) {
    const double n = v.norm();
    if (n > 0.0) dirs.push_back(v / n);
  };
  add_dir(mean_diff);
  for (std::size_t i = 0; i < mu.size(); ++i)
    for (std::size_t j = 0; j < nu.size(); ++j) add_dir(mu.point(i) - nu.point(j));
  for (Eigen::Index k = 0; k < di; ++k) add_dir(Vector::Unit(di, k));

  std::vector<std::vector<Vector>> frames;
  if (d == 2) {
    std::vector<double> angles;
    for (int k = 0; k < 90; ++k) angles.push_back(k * std::numbers::pi / 180.0);
    for (const Vector& u : dirs) angles.push_back(std::atan2(u[1], u[0]));
    for (double a : angles) {
      Vector u(2), w(2);
      u << std::cos(a), std::sin(a);
      w << -std::sin(a), std::cos(a);
      frames.push_back({u, w});
    }
  } else {
    for (const Vector& u : dirs) {
      std::vector<Vector> rest;
      for (Eigen::Index k = 0; k < di && rest.size() + 1 < d; ++k) {
        Vector e = Vector::Unit(di, k);
        e -= u.dot(e) * u;
        for (const Vector& r : rest) e -= r.dot(e) * r;
        if (e.norm() > 1e-6) rest.push_back(e / e.norm());
      }
      if (d == 3 && rest.size() == 2) {
        for (int k = 0; k < 24; ++k) {
          const double a = k * std::numbers::pi / 48.0;
          frames.push_back({u, std::cos(a) * rest[0] + std::sin(a) * rest[1],
                            -std::sin(a) * rest[0] + std::cos(a) * rest[1]});
        }
      } else {
        rest.insert(rest.begin(), u);
        frames.push_back(rest);
      }
    }
  }

  std::vector<Fold> best_folds;
  double best_norm = -1.0;
  std::vector<double> proj(atoms.size());
  for (const auto& frame : frames) {
    std::vector<Fold> folds;
    double sq = 0.0;
    for (const Vector& u : frame) {
      for (std::size_t i = 0; i < atoms.size(); ++i) proj[i] = u.dot(atoms[i]);
      folds.push_back(best_fold(proj, mass));
      sq += folds.back().value * folds.back().value;
    }
    if (sq > best_norm) {
      best_norm = sq;
      best_folds = std::move(folds);
      for (std::size_t k = 0; k < frame.size(); ++k) best_folds[k].dir = frame[k];
    }
  }

  const auto h = static_cast<Eigen::Index>(best_folds.size());
  const double total = std::sqrt(std::max(best_norm, 0.0));
  Critic c;
  Matrix A(h, di);
  Vector b(h);
  c.readout = Vector::Zero(h);
  for (Eigen::Index k = 0; k < h; ++k) {
    const Fold& f = best_folds[static_cast<std::size_t>(k)];
    A.row(k) = f.dir.transpose();
    b[k] = -f.c1;
    if (total > 0.0) c.readout[k] = f.sign * f.value / total;
    const Matrix pick = Matrix(Vector::Unit(h, k).transpose());
    if (f.kind >= 1) c.stack.emplace_back(pick, Vector::Zero(1), 2.0, false);
    if (f.kind == 2) c.stack.emplace_back(pick, Vector::Constant(1, f.c2), 2.0, false);
  }
  c.lifting = Lifting(A, b);
  TrainResult res;
  res.critic = std::move(c);
  res.estimate = kr_objective(res.critic, mu, nu);
  res.trace.push_back(res.estimate);
  return res;
}

KrGap kr_gap(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu, const TrainConfig& cfg) {
  const double exact = w1_exact(mu, nu);
  const double est = train_critic(mu, nu, cfg).estimate;
  return {est, exact, exact - est};
}

}  // namespace lipctx
