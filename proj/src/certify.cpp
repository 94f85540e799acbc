// SPDX-License-Identifier: Apache-2.0
#include "lipctx/certify.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <cfloat>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <functional>
#include <thread>

#include "lipctx/error.hpp"
#include "lipctx/io.hpp"
#include "lipctx/transport.hpp"

namespace lipctx {

namespace {

// Runs fn(k) for k < n on the worker pool; results stay in index order.
template <class T, class F>
std::vector<T> parallel_map(std::size_t n, F fn) {
  std::vector<T> out(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t k = next++; k < n; k = next++) {
      try {
        out[k] = fn(k);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::min(worker_threads(), n);
  if (threads <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work);
    for (std::thread& th : pool) th.join();
  }
  for (const std::exception_ptr& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

struct Partial {
  double ratio = 0.0;
  std::size_t count = 0;
  std::optional<Witness> witness;

  void offer(double r, const std::function<Witness()>& make) {
    ++count;
    if (r > ratio || (!witness && r >= ratio)) {
      ratio = r;
      witness = make();
      witness->ratio = r;
    }
  }
};

CheckResult reduce(const std::string& name, std::vector<Partial> parts, double bound, std::uint64_t seed) {
  CheckResult res;
  res.check.name = name;
  res.check.bound = bound;
  res.check.seed = seed;
  for (Partial& p : parts) {
    res.check.n += p.count;
    if (p.witness && (!res.witness || p.ratio > res.check.stat)) {
      res.check.stat = p.ratio;
      res.witness = std::move(p.witness);
    }
  }
  if (res.witness) res.witness->check = name;
  res.check.pass = res.check.stat <= bound;
  return res;
}

Vector project_to_ball(const Vector& y, const DomainBall& ball) {
  const Vector off = y - ball.center;
  const double n = norm2(off);
  if (n <= ball.radius) return y;
  return ball.center + off * (ball.radius / n);
}

Vector jitter(Rng& rng, const Vector& y, const ProductDomain& domain, double scale) {
  Vector out = y;
  for (std::size_t k = 0; k < domain.num_blocks(); ++k) {
    const auto o = static_cast<Eigen::Index>(domain.offset(k));
    const auto s = static_cast<Eigen::Index>(domain.block_size(k));
    const DomainBall& ball = domain.block(k);
    const Vector moved = sample_in_ball(rng, y.segment(o, s), scale * ball.radius);
    out.segment(o, s) = project_to_ball(moved, ball);
  }
  return out;
}

EmpiricalMeasure jitter_measure(Rng& rng, const EmpiricalMeasure& mu, const ProductDomain& domain, double scale) {
  std::vector<Vector> pts;
  for (std::size_t i = 0; i < mu.size(); ++i) pts.push_back(jitter(rng, mu.point(i), domain, scale));
  return EmpiricalMeasure(pts, mu.weights());
}

EmpiricalMeasure random_measure_in(Rng& rng, const ProductDomain& domain, std::size_t n) {
  std::vector<Vector> pts;
  for (std::size_t i = 0; i < n; ++i) pts.push_back(sample_in_domain(rng, domain));
  return EmpiricalMeasure(pts);
}

// Relative scale of a local perturbation, log-uniform in [1e-4, 1].
double local_scale(Rng& rng) { return std::pow(10.0, -rng.uniform(0.0, 4.0)); }

double fd_step(double x) {
  const double h = std::cbrt(DBL_EPSILON) * std::max(1.0, std::abs(x));
  return std::exp2(std::floor(std::log2(h)));
}

void check_interior(const ProductDomain& domain, const Vector& x, const Vector& steps) {
  if (static_cast<std::size_t>(x.size()) != domain.dim()) throw DimensionError("query dimension mismatch");
  for (std::size_t k = 0; k < domain.num_blocks(); ++k) {
    const auto o = static_cast<Eigen::Index>(domain.offset(k));
    const auto s = static_cast<Eigen::Index>(domain.block_size(k));
    const DomainBall& ball = domain.block(k);
    if (norm2(x.segment(o, s) - ball.center) + norm2(steps.segment(o, s)) > ball.radius)
      throw DomainError("query too close to the domain boundary for finite differences");
  }
}

Vector steps_for(const Vector& x) {
  Vector h(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) h[i] = fd_step(x[i]);
  return h;
}

void require_clamped(const ScalarModel& model) {
  model.validate();
  if (!is_clamped(model)) throw PreconditionError("model is not clamped; refusing to certify it");
}

}  // namespace

std::size_t worker_threads() {
  if (const char* env = std::getenv("LIPCTX_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v > 0) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

Vector sample_in_domain(Rng& rng, const ProductDomain& domain) {
  Vector out(static_cast<Eigen::Index>(domain.dim()));
  for (std::size_t k = 0; k < domain.num_blocks(); ++k) {
    const DomainBall& ball = domain.block(k);
    if (!std::isfinite(ball.radius)) throw DomainError("cannot sample an unbounded domain");
    out.segment(static_cast<Eigen::Index>(domain.offset(k)), static_cast<Eigen::Index>(domain.block_size(k))) =
        sample_in_ball(rng, ball.center, ball.radius);
  }
  return out;
}

EmpiricalMeasure random_measure(Rng& rng, const DomainBall& ball, std::size_t n) {
  return random_measure_in(rng, ProductDomain(ball), n);
}

ContextConstants context_lipschitz_bound(const AttentionLayer& layer) {
  ContextConstants k;
  if (layer.is_identity()) return k;
  k.R = layer.domain.norm_bound();
  const double a = spectral_norm(layer.A);
  k.B = a * k.R * k.R;
  k.L_f = a * k.R;
  k.Z_lo = std::exp(-k.B);
  k.Z_hi = std::exp(k.B);
  k.C1 = layer.eta * (std::exp(2.0 * k.B) * a * (1.0 + k.R * k.L_f) + std::exp(4.0 * k.B) * a * k.R * k.L_f);
  if (!std::isfinite(k.C1)) {
    k.C1 = DBL_MAX;
    k.vacuous = true;
  }
  return k;
}

double model_context_bound(const ScalarModel& model, bool* vacuous) {
  double log_prod = 0.0;
  bool vac = false;
  for (const Block& blk : model.blocks) {
    const ContextConstants k = context_lipschitz_bound(blk.attention);
    vac = vac || k.vacuous;
    log_prod += std::log1p(k.C1);
  }
  double bound = 0.0;
  if (log_prod > 0.0)
    bound = norm2(model.readout) * spectral_norm(model.lifting.A) * std::expm1(log_prod) * (1.0 + 1e-12);
  if (!std::isfinite(bound) || vac) {
    bound = DBL_MAX;
    vac = true;
  }
  if (vacuous) *vacuous = vac;
  return bound;
}

CheckResult empirical_query_lipschitz(const ScalarModel& model, std::size_t n_measures, std::size_t n_pairs,
                                      std::uint64_t seed) {
  require_clamped(model);
  const DomainBall& ball = model.input_domain;
  auto parts = parallel_map<Partial>(n_measures, [&](std::size_t k) {
    Rng rng = Rng::split(seed, k);
    const EmpiricalMeasure mu = random_measure(rng, ball, rng.integer(1, 32));
    const ModelEvaluator f(model, mu);
    Partial part;
    for (std::size_t p = 0; p < n_pairs; ++p) {
      const Vector x1 = sample_in_ball(rng, ball.center, ball.radius);
      Vector x2 = p % 2 == 0 ? sample_in_ball(rng, ball.center, ball.radius)
                             : project_to_ball(sample_in_ball(rng, x1, local_scale(rng) * ball.radius), ball);
      const double d = norm2(x1 - x2);
      if (d < 1e-9) continue;
      const double r = std::abs(f(x1) - f(x2)) / d;
      part.offer(r, [&] { return Witness{"", {mu}, {x1, x2}, 0.0}; });
    }
    return part;
  });
  return reduce("query_lipschitz", std::move(parts), norm2(model.readout) * (1.0 + 1e-9), seed);
}

CheckResult empirical_context_lipschitz(const ScalarModel& model, std::size_t n_anchors, std::size_t n_pairs,
                                        std::uint64_t seed) {
  require_clamped(model);
  const DomainBall& ball = model.input_domain;
  const ProductDomain dom(ball);
  auto parts = parallel_map<Partial>(n_anchors, [&](std::size_t k) {
    Rng rng = Rng::split(seed, k);
    const Vector x = sample_in_ball(rng, ball.center, ball.radius);
    Partial part;
    for (std::size_t p = 0; p < n_pairs; ++p) {
      const EmpiricalMeasure mu = random_measure(rng, ball, rng.integer(1, 8));
      const EmpiricalMeasure nu = p % 2 == 0 ? random_measure(rng, ball, rng.integer(1, 8))
                                             : jitter_measure(rng, mu, dom, local_scale(rng));
      const double w = w1_exact(mu, nu);
      if (w < 1e-9) continue;
      const double r = std::abs(evaluate(model, mu, x) - evaluate(model, nu, x)) / w;
      part.offer(r, [&] { return Witness{"", {mu, nu}, {x}, 0.0}; });
    }
    return part;
  });
  return reduce("context_lipschitz", std::move(parts), model_context_bound(model), seed);
}

CheckResult empirical_layer_context_lipschitz(const AttentionLayer& layer, std::size_t n_triples,
                                              std::uint64_t seed) {
  const ContextConstants k = context_lipschitz_bound(layer);
  auto parts = parallel_map<Partial>(n_triples, [&](std::size_t t) {
    Rng rng = Rng::split(seed, t);
    const Vector x = sample_in_domain(rng, layer.domain);
    const EmpiricalMeasure mu = random_measure_in(rng, layer.domain, rng.integer(1, 8));
    const EmpiricalMeasure nu = t % 2 == 0 ? random_measure_in(rng, layer.domain, rng.integer(1, 8))
                                           : jitter_measure(rng, mu, layer.domain, local_scale(rng));
    Partial part;
    const double w = w1_exact(mu, nu);
    if (w >= 1e-9) {
      const double r = norm2(attn_forward(layer, mu, x) - attn_forward(layer, nu, x)) / w;
      part.offer(r, [&] { return Witness{"", {mu, nu}, {x}, 0.0}; });
    }
    return part;
  });
  return reduce("layer_context_lipschitz", std::move(parts), k.vacuous ? DBL_MAX : k.C1 * (1.0 + 1e-9), seed);
}

CheckResult empirical_joint_lipschitz(const ScalarModel& model, double C,
                                      const std::vector<std::pair<EmpiricalMeasure, Vector>>& anchors,
                                      std::size_t n_pairs, std::uint64_t seed, double bound) {
  if (anchors.empty()) throw PreconditionError("joint Lipschitz check needs anchors");
  const DomainBall& ball = model.input_domain;
  const ProductDomain dom(ball);
  const std::size_t m = anchors.size();
  std::vector<std::pair<std::size_t, std::size_t>> fixed;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) fixed.emplace_back(i, j);

  auto parts = parallel_map<Partial>(fixed.size() + n_pairs, [&](std::size_t t) {
    std::pair<EmpiricalMeasure, Vector> p1 = anchors.front();
    std::pair<EmpiricalMeasure, Vector> p2 = anchors.front();
    if (t < fixed.size()) {
      p1 = anchors[fixed[t].first];
      p2 = anchors[fixed[t].second];
    } else {
      Rng rng = Rng::split(seed, t);
      p1 = anchors[rng.integer(0, m - 1)];
      p2 = anchors[rng.integer(0, m - 1)];
      const double s1 = rng.uniform() < 0.5 ? 0.0 : local_scale(rng);
      const double s2 = local_scale(rng);
      if (s1 > 0.0) {
        p1.first = jitter_measure(rng, p1.first, dom, s1);
        p1.second = jitter(rng, p1.second, dom, s1);
      }
      p2.first = jitter_measure(rng, p2.first, dom, s2);
      p2.second = jitter(rng, p2.second, dom, s2);
    }
    Partial part;
    const double denom = norm2(p1.second - p2.second) + C * w1_exact(p1.first, p2.first);
    if (denom >= 1e-9) {
      const double r = std::abs(evaluate(model, p1.first, p1.second) - evaluate(model, p2.first, p2.second)) / denom;
      part.offer(r, [&] { return Witness{"", {p1.first, p2.first}, {p1.second, p2.second}, 0.0}; });
    }
    return part;
  });
  return reduce("joint_lipschitz", std::move(parts), bound, seed);
}

double jacobian_fd_check(const AttentionLayer& layer, const EmpiricalMeasure& mu, const Vector& x) {
  const Vector h = steps_for(x);
  check_interior(layer.domain, x, h);
  const AttentionContext ctx(layer, mu);
  const Matrix J = ctx.jacobian(x);
  double err = 0.0;
  for (Eigen::Index c = 0; c < x.size(); ++c) {
    Vector xp = x;
    Vector xm = x;
    xp[c] += h[c];
    xm[c] -= h[c];
    const Vector col = (ctx.forward(xp) - ctx.forward(xm)) / (xp[c] - xm[c]);
    for (Eigen::Index r = 0; r < x.size(); ++r)
      err = std::max(err, std::abs(col[r] - J(r, c)) / std::max(1.0, std::abs(J(r, c))));
  }
  return err;
}

double potential_grad_check(const AttentionLayer& layer, const EmpiricalMeasure& mu, const Vector& x,
                            bool use_mean) {
  const Vector h = steps_for(x);
  check_interior(layer.domain, x, h);
  const AttentionContext ctx(layer, mu);
  const Vector g = (use_mean || layer.eta == 0.0) ? ctx.mean(x) : Vector((x - ctx.forward(x)) / layer.eta);
  double err = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vector xp = x;
    Vector xm = x;
    xp[i] += h[i];
    xm[i] -= h[i];
    const double fd = (ctx.potential(xp) - ctx.potential(xm)) / (xp[i] - xm[i]);
    err = std::max(err, std::abs(g[i] - fd) / std::max(1.0, std::abs(fd)));
  }
  return err;
}

bool CertReport::all_pass() const {
  return std::all_of(checks.begin(), checks.end(), [](const CertCheck& c) { return c.pass; });
}

std::string model_hash(const ScalarModel& model) {
  const std::string text = dump_json(to_json(model), -1);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(text.data(), text.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error("SHA-256 digest failed");
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

CertReport certify_model(const ScalarModel& model, const CertifyOptions& opts) {
  require_clamped(model);
  CertReport report;
  report.model_hash = model_hash(model);

  const DomainChain chain = propagate_domains(model);
  CertCheck dc;
  dc.name = "domain_chain";
  dc.stat = static_cast<double>(std::count(chain.valid.begin(), chain.valid.end(), false));
  dc.bound = 0.0;
  dc.pass = dc.stat <= dc.bound;
  dc.n = chain.valid.size();
  dc.seed = opts.seed;
  report.checks.push_back(dc);

  for (CheckResult r : {empirical_query_lipschitz(model, opts.n_measures, opts.n_pairs, opts.seed),
                        empirical_context_lipschitz(model, opts.n_anchors, opts.n_context_pairs, opts.seed)}) {
    if (!r.check.pass && !report.witness) report.witness = std::move(r.witness);
    report.checks.push_back(r.check);
  }
  return report;
}

}  // namespace lipctx
