// SPDX-License-Identifier: Apache-2.0
#include "lipctx/constructions.hpp"

#include <cmath>
#include <limits>

#include "lipctx/error.hpp"
#include "lipctx/transport.hpp"

namespace lipctx {

namespace {

SparseMatrix zeros(std::size_t r, std::size_t c) {
  return SparseMatrix(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

SparseMatrix pad_columns(const SparseMatrix& m, std::size_t extra) {
  return block_diagonal(m, zeros(0, extra));
}

ProductDomain concat(const ProductDomain& a, const ProductDomain& b) {
  std::vector<DomainBall> blocks = a.blocks();
  blocks.insert(blocks.end(), b.blocks().begin(), b.blocks().end());
  return ProductDomain(std::move(blocks));
}

AttentionLayer identity_attention(std::size_t h) {
  const Vector c = Vector::Zero(static_cast<Eigen::Index>(h));
  return AttentionLayer(zeros(h, h), 0.0, ProductDomain(DomainBall{c, std::numeric_limits<double>::infinity()}),
                        false);
}

MlpLayer identity_mlp(std::size_t h) { return MlpLayer(zeros(1, h), Vector::Zero(1), 0.0, false); }

void require_same_input(const ScalarModel& a, const ScalarModel& b) {
  a.validate();
  b.validate();
  if (a.input_dim() != b.input_dim()) throw DimensionError("models have different input dimensions");
  const DomainBall& da = a.input_domain;
  const DomainBall& db = b.input_domain;
  const double scale = 1.0 + std::max(std::abs(da.radius), std::abs(db.radius));
  if (std::abs(da.radius - db.radius) > 1e-12 * scale || norm2(da.center - db.center) > 1e-12 * scale)
    throw PreconditionError("models have different input domains");
}

ScalarModel pad_front(const ScalarModel& m, std::size_t depth) {
  ScalarModel out = m;
  std::vector<Block> blocks;
  for (std::size_t k = m.depth(); k < depth; ++k) blocks.push_back(identity_block(m.width()));
  blocks.insert(blocks.end(), m.blocks.begin(), m.blocks.end());
  out.blocks = std::move(blocks);
  return out;
}

// Product-space model running both stacks side by side on the same input;
// readout left at zero.
ScalarModel stack_models(const ScalarModel& a0, const ScalarModel& b0) {
  require_same_input(a0, b0);
  const std::size_t depth = std::max(a0.depth(), b0.depth());
  const ScalarModel a = pad_front(a0, depth);
  const ScalarModel b = pad_front(b0, depth);
  const std::size_t ha = a.width();
  const std::size_t hb = b.width();

  ScalarModel out;
  Matrix qa(static_cast<Eigen::Index>(ha + hb), static_cast<Eigen::Index>(a.input_dim()));
  qa << a.lifting.A, b.lifting.A;
  Vector qb(static_cast<Eigen::Index>(ha + hb));
  qb << a.lifting.b, b.lifting.b;
  std::vector<std::size_t> parts = a.lifting.blocks;
  parts.insert(parts.end(), b.lifting.blocks.begin(), b.lifting.blocks.end());
  out.lifting = Lifting(std::move(qa), std::move(qb), std::move(parts));
  out.input_domain = a.input_domain;
  out.lipschitz_c = std::max(a.lipschitz_c, b.lipschitz_c);

  for (std::size_t l = 0; l < depth; ++l) {
    const AttentionLayer& ga = a.blocks[l].attention;
    const AttentionLayer& gb = b.blocks[l].attention;
    const MlpLayer mlp = parallel_mlp(a.blocks[l].mlp, b.blocks[l].mlp);
    const ProductDomain dom = concat(ga.domain, gb.domain);
    if (ga.is_identity() && gb.is_identity()) {
      out.blocks.push_back({identity_attention(ha + hb), mlp});
    } else if (gb.is_identity()) {
      out.blocks.push_back({AttentionLayer(block_diagonal(ga.A, zeros(hb, hb)), ga.eta, dom, false), mlp});
    } else if (ga.is_identity()) {
      out.blocks.push_back({AttentionLayer(block_diagonal(zeros(ha, ha), gb.A), gb.eta, dom, false), mlp});
    } else {
      auto [first, second] = parallel_attention(ga, gb);
      out.blocks.push_back({std::move(first), identity_mlp(ha + hb)});
      out.blocks.push_back({std::move(second), mlp});
    }
  }
  out.readout = Vector::Zero(static_cast<Eigen::Index>(ha + hb));
  return out;
}

// Keys of the balanced reduction tree in index order.
ScalarModel reduce_tree(std::vector<ScalarModel> models, LatticeOp kind) {
  while (models.size() > 1) {
    std::vector<ScalarModel> next;
    for (std::size_t i = 0; i + 1 < models.size(); i += 2) next.push_back(lattice_combine(models[i], models[i + 1], kind));
    if (models.size() % 2 == 1) next.push_back(std::move(models.back()));
    models = std::move(next);
  }
  return std::move(models.front());
}

}  // namespace

Block identity_block(std::size_t h) {
  if (h < 1) throw DimensionError("identity block needs h >= 1");
  return {identity_attention(h), identity_mlp(h)};
}

Gate minmax_gate(LatticeOp kind) {
  const double s = 1.0 / std::sqrt(2.0);
  Matrix w(1, 2);
  if (kind == LatticeOp::Min) {
    w << s, -s;
  } else {
    w << -s, s;
  }
  Vector readout(2);
  readout << 1.0, 0.0;
  return {MlpLayer(w, Vector::Zero(1), 2.0), readout};
}

MlpLayer parallel_mlp(const MlpLayer& f, const MlpLayer& g) {
  const double sf = std::sqrt(std::max(f.tau, 0.0));
  const double sg = std::sqrt(std::max(g.tau, 0.0));
  const SparseMatrix w = block_diagonal(SparseMatrix(sf * f.W), SparseMatrix(sg * g.W));
  Vector b(f.b.size() + g.b.size());
  b << sf * f.b, sg * g.b;
  return MlpLayer(w, std::move(b), 1.0);
}

std::pair<AttentionLayer, AttentionLayer> parallel_attention(const AttentionLayer& a, const AttentionLayer& b) {
  const std::size_t ha = a.dim();
  const std::size_t hb = b.dim();
  AttentionLayer first(block_diagonal(a.A, zeros(hb, hb)), a.eta, concat(a.domain, b.domain));
  AttentionLayer second(block_diagonal(zeros(ha, ha), b.A), b.eta, concat(attention_image(a, a.domain), b.domain));
  return {std::move(first), std::move(second)};
}

Vector apply_parallel_attention(const std::pair<AttentionLayer, AttentionLayer>& layers,
                                const PairedModelInput& input) {
  const AttentionContext first(layers.first, input.coupling.joint, 1);
  const Vector q = first.forward(input.query);
  const AttentionContext second(layers.second, first.push(input.coupling.joint), 2);
  return second.forward(q);
}

ScalarModel lattice_combine(const ScalarModel& a, const ScalarModel& b, LatticeOp kind) {
  ScalarModel out = stack_models(a, b);
  const auto ha = static_cast<Eigen::Index>(a.width());
  const auto hb = static_cast<Eigen::Index>(b.width());
  const double na = norm2(a.readout);
  const double nb = norm2(b.readout);
  if (na == 0.0 && nb == 0.0) return clamp_model(out);

  // Readouts normalized by the larger norm; the larger one becomes the
  // unit vector u the gate reports on.
  const double scale = std::max(na, nb);
  Vector u = Vector::Zero(ha + hb);
  Vector up = Vector::Zero(ha + hb);
  if (na >= nb) {
    u.head(ha) = a.readout / scale;
    up.tail(hb) = b.readout / scale;
  } else {
    u.tail(hb) = b.readout / scale;
    up.head(ha) = a.readout / scale;
  }
  Matrix proj(2, ha + hb);
  proj.row(0) = u.transpose();
  proj.row(1) = up.transpose();
  const Gate gate = minmax_gate(kind);
  const Matrix w = to_dense(gate.layer.W) * proj;
  out.blocks.push_back({identity_attention(static_cast<std::size_t>(ha + hb)),
                        MlpLayer(w, Vector::Zero(1), gate.layer.tau)});
  out.readout = scale * u;
  return clamp_model(out);
}

ScalarModel sum_models(const ScalarModel& a, const ScalarModel& b) {
  ScalarModel out = stack_models(a, b);
  out.readout << a.readout, b.readout;
  out.lipschitz_c = a.lipschitz_c + b.lipschitz_c;
  return clamp_model(out);
}

ScalarModel affine_rescale(const ScalarModel& m, double alpha, double beta) {
  m.validate();
  if (!std::isfinite(alpha) || !std::isfinite(beta)) throw Error("affine coefficients must be finite");
  const auto h = static_cast<Eigen::Index>(m.width());
  ScalarModel out;
  Matrix qa = Matrix::Zero(h + 1, m.lifting.A.cols());
  qa.topRows(h) = m.lifting.A;
  Vector qb(h + 1);
  qb << m.lifting.b, 1.0;
  std::vector<std::size_t> parts = m.lifting.blocks;
  parts.push_back(1);
  out.lifting = Lifting(std::move(qa), std::move(qb), std::move(parts));
  const ProductDomain unit(DomainBall{Vector::Ones(1), 0.0});
  for (const Block& blk : m.blocks) {
    AttentionLayer attn(block_diagonal(blk.attention.A, zeros(1, 1)), blk.attention.eta,
                        concat(blk.attention.domain, unit), false);
    MlpLayer mlp(pad_columns(blk.mlp.W, 1), blk.mlp.b, blk.mlp.tau, false);
    out.blocks.push_back({std::move(attn), std::move(mlp)});
  }
  out.readout.resize(h + 1);
  out.readout << alpha * m.readout, beta;
  out.input_domain = m.input_domain;
  out.lipschitz_c = m.lipschitz_c;
  return clamp_model(out);
}

ScalarModel constant_model(const DomainBall& domain, double value) {
  ScalarModel m;
  m.lifting = Lifting::identity(domain.dim());
  m.readout = Vector::Zero(static_cast<Eigen::Index>(domain.dim()));
  m.input_domain = domain;
  return affine_rescale(m, 0.0, value);
}

ScalarModel kr_integrator(const Critic& critic, double C, const DomainBall& domain) {
  if (!(C > 0.0) || !std::isfinite(C)) throw Error("C must be positive and finite");
  if (domain.dim() != critic.input_dim()) throw DimensionError("domain dimension does not match the critic");
  const std::size_t h = critic.width();
  const auto hi = static_cast<Eigen::Index>(h);

  ScalarModel m;
  Matrix qa = Matrix::Zero(hi + 1, critic.lifting.A.cols());
  qa.topRows(hi) = critic.lifting.A;
  Vector qb = Vector::Zero(hi + 1);
  qb.head(hi) = critic.lifting.b;
  std::vector<std::size_t> parts = critic.lifting.blocks;
  parts.push_back(1);
  m.lifting = Lifting(std::move(qa), std::move(qb), std::move(parts));
  m.input_domain = domain;
  m.lipschitz_c = C;
  for (const MlpLayer& f : critic.stack)
    m.blocks.push_back({identity_attention(h + 1), MlpLayer(pad_columns(f.W, 1), f.b, f.tau)});

  // The extra coordinate starts at zero and no layer writes to it before the
  // integration layer, so every score <x, A y> vanishes there.
  if (m.lifting.A.row(hi).any() || m.lifting.b[hi] != 0.0) throw Error("integration coordinate is not zero");
  for (const Block& blk : m.blocks)
    if (sub_block(blk.mlp.W, 0, blk.mlp.width(), h, 1).nonZeros() != 0) throw Error("integration coordinate is written");

  std::vector<Eigen::Triplet<double>> t;
  for (Eigen::Index j = 0; j < hi; ++j)
    if (critic.readout[j] != 0.0) t.emplace_back(hi, j, critic.readout[j]);
  SparseMatrix a(hi + 1, hi + 1);
  a.setFromTriplets(t.begin(), t.end());

  m.readout = Vector::Zero(hi + 1);
  const ProductDomain image = propagate_domains(m).domains.back();
  const double sup = sup_ay_bound(a, image);
  if (sup == 0.0) {
    ScalarModel zero = constant_model(domain, 0.0);
    zero.lipschitz_c = C;
    return zero;
  }
  m.blocks.push_back({AttentionLayer(a, 2.0 / (sup * sup), image, false), identity_mlp(h + 1)});
  ScalarModel out = clamp_model(m);
  out.readout[hi] = -(C / out.blocks.back().attention.eta);
  return out;
}

ScalarModel separator(const EmpiricalMeasure& mu, const Vector& x, const EmpiricalMeasure& mu2, const Vector& x2,
                      double a, double b, double C, double eps, const SeparatorOptions& opts) {
  const std::size_t d = static_cast<std::size_t>(x.size());
  if (mu.dim() != d || mu2.dim() != d || static_cast<std::size_t>(x2.size()) != d)
    throw DimensionError("separator inputs have inconsistent dimensions");
  if (!(C > 0.0) || !std::isfinite(a) || !std::isfinite(b)) throw Error("separator needs C > 0 and finite targets");
  const double dx = norm2(x - x2);
  const double w1 = w1_exact(mu, mu2);
  if (dx == 0.0 && w1 == 0.0) throw PreconditionError("separator anchors coincide");
  if (!(std::abs(a - b) < dx + C * w1 - 1e-9))
    throw PreconditionError("targets violate |a - b| < ||x - x'|| + C W1(mu, mu')");

  DomainBall domain;
  if (opts.domain) {
    domain = *opts.domain;
  } else {
    std::vector<Vector> pts{x, x2};
    for (std::size_t i = 0; i < mu.size(); ++i) pts.push_back(mu.point(i));
    for (std::size_t i = 0; i < mu2.size(); ++i) pts.push_back(mu2.point(i));
    domain = bounding_ball(pts, opts.margin);
  }

  ScalarModel query_part;
  query_part.lifting = Lifting::identity(d);
  query_part.readout = dx > 0.0 ? Vector((x - x2) / dx) : Vector::Zero(static_cast<Eigen::Index>(d));
  query_part.input_domain = domain;
  query_part.lipschitz_c = C;

  ScalarModel lambda = query_part;
  if (w1 > 0.0) {
    TrainResult best = fold_critic(mu, mu2);
    for (int k = 0; k <= opts.retries; ++k) {
      if (best.estimate >= w1 - eps && std::abs(a - b) < dx + C * best.estimate) break;
      TrainConfig cfg = opts.train;
      cfg.iterations <<= k;
      cfg.seed += static_cast<std::uint64_t>(k);
      TrainResult r = train_critic(mu, mu2, cfg);
      if (r.estimate > best.estimate) best = std::move(r);
    }
    if (best.estimate > 0.0) lambda = sum_models(query_part, kr_integrator(best.critic, C, domain));
  }
  lambda.lipschitz_c = C;

  double alpha = 0.0;
  if (a != b) {
    const double p = evaluate(lambda, mu, x);
    const double q = evaluate(lambda, mu2, x2);
    if (p == q) throw Error("degenerate separator: both anchors give the same value");
    alpha = (a - b) / (p - q);
    if (std::abs(alpha) > 1.0 + 1e-12)
      throw PreconditionError("critic is too weak to separate the anchors with slope <= 1");
    ScalarModel out = affine_rescale(lambda, alpha, b - alpha * q);
    out.lipschitz_c = C;
    return out;
  }
  ScalarModel out = affine_rescale(lambda, 0.0, b);
  out.lipschitz_c = C;
  return out;
}

ScalarModel rsw_interpolate(const std::vector<Sample>& in, double C, const RswOptions& opts) {
  if (in.empty()) throw PreconditionError("interpolation needs at least one sample");
  if (!(C > 0.0)) throw Error("C must be positive");
  const std::size_t d = static_cast<std::size_t>(in.front().query.size());

  // Drop exact duplicates; conflicting duplicates are incompatible.
  std::vector<Sample> s;
  for (const Sample& cand : in) {
    if (static_cast<std::size_t>(cand.query.size()) != d || cand.measure.dim() != d)
      throw DimensionError("samples have inconsistent dimensions");
    bool dup = false;
    for (const Sample& kept : s) {
      if (kept.query == cand.query && same_weighted_multiset(kept.measure, cand.measure, 0.0)) {
        if (kept.target != cand.target) throw PreconditionError("identical inputs with different targets");
        dup = true;
      }
    }
    if (!dup) s.push_back(cand);
  }
  const std::size_t n = s.size();
  if (n > opts.max_samples) throw PreconditionError("too many samples for interpolation");

  std::vector<Vector> pts;
  for (const Sample& smp : s) {
    pts.push_back(smp.query);
    for (std::size_t i = 0; i < smp.measure.size(); ++i) pts.push_back(smp.measure.point(i));
  }
  SeparatorOptions sep = opts.separator;
  if (!sep.domain) sep.domain = bounding_ball(pts, sep.margin);

  if (n == 1) {
    ScalarModel m = constant_model(*sep.domain, s[0].target);
    m.lipschitz_c = C;
    return m;
  }

  // Compatibility, with the targets pulled toward their mean when some pair
  // is tight.
  bool tight = false;
  std::vector<std::vector<double>> gap(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      gap[i][j] = norm2(s[i].query - s[j].query) + C * w1_exact(s[i].measure, s[j].measure);
      const double diff = std::abs(s[i].target - s[j].target);
      if (diff > gap[i][j] + 1e-12) throw PreconditionError("targets are not (1, C)-Lipschitz compatible");
      if (diff >= gap[i][j] - 1e-9 && diff > 0.0) tight = true;
    }
  }
  if (tight) {
    double mean = 0.0;
    for (const Sample& smp : s) mean += smp.target;
    mean /= static_cast<double>(n);
    for (Sample& smp : s) smp.target = mean + (1.0 - 1e-6) * (smp.target - mean);
  }

  auto make = [&](std::size_t i, std::size_t j) {
    return separator(s[i].measure, s[i].query, s[j].measure, s[j].query, s[i].target, s[j].target, C, opts.eps, sep);
  };
  if (n == 2) return make(0, 1);

  std::vector<std::vector<ScalarModel>> f(n, std::vector<ScalarModel>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) f[i][j] = make(i, j);
  std::vector<ScalarModel> rows;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<ScalarModel> parts;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) parts.push_back(i < j ? f[i][j] : f[j][i]);
    rows.push_back(reduce_tree(std::move(parts), LatticeOp::Min));
  }
  ScalarModel g = reduce_tree(std::move(rows), LatticeOp::Max);
  g.lipschitz_c = C;
  return g;
}

}  // namespace lipctx
