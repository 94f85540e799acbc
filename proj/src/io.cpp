// SPDX-License-Identifier: Apache-2.0
#include "lipctx/io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "lipctx/error.hpp"

namespace lipctx {

namespace {

void write_number(double v, std::string& out) {
  if (std::isnan(v)) {
    out += "\"nan\"";
  } else if (std::isinf(v)) {
    out += v > 0 ? "\"inf\"" : "\"-inf\"";
  } else {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out += buf;
  }
}

bool flat_array(const Json& j) {
  for (const Json& e : j)
    if (e.is_structured()) return false;
  return true;
}

void write(const Json& j, std::string& out, int indent, int level) {
  const bool pretty = indent >= 0;
  auto newline = [&](int lv) {
    if (!pretty) return;
    out += '\n';
    out.append(static_cast<std::size_t>(indent * lv), ' ');
  };
  switch (j.type()) {
    case Json::value_t::number_float:
      write_number(j.get<double>(), out);
      break;
    case Json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        break;
      }
      const bool inline_items = !pretty || flat_array(j);
      out += '[';
      bool first = true;
      for (const Json& e : j) {
        if (!first) out += inline_items && pretty ? ", " : ",";
        first = false;
        if (!inline_items) newline(level + 1);
        write(e, out, indent, level + 1);
      }
      if (!inline_items) newline(level);
      out += ']';
      break;
    }
    case Json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        break;
      }
      out += '{';
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) out += ',';
        first = false;
        newline(level + 1);
        out += Json(it.key()).dump();
        out += pretty ? ": " : ":";
        write(it.value(), out, indent, level + 1);
      }
      newline(level);
      out += '}';
      break;
    }
    default:
      out += j.dump();
  }
}

double num(const Json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "inf") return HUGE_VAL;
    if (s == "-inf") return -HUGE_VAL;
    if (s == "nan") return std::nan("");
  }
  throw IoError("expected a number, got " + j.dump());
}

template <class F>
auto guarded(const char* what, F fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Json::exception& e) {
    throw IoError(std::string("malformed ") + what + ": " + e.what());
  }
}

Json to_json_list(const std::vector<double>& v) {
  Json out = Json::array();
  for (double x : v) out.push_back(x);
  return out;
}

}  // namespace

std::string dump_json(const Json& j, int indent) {
  std::string out;
  write(j, out, indent, 0);
  if (indent >= 0) out += '\n';
  return out;
}

Json parse_json(const std::string& text) {
  try {
    return Json::parse(text);
  } catch (const Json::exception& e) {
    throw IoError(std::string("invalid JSON: ") + e.what());
  }
}

Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return Json::parse(ss.str());
  } catch (const Json::exception& e) {
    throw IoError("invalid JSON in " + path + ": " + e.what());
  }
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("failed writing " + path);
}

Json to_json(const Vector& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

Vector vector_from_json(const Json& j) {
  if (!j.is_array()) throw IoError("expected an array of numbers");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = num(j[i]);
  return v;
}

Json to_json(const Matrix& m) {
  Json data = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index k = 0; k < m.cols(); ++k) data.push_back(m(i, k));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

Json to_json(const SparseMatrix& m) {
  const Eigen::Index cells = m.rows() * m.cols();
  if (cells <= 16 || 4 * m.nonZeros() >= cells) return to_json(to_dense(m));
  Json entries = Json::array();
  for (Eigen::Index i = 0; i < m.outerSize(); ++i)
    for (SparseMatrix::InnerIterator it(m, i); it; ++it)
      if (it.value() != 0.0) entries.push_back(Json::array({it.row(), it.col(), it.value()}));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"entries", std::move(entries)}};
}

SparseMatrix sparse_from_json(const Json& j) {
  return guarded("matrix", [&] {
    if (j.is_object() && j.contains("entries")) {
      const auto r = j.at("rows").get<Eigen::Index>();
      const auto c = j.at("cols").get<Eigen::Index>();
      std::vector<Eigen::Triplet<double>> t;
      for (const Json& e : j.at("entries")) {
        const auto i = e.at(0).get<Eigen::Index>();
        const auto k = e.at(1).get<Eigen::Index>();
        if (i < 0 || i >= r || k < 0 || k >= c) throw IoError("sparse entry out of range");
        t.emplace_back(i, k, num(e.at(2)));
      }
      SparseMatrix m(r, c);
      m.setFromTriplets(t.begin(), t.end());
      return m;
    }
    return to_sparse(matrix_from_json(j));
  });
}

Matrix matrix_from_json(const Json& j) {
  return guarded("matrix", [&]() -> Matrix {
    if (j.is_array()) {
      const auto r = static_cast<Eigen::Index>(j.size());
      const auto c = r == 0 ? Eigen::Index{0} : static_cast<Eigen::Index>(j[0].size());
      Matrix m(r, c);
      for (Eigen::Index i = 0; i < r; ++i) {
        const Json& row = j[static_cast<std::size_t>(i)];
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != c) throw IoError("ragged matrix rows");
        for (Eigen::Index k = 0; k < c; ++k) m(i, k) = num(row[static_cast<std::size_t>(k)]);
      }
      return m;
    }
    if (j.contains("entries")) return to_dense(sparse_from_json(j));
    const auto r = j.at("rows").get<Eigen::Index>();
    const auto c = j.at("cols").get<Eigen::Index>();
    const Json& data = j.at("data");
    if (static_cast<Eigen::Index>(data.size()) != r * c) throw IoError("matrix data length does not match shape");
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index k = 0; k < c; ++k) m(i, k) = num(data[static_cast<std::size_t>(i * c + k)]);
    return m;
  });
}

Json to_json(const EmpiricalMeasure& mu) {
  Json pts = Json::array();
  for (std::size_t i = 0; i < mu.size(); ++i) pts.push_back(to_json(Vector(mu.point(i))));
  return {{"points", std::move(pts)}, {"weights", to_json_list(mu.weights())}};
}

EmpiricalMeasure measure_from_json(const Json& j) {
  return guarded("measure", [&] {
    std::vector<Vector> pts;
    for (const Json& p : j.at("points")) pts.push_back(vector_from_json(p));
    std::vector<double> w;
    if (j.contains("weights"))
      for (const Json& x : j.at("weights")) w.push_back(num(x));
    if (pts.empty() || w.size() != pts.size()) return EmpiricalMeasure(pts, w);
    // Weights written by this library already sum to one; keep their bits.
    double total = 0.0;
    for (double x : w) total += x;
    bool nonneg = true;
    for (double x : w) nonneg = nonneg && x >= 0.0;
    if (!nonneg || std::abs(total - 1.0) > 1e-12) return EmpiricalMeasure(pts, w);
    Matrix m(pts.front().size(), static_cast<Eigen::Index>(pts.size()));
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (pts[i].size() != m.rows()) throw DimensionError("atoms of different dimension");
      m.col(static_cast<Eigen::Index>(i)) = pts[i];
    }
    return EmpiricalMeasure::from_normalized(std::move(m), std::move(w));
  });
}

Json to_json(const DomainBall& ball) { return {{"center", to_json(ball.center)}, {"radius", ball.radius}}; }

DomainBall ball_from_json(const Json& j) {
  return guarded("domain", [&] {
    DomainBall b{vector_from_json(j.at("center")), num(j.at("radius"))};
    if (!(b.radius >= 0.0)) throw IoError("domain radius must be nonnegative");
    return b;
  });
}

Json to_json(const ProductDomain& domain) {
  if (domain.num_blocks() == 1) return to_json(domain.block(0));
  Json blocks = Json::array();
  for (const DomainBall& b : domain.blocks()) blocks.push_back(to_json(b));
  return {{"blocks", std::move(blocks)}};
}

ProductDomain domain_from_json(const Json& j) {
  return guarded("domain", [&] {
    if (!j.contains("blocks")) return ProductDomain(ball_from_json(j));
    std::vector<DomainBall> blocks;
    for (const Json& b : j.at("blocks")) blocks.push_back(ball_from_json(b));
    return ProductDomain(std::move(blocks));
  });
}

Json to_json(const MlpLayer& layer) {
  return {{"kind", "mlp"}, {"W", to_json(layer.W)}, {"b", to_json(layer.b)}, {"tau", layer.tau}};
}

Json to_json(const AttentionLayer& layer) {
  return {{"kind", "attention"}, {"A", to_json(layer.A)}, {"eta", layer.eta}, {"domain", to_json(layer.domain)}};
}

MlpLayer mlp_from_json(const Json& j) {
  return guarded("mlp layer", [&] {
    if (j.value("kind", "mlp") != "mlp") throw IoError("expected an mlp layer");
    return MlpLayer(sparse_from_json(j.at("W")), vector_from_json(j.at("b")), num(j.at("tau")), false);
  });
}

AttentionLayer attention_from_json(const Json& j) {
  return guarded("attention layer", [&] {
    if (j.value("kind", "attention") != "attention") throw IoError("expected an attention layer");
    return AttentionLayer(sparse_from_json(j.at("A")), num(j.at("eta")), domain_from_json(j.at("domain")), false);
  });
}

Json to_json(const ScalarModel& model) {
  Json blocks = Json::array();
  for (const Block& blk : model.blocks) blocks.push_back({{"attention", to_json(blk.attention)}, {"mlp", to_json(blk.mlp)}});
  Json parts = Json::array();
  for (std::size_t s : model.lifting.blocks) parts.push_back(s);
  return {{"format", kModelFormat},
          {"lifting", {{"A", to_json(model.lifting.A)}, {"b", to_json(model.lifting.b)}, {"blocks", std::move(parts)}}},
          {"blocks", std::move(blocks)},
          {"readout", to_json(model.readout)},
          {"input_domain", to_json(model.input_domain)},
          {"lipschitz_c", model.lipschitz_c}};
}

ScalarModel model_from_json(const Json& j) {
  return guarded("model", [&] {
    if (j.contains("format") && j.at("format") != kModelFormat)
      throw IoError("unsupported model format " + j.at("format").dump());
    ScalarModel m;
    const Json& lift = j.at("lifting");
    std::vector<std::size_t> parts;
    if (lift.contains("blocks")) parts = lift.at("blocks").get<std::vector<std::size_t>>();
    m.lifting = Lifting(matrix_from_json(lift.at("A")), vector_from_json(lift.at("b")), std::move(parts));
    for (const Json& blk : j.at("blocks"))
      m.blocks.push_back({attention_from_json(blk.at("attention")), mlp_from_json(blk.at("mlp"))});
    m.readout = vector_from_json(j.at("readout"));
    m.input_domain = ball_from_json(j.at("input_domain"));
    m.lipschitz_c = j.contains("lipschitz_c") ? num(j.at("lipschitz_c")) : 1.0;
    m.validate();
    return m;
  });
}

Json to_json(const Witness& w) {
  Json measures = Json::array();
  for (const EmpiricalMeasure& mu : w.measures) measures.push_back(to_json(mu));
  Json queries = Json::array();
  for (const Vector& q : w.queries) queries.push_back(to_json(q));
  return {{"check", w.check}, {"measures", std::move(measures)}, {"queries", std::move(queries)}, {"ratio", w.ratio}};
}

Witness witness_from_json(const Json& j) {
  return guarded("witness", [&] {
    Witness w;
    w.check = j.at("check").get<std::string>();
    for (const Json& mu : j.at("measures")) w.measures.push_back(measure_from_json(mu));
    for (const Json& q : j.at("queries")) w.queries.push_back(vector_from_json(q));
    w.ratio = num(j.at("ratio"));
    return w;
  });
}

Json to_json(const CertReport& report) {
  Json checks = Json::array();
  for (const CertCheck& c : report.checks)
    checks.push_back(
        {{"name", c.name}, {"stat", c.stat}, {"bound", c.bound}, {"pass", c.pass}, {"n", c.n}, {"seed", c.seed}});
  Json out = {{"format", kReportFormat}, {"model_hash", report.model_hash}, {"checks", std::move(checks)}};
  if (report.witness) out["witness"] = to_json(*report.witness);
  return out;
}

CertReport report_from_json(const Json& j) {
  return guarded("report", [&] {
    if (j.at("format") != kReportFormat) throw IoError("unsupported report format " + j.at("format").dump());
    CertReport r;
    r.model_hash = j.at("model_hash").get<std::string>();
    for (const Json& c : j.at("checks"))
      r.checks.push_back({c.at("name").get<std::string>(), num(c.at("stat")), num(c.at("bound")),
                          c.at("pass").get<bool>(), c.at("n").get<std::size_t>(), c.at("seed").get<std::uint64_t>()});
    if (j.contains("witness")) r.witness = witness_from_json(j.at("witness"));
    return r;
  });
}

}  // namespace lipctx
