// SPDX-License-Identifier: Apache-2.0
#include "lipctx/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>
#include <ostream>

#include "CLI11.hpp"
#include "lipctx/certify.hpp"
#include "lipctx/constructions.hpp"
#include "lipctx/critic.hpp"
#include "lipctx/error.hpp"
#include "lipctx/io.hpp"
#include "lipctx/transport.hpp"

namespace lipctx {

namespace {

struct Options {
  std::string model, mu, nu, a, b, data, out;
  std::string op = "max";
  std::string method = "exact";
  std::size_t pairs = 500;
  std::size_t measures = 20;
  std::size_t anchors = 10;
  std::size_t context_pairs = 50;
  std::size_t samples = 100;
  std::uint64_t seed = 0;
  std::size_t iterations = 1000;
  double step = 0.05;
  std::size_t critic_width = 8;
  std::size_t critic_depth = 1;
  double lipschitz_c = 0.0;
  double eps = 0.05;
  bool check = false;
  std::size_t dim = 2, width = 4, depth = 2;
  double radius = 1.0;
  double attention_scale = 1.0;
  std::vector<std::string> tolerances;
};

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  std::string s = buf;
  if (s.find_first_of(".eni") == std::string::npos) s += ".0";
  return s;
}

std::map<std::string, double> parse_tolerances(const std::vector<std::string>& items) {
  std::map<std::string, double> tol{{"lattice", 1e-9}, {"target", 1e-6}, {"lipschitz", 1e-6}};
  for (const std::string& item : items) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw PreconditionError("tolerance override must look like name=value: " + item);
    const std::string name = item.substr(0, eq);
    if (!tol.count(name)) throw PreconditionError("unknown tolerance " + name);
    try {
      tol[name] = std::stod(item.substr(eq + 1));
    } catch (const std::exception&) {
      throw PreconditionError("bad tolerance value in " + item);
    }
  }
  return tol;
}

void emit(const Options& o, const std::string& text, std::ostream& out) {
  if (o.out.empty()) {
    out << text;
  } else {
    write_text_file(o.out, text);
  }
}

struct SampleFile {
  std::vector<Sample> samples;
  double lipschitz_c = 1.0;
};

SampleFile read_samples(const std::string& path) {
  const Json j = read_json_file(path);
  SampleFile f;
  try {
    if (j.contains("lipschitz_c")) f.lipschitz_c = j.at("lipschitz_c").get<double>();
    for (const Json& s : j.at("samples"))
      f.samples.push_back({measure_from_json(s.at("measure")), vector_from_json(s.at("query")), s.at("target").get<double>()});
  } catch (const Json::exception& e) {
    throw IoError("malformed sample file " + path + ": " + e.what());
  }
  return f;
}

TrainConfig train_config(const Options& o) {
  TrainConfig cfg;
  cfg.iterations = o.iterations;
  cfg.step_size = o.step;
  cfg.seed = o.seed;
  cfg.width = o.critic_width;
  cfg.depth = o.critic_depth;
  return cfg;
}

int cmd_certify(const Options& o, std::ostream& out) {
  const ScalarModel model = model_from_json(read_json_file(o.model));
  CertifyOptions co;
  co.n_measures = o.measures;
  co.n_pairs = o.pairs;
  co.n_anchors = o.anchors;
  co.n_context_pairs = o.context_pairs;
  co.seed = o.seed;
  const CertReport report = certify_model(model, co);
  const std::string text = dump_json(to_json(report));
  // Schema self-check before anything is written.
  report_from_json(parse_json(text));
  if (o.out.empty()) {
    out << text;
  } else {
    write_text_file(o.out, text);
    for (const CertCheck& c : report.checks)
      out << c.name << ' ' << format_double(c.stat) << " <= " << format_double(c.bound) << ' '
          << (c.pass ? "PASS" : "FAIL") << '\n';
  }
  return report.all_pass() ? kExitOk : kExitCheckFailed;
}

int cmd_w1(const Options& o, std::ostream& out) {
  const EmpiricalMeasure mu = measure_from_json(read_json_file(o.mu));
  const EmpiricalMeasure nu = measure_from_json(read_json_file(o.nu));
  double v = 0.0;
  if (o.method == "exact") {
    v = w1_exact(mu, nu);
  } else {
    v = train_critic(mu, nu, train_config(o)).estimate;
  }
  out << format_double(v) << '\n';
  return kExitOk;
}

int cmd_lattice(const Options& o, std::ostream& out) {
  const ScalarModel a = model_from_json(read_json_file(o.a));
  const ScalarModel b = model_from_json(read_json_file(o.b));
  const LatticeOp kind = o.op == "min" ? LatticeOp::Min : LatticeOp::Max;
  const ScalarModel g = lattice_combine(a, b, kind);
  if (!o.out.empty()) write_text_file(o.out, dump_json(to_json(g)));
  if (!o.check) {
    if (o.out.empty()) out << dump_json(to_json(g));
    return kExitOk;
  }
  const double tol = parse_tolerances(o.tolerances).at("lattice");
  double worst = 0.0;
  for (std::size_t s = 0; s < o.samples; ++s) {
    Rng rng = Rng::split(o.seed, s);
    const EmpiricalMeasure mu = random_measure(rng, g.input_domain, rng.integer(1, 8));
    const Vector x = sample_in_ball(rng, g.input_domain.center, g.input_domain.radius);
    const double va = evaluate(a, mu, x);
    const double vb = evaluate(b, mu, x);
    const double want = kind == LatticeOp::Min ? std::min(va, vb) : std::max(va, vb);
    worst = std::max(worst, std::abs(evaluate(g, mu, x) - want));
  }
  out << "lattice_check max_deviation " << format_double(worst) << (worst <= tol ? " PASS" : " FAIL") << '\n';
  return worst <= tol ? kExitOk : kExitCheckFailed;
}

int check_fit(const Options& o, const ScalarModel& g, const std::vector<Sample>& samples, double C, std::ostream& out) {
  const auto tol = parse_tolerances(o.tolerances);
  double miss = 0.0;
  std::vector<std::pair<EmpiricalMeasure, Vector>> anchors;
  for (const Sample& s : samples) {
    miss = std::max(miss, std::abs(evaluate(g, s.measure, s.query) - s.target));
    anchors.emplace_back(s.measure, s.query);
  }
  const CheckResult lip = empirical_joint_lipschitz(g, C, anchors, o.samples, o.seed, 1.0 + tol.at("lipschitz"));
  const bool hit = miss <= tol.at("target");
  out << "target_check max_miss " << format_double(miss) << (hit ? " PASS" : " FAIL") << '\n';
  out << "joint_lipschitz " << format_double(lip.check.stat) << " <= " << format_double(lip.check.bound)
      << (lip.check.pass ? " PASS" : " FAIL") << '\n';
  return hit && lip.check.pass ? kExitOk : kExitCheckFailed;
}

RswOptions rsw_options(const Options& o) {
  RswOptions ro;
  ro.eps = o.eps;
  ro.separator.train = train_config(o);
  return ro;
}

int cmd_separate(const Options& o, std::ostream& out) {
  const SampleFile f = read_samples(o.data);
  if (f.samples.size() != 2) throw PreconditionError("separate needs exactly two samples");
  const double C = o.lipschitz_c > 0.0 ? o.lipschitz_c : f.lipschitz_c;
  const Sample& s = f.samples[0];
  const Sample& t = f.samples[1];
  const RswOptions ro = rsw_options(o);
  const ScalarModel g = separator(s.measure, s.query, t.measure, t.query, s.target, t.target, C, ro.eps, ro.separator);
  if (!o.out.empty()) write_text_file(o.out, dump_json(to_json(g)));
  if (!o.check) {
    if (o.out.empty()) out << dump_json(to_json(g));
    return kExitOk;
  }
  return check_fit(o, g, f.samples, C, out);
}

int cmd_rsw(const Options& o, std::ostream& out) {
  const SampleFile f = read_samples(o.data);
  const double C = o.lipschitz_c > 0.0 ? o.lipschitz_c : f.lipschitz_c;
  const ScalarModel g = rsw_interpolate(f.samples, C, rsw_options(o));
  if (!o.out.empty()) write_text_file(o.out, dump_json(to_json(g)));
  if (!o.check) {
    if (o.out.empty()) out << dump_json(to_json(g));
    return kExitOk;
  }
  return check_fit(o, g, f.samples, C, out);
}

int cmd_make_model(const Options& o, std::ostream& out) {
  RandomModelConfig cfg;
  cfg.dim = o.dim;
  cfg.width = o.width;
  cfg.depth = o.depth;
  cfg.input_radius = o.radius;
  cfg.attention_scale = o.attention_scale;
  ScalarModel m = random_model(cfg, o.seed);
  if (o.lipschitz_c > 0.0) m.lipschitz_c = o.lipschitz_c;
  emit(o, dump_json(to_json(m)), out);
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Lipschitz in-context transformer toolkit", "lipctx"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* c) {
    c->add_option("--seed", o.seed, "Seed for all randomness")->capture_default_str();
    c->add_option("--out", o.out, "Output path (stdout when omitted)");
  };
  auto training = [&](CLI::App* c) {
    c->add_option("--iterations", o.iterations, "Critic training iterations")->capture_default_str();
    c->add_option("--step", o.step, "Critic step size")->capture_default_str();
    c->add_option("--critic-width", o.critic_width, "Critic width")->capture_default_str();
    c->add_option("--critic-depth", o.critic_depth, "Critic depth")->capture_default_str();
  };
  auto checking = [&](CLI::App* c) {
    c->add_flag("--check", o.check, "Verify the construction by direct evaluation");
    c->add_option("--samples", o.samples, "Number of check samples")->capture_default_str();
    c->add_option("--tol", o.tolerances, "Tolerance override name=value (lattice, target, lipschitz)");
  };

  CLI::App* cert = app.add_subcommand("certify", "Run the Lipschitz checks on a model");
  cert->add_option("--model", o.model)->required()->check(CLI::ExistingFile);
  cert->add_option("--measures", o.measures)->capture_default_str();
  cert->add_option("--pairs", o.pairs)->capture_default_str();
  cert->add_option("--anchors", o.anchors)->capture_default_str();
  cert->add_option("--context-pairs", o.context_pairs)->capture_default_str();
  common(cert);

  CLI::App* w1 = app.add_subcommand("w1", "Wasserstein-1 distance between two measures");
  w1->add_option("--mu", o.mu)->required()->check(CLI::ExistingFile);
  w1->add_option("--nu", o.nu)->required()->check(CLI::ExistingFile);
  w1->add_option("--method", o.method)->check(CLI::IsMember({"exact", "critic"}))->capture_default_str();
  training(w1);
  common(w1);

  CLI::App* lat = app.add_subcommand("lattice", "Pointwise min or max of two models");
  lat->add_option("--a", o.a)->required()->check(CLI::ExistingFile);
  lat->add_option("--b", o.b)->required()->check(CLI::ExistingFile);
  lat->add_option("--op", o.op)->check(CLI::IsMember({"min", "max"}))->capture_default_str();
  checking(lat);
  common(lat);

  CLI::App* sep = app.add_subcommand("separate", "Model taking prescribed values at two samples");
  CLI::App* rsw = app.add_subcommand("rsw-fit", "Interpolating model through a finite sample set");
  for (CLI::App* c : {sep, rsw}) {
    c->add_option("--data", o.data, "Sample file")->required()->check(CLI::ExistingFile);
    c->add_option("--lipschitz-c", o.lipschitz_c, "Context constant C (overrides the file)");
    c->add_option("--eps", o.eps)->capture_default_str();
    training(c);
    checking(c);
    common(c);
  }

  CLI::App* mk = app.add_subcommand("make-model", "Random clamped model");
  mk->add_option("--dim", o.dim)->capture_default_str();
  mk->add_option("--width", o.width)->capture_default_str();
  mk->add_option("--depth", o.depth)->capture_default_str();
  mk->add_option("--radius", o.radius)->capture_default_str();
  mk->add_option("--attention-scale", o.attention_scale)->capture_default_str();
  mk->add_option("--lipschitz-c", o.lipschitz_c);
  common(mk);

  std::vector<std::string> rev(args.rbegin(), args.rend());
  if (!rev.empty()) rev.pop_back();
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "lipctx-error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (cert->parsed()) return cmd_certify(o, out);
    if (w1->parsed()) return cmd_w1(o, out);
    if (lat->parsed()) return cmd_lattice(o, out);
    if (sep->parsed()) return cmd_separate(o, out);
    if (rsw->parsed()) return cmd_rsw(o, out);
    if (mk->parsed()) return cmd_make_model(o, out);
  } catch (const std::exception& e) {
    err << "lipctx-error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}

int run(const std::vector<std::string>& args) { return run(args, std::cout, std::cerr); }

}  // namespace lipctx
