// Command-line driver: forward | dtn | runge | peel | stability.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lipstab/recover.hpp"
#include "lipstab/report.hpp"
#include "lipstab/scenario.hpp"

namespace fs = std::filesystem;
using namespace lipstab;

namespace {

struct Flags {
  std::string scenario;
  std::string out = ".";
  std::optional<std::string> h;  ///< decimal or fraction such as 1/64
  std::vector<double> eps;
  std::optional<int> pairs;
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  std::optional<double> noise;
};

/// 0 silent, 1 summary lines (default), 2 adds per-step detail.
int log_level() {
  const char* v = std::getenv("LIPSTAB_LOG");
  if (v == nullptr) return 1;
  std::string s(v);
  if (s == "0" || s == "quiet") return 0;
  if (s == "2" || s == "debug") return 2;
  return 1;
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::SingularOperator:
    case ErrorKind::SpectralFailure:
    case ErrorKind::NoConvergence:
    case ErrorKind::TargetUnreachable:
    case ErrorKind::NotASolution:
    case ErrorKind::ProbeOutsideWindow:
    case ErrorKind::ExtrapolationUnstable:
      return 3;
    default:
      return 2;
  }
}

void emit_error(std::string_view kind, const std::string& message) {
  std::string escaped;
  for (char c : message) {
    if (c == '"' || c == '\\') escaped += '\\';
    escaped += c == '\n' ? ' ' : c;
  }
  std::cerr << "error kind=" << kind << " message=\"" << escaped << "\"\n";
}

std::ofstream open_out(const Flags& f, const std::string& name) {
  fs::path p = fs::path(f.out) / name;
  std::ofstream out(p);
  if (!out) fail(ErrorKind::IoError, "cannot write " + p.string());
  if (log_level() >= 1) std::cout << "wrote " << p.string() << '\n';
  return out;
}

struct Context {
  Scenario sc;
  double h = 0.0;
  std::unique_ptr<Mesh> mesh;
};

Context prepare(const Flags& f) {
  Context c;
  c.sc = load_scenario(f.scenario);
  c.h = f.h ? parse_number(*f.h) : c.sc.h;
  if (!(c.h > 0.0)) fail(ErrorKind::InvalidConfig, "--h must be positive");
  c.mesh = std::make_unique<Mesh>(c.sc.partition, c.h);
  std::error_code ec;
  fs::create_directories(f.out, ec);
  if (ec) fail(ErrorKind::IoError, "cannot create output directory " + f.out);
  return c;
}

double sine_profile(const FlatPortion& p, const Point& x) {
  double v = 1.0;
  for (int t : p.tangent_axes()) {
    double s = x[t] - p.anchor[t];
    if (std::abs(s) >= p.extent) return 0.0;
    v *= std::sin(std::numbers::pi * (s + p.extent) / (2.0 * p.extent));
  }
  return std::abs(x[p.normal_axis] - p.anchor[p.normal_axis]) < 1e-9 ? v : 0.0;
}

int cmd_forward(const Flags& f) {
  Context c = prepare(f);
  const Mesh& mesh = *c.mesh;
  DirichletSolver solver(mesh, c.sc.partition->all(), c.sc.q1, c.sc.tolerances.solver);
  solver.require_spectral();
  const FlatPortion& p = c.sc.partition->portion(c.sc.forward.portion - 1);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(mesh.node_count());
  if (c.sc.forward.datum == ForwardDatum::Bump) {
    TraceSpace trace(mesh, p);
    g = trace.embed(probe_trace(trace, p.anchor, c.sc.partition->r0() / 8.0, ProbeShape::Bump));
  } else {
    for (int i = 0; i < mesh.node_count(); ++i) {
      const Point& x = mesh.node(i);
      if (c.sc.forward.datum == ForwardDatum::Sine) {
        g[i] = sine_profile(p, x);
      } else {
        const auto& k = c.sc.forward.coeffs;
        g[i] = k[0];
        for (int d = 0; d < mesh.dimension(); ++d) g[i] += k[static_cast<std::size_t>(d + 1)] * x[d];
      }
    }
  }
  SolveReport r = solver.solve_dirichlet(g);
  auto out = open_out(f, "forward.csv");
  HeaderFields hdr = report_header(c.sc, "forward", c.h);
  hdr.emplace_back("residual", format_double(r.residual));
  hdr.emplace_back("lambda_min", format_double(solver.spectral().lambda_min));
  write_header(out, hdr);
  write_solution_csv(out, mesh, r.solution);
  return 0;
}

int cmd_dtn(const Flags& f) {
  Context c = prepare(f);
  const Mesh& mesh = *c.mesh;
  TraceSpace trace(mesh, c.sc.partition->portion(0));
  DirichletSolver s1(mesh, c.sc.partition->all(), c.sc.q1, c.sc.tolerances.solver);
  DirichletSolver s2(mesh, c.sc.partition->all(), c.sc.q2, c.sc.tolerances.solver);
  s1.require_spectral();
  s2.require_spectral();
  DtnMatrix l1 = assemble_dtn(s1, trace).dtn;
  DtnMatrix l2 = assemble_dtn(s2, trace).dtn;
  HeaderFields hdr = report_header(c.sc, "dtn", c.h);
  {
    auto out = open_out(f, "dtn_q1.csv");
    write_dtn_csv(out, l1, hdr);
  }
  {
    auto out = open_out(f, "dtn_q2.csv");
    write_dtn_csv(out, l2, hdr);
  }
  double gap = dtn_gap(l1, l2, trace);
  auto out = open_out(f, "gap.csv");
  write_header(out, hdr);
  out << "portion,delta,symmetry_q1,symmetry_q2\n1," << format_double(gap) << ',' << format_double(l1.symmetry_error())
      << ',' << format_double(l2.symmetry_error()) << '\n';
  if (log_level() >= 1) std::cout << "delta_1 = " << format_double(gap) << '\n';
  return 0;
}

int cmd_runge(const Flags& f) {
  Context c = prepare(f);
  const Mesh& mesh = *c.mesh;
  const DomainPartition& part = *c.sc.partition;
  const int k = c.sc.runge.step;
  if (k < 1 || k >= part.chain_length()) {
    fail(ErrorKind::IndexOutOfChain, "runge step must be between 1 and " + std::to_string(part.chain_length() - 1));
  }
  RestrictionOperator a(mesh, part.remaining(k), part.remaining(k - 1), part.portion(k - 1), c.sc.q1,
                        c.sc.tolerances);
  Eigen::VectorXd target;
  if (c.sc.runge.target == RungeTarget::Bump) {
    TraceSpace next(mesh, part.portion(k));
    DirichletSolver inner(mesh, part.remaining(k), c.sc.q1, c.sc.tolerances.solver);
    inner.require_spectral();
    Eigen::VectorXd g = probe_trace(next, next.portion().anchor, part.r0() / 8.0, ProbeShape::Bump);
    target = a.to_inner(inner.solve_dirichlet(next.embed(g)).solution);
  } else {
    target.resize(static_cast<Eigen::Index>(a.inner_nodes().size()));
    for (std::size_t i = 0; i < a.inner_nodes().size(); ++i) target[static_cast<Eigen::Index>(i)] = mesh.node(a.inner_nodes()[i])[0];
  }
  std::vector<double> eps = f.eps.empty() ? c.sc.runge.eps : f.eps;
  std::vector<FrontierRow> rows = frontier_sweep(a, target, eps);
  FrontierFit fit = fit_frontier(rows, a.l2_norm(target));
  HeaderFields hdr = report_header(c.sc, "runge", c.h);
  hdr.emplace_back("step", std::to_string(k));
  {
    auto out = open_out(f, "spectrum.csv");
    write_header(out, hdr);
    write_spectrum_csv(out, a.singular_values());
  }
  {
    auto out = open_out(f, "sweep.csv");
    write_header(out, hdr);
    write_sweep_csv(out, rows);
  }
  auto out = open_out(f, "frontier.csv");
  write_header(out, hdr);
  out << "mu,slope,intercept,r2,points,valid,constant\n"
      << format_double(fit.mu) << ',' << format_double(fit.slope) << ',' << format_double(fit.intercept) << ','
      << format_double(fit.r2) << ',' << fit.points << ',' << (fit.valid ? 1 : 0) << ','
      << format_double(fit.valid ? fit.constant() : std::nan("")) << '\n';
  for (const FrontierRow& r : rows) {
    if (!r.reached) fail(ErrorKind::TargetUnreachable, "eps = " + format_double(r.epsilon) + " is below the reachable error");
  }
  return 0;
}

int cmd_peel(const Flags& f) {
  Context c = prepare(f);
  PeelInputs in;
  in.mesh = c.mesh.get();
  in.q1 = c.sc.q1;
  in.q2 = c.sc.q2;
  if (!c.sc.peel.measured1.empty()) {
    for (int i = 0; i < 2; ++i) {
      const std::string& path = i == 0 ? c.sc.peel.measured1 : c.sc.peel.measured2;
      std::ifstream file(path);
      if (!file) fail(ErrorKind::IoError, "cannot open measured DtN " + path);
      Eigen::MatrixXd m = read_dtn_csv(file).values;
      (i == 0 ? in.measured1 : in.measured2) = m;
    }
  }
  PeelOptions opts;
  opts.eps_schedule = f.eps.empty() ? c.sc.peel.eps : f.eps;
  opts.correction = c.sc.peel.correction;
  opts.noise = f.noise.value_or(c.sc.peel.noise);
  opts.runge = c.sc.tolerances;
  if (opts.noise > 0.0) {
    if (!f.seed && !c.sc.peel.seed) fail(ErrorKind::InvalidConfig, "noise needs a seed");
    opts.seed = f.seed.value_or(c.sc.peel.seed.value_or(1));
  }
  PeelReport report = peel(in, opts);
  HeaderFields hdr = report_header(c.sc, "peel", c.h);
  hdr.emplace_back("noise", format_double(opts.noise));
  {
    auto out = open_out(f, "peel.csv");
    write_header(out, hdr);
    write_peel_csv(out, report, c.sc.config.dimension);
  }
  {
    auto out = open_out(f, "peel.log");
    write_header(out, hdr);
    write_peel_log(out, report);
  }
  if (log_level() >= 2) write_peel_log(std::cout, report);
  if (!report.completed) {
    auto colon = report.failure.find(": ");
    std::string kind = report.failure.substr(0, colon);
    emit_error(kind, colon == std::string::npos ? report.failure : report.failure.substr(colon + 2));
    return exit_code(report.failure_kind.value_or(ErrorKind::NoConvergence));
  }
  return 0;
}

int cmd_stability(const Flags& f) {
  Context c = prepare(f);
  StabilityOptions opts;
  opts.pairs = f.pairs.value_or(c.sc.stability.pairs);
  if (!f.seed && !c.sc.stability.seed) fail(ErrorKind::InvalidConfig, "stability sampling needs a seed");
  opts.seed = f.seed.value_or(c.sc.stability.seed.value_or(1));
  opts.E0 = c.sc.stability.E0;
  opts.jobs = f.jobs;
  opts.solver = c.sc.tolerances.solver;
  StabilityReport report = stability_experiment(*c.mesh, opts);
  HeaderFields hdr = report_header(c.sc, "stability", c.h);
  hdr.emplace_back("seed", std::to_string(opts.seed));
  hdr.emplace_back("E0", format_double(opts.E0));
  hdr.emplace_back("rejected", std::to_string(report.rejected));
  {
    auto out = open_out(f, "stability.csv");
    write_header(out, hdr);
    write_stability_csv(out, report);
  }
  {
    auto out = open_out(f, "stability.log");
    write_header(out, hdr);
    for (const std::string& line : report.log) out << line << '\n';
    out << "max_ratio=" << format_double(report.max_ratio) << '\n';
  }
  if (log_level() >= 1) std::cout << "max ratio E/delta_1 = " << format_double(report.max_ratio) << '\n';
  if (static_cast<int>(report.rows.size()) < opts.pairs) {
    fail(ErrorKind::NoConvergence, "sampling found only " + std::to_string(report.rows.size()) + " admissible pairs");
  }
  return 0;
}

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--scenario", f.scenario, "Scenario file")->required();
  cmd->add_option("--out", f.out, "Output directory (created if missing)");
  cmd->add_option("--h", f.h, "Mesh spacing such as 0.03125 or 1/32, overrides [mesh] h");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lipschitz stability lab for the inverse Schroedinger problem with piecewise-affine potentials.\n"
               "Environment: LIPSTAB_LOG=0|1|2 sets log verbosity (default 1).\n"
               "Exit codes: 0 success, 2 configuration or I/O error, 3 numerical failure."};
  app.set_help_flag("--help", "Print this help message and exit");
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  Flags f;

  auto* forward = app.add_subcommand("forward", "Solve the Dirichlet problem on the whole domain; writes forward.csv");
  add_common(forward, f);

  auto* dtn = app.add_subcommand("dtn", "Assemble the local DtN matrices on the first portion; writes dtn_q1.csv, dtn_q2.csv, gap.csv");
  add_common(dtn, f);

  auto* runge = app.add_subcommand("runge", "Runge approximation sweep; writes spectrum.csv, sweep.csv, frontier.csv");
  add_common(runge, f);
  runge->add_option("--eps", f.eps, "Accuracy levels, overrides [runge] eps")->delimiter(',');

  auto* peel_cmd = app.add_subcommand("peel", "Peel the chain and recover q1 - q2; writes peel.csv and peel.log");
  add_common(peel_cmd, f);
  peel_cmd->add_option("--eps", f.eps, "Runge tolerance per transfer, overrides the absorption rule")->delimiter(',');
  peel_cmd->add_option("--noise", f.noise, "Relative perturbation of the measured DtN entries");
  peel_cmd->add_option("--seed", f.seed, "Seed for the noise");

  auto* stab = app.add_subcommand("stability", "Sampled E/delta_1 ratios; writes stability.csv and stability.log");
  add_common(stab, f);
  stab->add_option("--pairs", f.pairs, "Number of admissible pairs");
  stab->add_option("--seed", f.seed, "Sampling seed");
  stab->add_option("--jobs", f.jobs, "Worker threads (default 1)")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    emit_error("InvalidConfig", e.what());
    return 2;
  }

  try {
    if (forward->parsed()) return cmd_forward(f);
    if (dtn->parsed()) return cmd_dtn(f);
    if (runge->parsed()) return cmd_runge(f);
    if (peel_cmd->parsed()) return cmd_peel(f);
    return cmd_stability(f);
  } catch (const Error& e) {
    std::string what = e.what();
    auto colon = what.find(": ");
    emit_error(to_string(e.kind()), colon == std::string::npos ? what : what.substr(colon + 2));
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    emit_error("Internal", e.what());
    return 4;
  }
}
