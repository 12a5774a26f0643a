// Acceptance run: one PASS/FAIL line per criterion, nonzero exit when any criterion fails.

#include <chrono>
#include <cstdio>
#include <functional>
#include <numbers>
#include <sstream>

#include "lipstab/scenario.hpp"
#include "support.hpp"

using namespace lipstab;
using namespace lipstab::testing;

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kMachine = 2.220446049250313e-16;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string g(double v) { return fmt("%.4g", v); }

std::string scenario_path(const std::string& name) { return std::string(LIPSTAB_SCENARIO_DIR) + "/" + name; }

double max_error(const Mesh& mesh, const Eigen::VectorXd& u, const std::function<double(const Point&)>& f) {
  double e = 0.0;
  for (int i = 0; i < mesh.node_count(); ++i) e = std::max(e, std::abs(u[i] - f(mesh.node(i))));
  return e;
}

PiecewiseAffinePotential random_potential(const PartitionPtr& p, std::mt19937_64& rng, double spread) {
  std::uniform_real_distribution<double> u(-spread, spread);
  std::vector<AffinePiece> pieces;
  for (int j = 0; j < p->subdomain_count(); ++j) pieces.push_back(piece(u(rng), u(rng), u(rng)));
  return PiecewiseAffinePotential(p, pieces);
}

/// Largest singular value of L^{-1} P L^{-T} with G = L L^T, dense.
double whitened_oracle(const Eigen::MatrixXd& p, const Eigen::MatrixXd& gram) {
  Eigen::LLT<Eigen::MatrixXd> llt(gram);
  Eigen::MatrixXd l = llt.matrixL();
  Eigen::MatrixXd linv = l.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(gram.rows(), gram.cols()));
  Eigen::BDCSVD<Eigen::MatrixXd> svd(linv * p * linv.transpose());
  return svd.singularValues()[0];
}

Outcome forward_order() {
  auto p = make_partition(unit_square_config());
  auto affine = [](const Point& x) { return 0.3 + x[0] - 2.0 * x[1]; };
  const double c = 1.5;
  auto expo = [c](const Point& x) { return std::exp(c * x[0]); };
  double affine_err = 0.0;
  std::vector<double> errors;
  for (int n : {16, 32, 64}) {
    Mesh mesh(p, 1.0 / n);
    DirichletSolver zero(mesh, p->all(), PiecewiseAffinePotential(p));
    affine_err = std::max(affine_err, max_error(mesh, zero.solve_dirichlet(nodal(mesh, affine)).solution, affine));
    DirichletSolver shifted(mesh, p->all(), constant_potential(p, c * c));
    errors.push_back(max_error(mesh, shifted.solve_dirichlet(nodal(mesh, expo)).solution, expo));
  }
  const double o1 = std::log2(errors[0] / errors[1]), o2 = std::log2(errors[1] / errors[2]);
  Outcome r;
  r.pass = affine_err <= 1e-12 && std::abs(o1 - 2.0) <= 0.3 && std::abs(o2 - 2.0) <= 0.3;
  r.detail = "affine max error " + g(affine_err) + ", exp orders " + fmt("%.3f", o1) + " " + fmt("%.3f", o2);
  return r;
}

Outcome dtn_closed_form() {
  auto p = make_partition(unit_square_config());
  Mesh mesh(p, 1.0 / 64);
  TraceSpace trace(mesh, p->portion(0));
  DirichletSolver solver(mesh, p->all(), PiecewiseAffinePotential(p));
  Eigen::VectorXd s = trace.interpolate([](const Point& x) { return std::sin(kPi * x[0]); });
  const double form = s.dot(assemble_dtn(solver, trace).dtn.values * s);
  const double exact = kPi / std::tanh(kPi) / 2.0;
  const double rel = std::abs(form - exact) / exact;
  return {rel <= 0.02, "<Lg,g> " + fmt("%.6f", form) + " vs " + fmt("%.6f", exact) + ", relative " + g(rel)};
}

Outcome alessandrini() {
  auto p = make_partition(stacked_squares_config());
  Mesh mesh(p, 1.0 / 32);
  TraceSpace trace(mesh, p->portion(0));
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  int pairs = 0, skipped = 0;
  while (pairs < 20) {
    PiecewiseAffinePotential q1 = random_potential(p, rng, 3.0), q2 = random_potential(p, rng, 3.0);
    try {
      DirichletSolver s1(mesh, p->all(), q1), s2(mesh, p->all(), q2);
      s1.require_spectral();
      s2.require_spectral();
      DtnMatrix l1 = assemble_dtn(s1, trace).dtn, l2 = assemble_dtn(s2, trace).dtn;
      AlessandriniResult a = alessandrini_pairing(l1, l2, s1, s2, trace, random_vector(rng, trace.size()),
                                                  random_vector(rng, trace.size()));
      worst = std::max(worst, a.residual);
      ++pairs;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::SpectralFailure) throw;
      ++skipped;
    }
  }
  return {worst <= 1e-8, "max relative residual " + g(worst) + " over 20 pairs (" + std::to_string(skipped) +
                             " draws failed the spectral check)"};
}

Outcome dtn_symmetry_and_gap() {
  auto p = make_partition(stacked_squares_config());
  Mesh mesh(p, 1.0 / 32);
  TraceSpace trace(mesh, p->portion(0));
  std::mt19937_64 rng(77);
  double sym = 0.0, gap_err = 0.0;
  for (int t = 0; t < 20; ++t) {
    PiecewiseAffinePotential q1 = random_potential(p, rng, 1.0) + constant_potential(p, 2.0);
    PiecewiseAffinePotential q2 = random_potential(p, rng, 1.0) + constant_potential(p, 2.0);
    DirichletSolver s1(mesh, p->all(), q1), s2(mesh, p->all(), q2);
    DtnMatrix l1 = assemble_dtn(s1, trace).dtn, l2 = assemble_dtn(s2, trace).dtn;
    sym = std::max({sym, l1.symmetry_error(), l2.symmetry_error()});
    const double oracle = whitened_oracle(l1.values - l2.values, trace.gram());
    gap_err = std::max(gap_err, std::abs(dtn_gap(l1, l2, trace) - oracle) / oracle);
  }
  return {sym <= 1e-10 && gap_err <= 1e-10,
          "max symmetry error " + g(sym) + ", max gap deviation from the whitened oracle " + g(gap_err)};
}

Outcome adjoint() {
  Scenario sc = load_scenario(scenario_path("stacked_squares.cfg"));
  Mesh mesh(sc.partition, sc.h);
  const DomainPartition& part = *sc.partition;
  RestrictionOperator a(mesh, part.remaining(1), part.all(), part.portion(0), sc.q1, sc.tolerances);
  const auto n = static_cast<Eigen::Index>(a.inner_nodes().size());
  std::mt19937_64 rng(5);
  double worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    Eigen::VectorXd gv = random_vector(rng, a.trace().size()), psi = random_vector(rng, n);
    const double diff = std::abs(a.inner_product(a.apply(gv), psi) - gv.dot(a.adjoint_apply(psi)));
    worst = std::max(worst, diff / (a.trace().norm(gv) * a.l2_norm(psi)));
  }
  return {worst <= 1e-8, "max |<Ag,psi> - <g,A*psi>| / (|g| |psi|) = " + g(worst) + " over 20 pairs"};
}

Outcome runge_frontier() {
  Scenario sc = load_scenario(scenario_path("stacked_squares.cfg"));
  Mesh mesh(sc.partition, sc.h);
  const DomainPartition& part = *sc.partition;
  RestrictionOperator a(mesh, part.remaining(1), part.all(), part.portion(0), sc.q1, sc.tolerances);
  TraceSpace next(mesh, part.portion(1));
  DirichletSolver inner(mesh, part.remaining(1), sc.q1, sc.tolerances.solver);
  Eigen::VectorXd bump = probe_trace(next, next.portion().anchor, part.r0() / 8.0, ProbeShape::Bump);
  Eigen::VectorXd target = a.to_inner(inner.solve_dirichlet(next.embed(bump)).solution);
  const std::vector<double> eps{0.3, 0.1, 0.03};
  std::vector<FrontierRow> rows = frontier_sweep(a, target, eps);
  bool ok = true;
  std::string costs;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    ok = ok && rows[i].reached && rows[i].error <= rows[i].epsilon;
    if (i > 0) ok = ok && rows[i].cost >= rows[i - 1].cost;
    costs += std::string(i ? " " : "") + g(rows[i].cost);
  }
  // The zero datum already meets eps = 0.3, so the fit also uses the scenario's finer levels.
  std::vector<FrontierRow> sweep = frontier_sweep(a, target, sc.runge.eps);
  FrontierFit fit = fit_frontier(sweep, a.l2_norm(target));
  ok = ok && fit.valid && fit.points >= 3 && fit.mu > 0.0 && fit.mu <= 2.0 && fit.r2 >= 0.9;
  return {ok, "costs " + costs + "; fit over " + std::to_string(fit.points) + " positive-cost levels: mu " + g(fit.mu) +
                  ", R^2 " + fmt("%.4f", fit.r2)};
}

Outcome in_range() {
  Scenario sc = load_scenario(scenario_path("stacked_squares.cfg"));
  Mesh mesh(sc.partition, sc.h);
  const DomainPartition& part = *sc.partition;
  RestrictionOperator a(mesh, part.remaining(1), part.all(), part.portion(0), sc.q1, sc.tolerances);
  Eigen::VectorXd g0 = a.trace().interpolate([](const Point& x) { return std::sin(kPi * x[0]); });
  Eigen::VectorXd h = a.apply(g0);
  RungeResult r = a.approximate(h, 1e-3);
  const double err = a.l2_norm(a.to_inner(a.forward(r.datum)) - h);
  const double h1 = a.h1_norm(h), cost_ratio = r.cost / a.trace().norm(g0);
  return {r.reached && err <= 1e-3 * h1 && cost_ratio <= 1.1,
          "error / |h|_H1 = " + g(err / h1) + ", cost / |g0| = " + fmt("%.4f", cost_ratio)};
}

Outcome affine_exactness() {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-5, 5);
  FlatPortion sigma;
  sigma.dimension = 2;
  sigma.extent = 0.5;
  double worst = 0.0;
  for (int t = 0; t < 200; ++t) {
    sigma.anchor = {u(rng), u(rng), 0};
    sigma.normal_axis = t % 2;
    sigma.normal_sign = (t / 2) % 2 == 0 ? 1 : -1;
    AffinePiece f{u(rng), {u(rng), u(rng), 0}};
    const double r0 = 1.5;
    const int tan = 1 - sigma.normal_axis;
    AffineEstimate e = recover_affine(sigma, r0, f.at(sigma.anchor), {f.at(sigma.anchor + axis_vector(tan, r0 / 5))},
                                      f.A[sigma.normal_axis] * sigma.normal_sign);
    const double scale = std::abs(f.a) + std::abs(f.A[0]) + std::abs(f.A[1]) + std::abs(sigma.anchor[0]) +
                         std::abs(sigma.anchor[1]);
    const double err = std::max({std::abs(e.alpha - f.a), std::abs(e.beta[0] - f.A[0]), std::abs(e.beta[1] - f.A[1])});
    worst = std::max(worst, err / (scale * kMachine));
  }
  return {worst <= 64.0, "max coefficient error " + fmt("%.1f", worst) + " ulp of the input scale over 200 cases"};
}

struct PeelRun {
  PeelReport report;
  Scenario sc;
};

PeelRun two_layer_peel() {
  PeelRun run{{}, load_scenario(scenario_path("peel_two_layer.cfg"))};
  static std::unique_ptr<Mesh> mesh;
  mesh = std::make_unique<Mesh>(run.sc.partition, run.sc.h);
  PeelInputs in;
  in.mesh = mesh.get();
  in.q1 = run.sc.q1;
  in.q2 = run.sc.q2;
  PeelOptions opt;
  opt.eps_schedule = run.sc.peel.eps;
  run.report = peel(in, opt);
  return run;
}

Outcome end_to_end(const PeelRun& run) {
  const PeelReport& r = run.report;
  if (!r.completed) return {false, "peel stopped: " + r.failure};
  double worst = 0.0;
  for (const PeelStep& s : r.steps) {
    worst = std::max({worst, std::abs(s.estimate.alpha - s.truth.a) / std::abs(s.truth.a),
                      std::abs(s.estimate.beta[0] - s.truth.A[0]) / std::abs(s.truth.A[0]),
                      std::abs(s.estimate.beta[1] - s.truth.A[1]) / std::abs(s.truth.A[1])});
  }

  // Rerun on data generated by the recovered potential q2 + dq, against that same reference.
  Mesh mesh(run.sc.partition, run.sc.h);
  PiecewiseAffinePotential recovered = run.sc.q2 + r.estimate;
  TraceSpace trace(mesh, run.sc.partition->portion(0));
  DirichletSolver data(mesh, run.sc.partition->all(), recovered);
  PeelInputs in;
  in.mesh = &mesh;
  in.q1 = recovered;
  in.q2 = recovered;
  in.measured1 = assemble_dtn(data, trace).dtn.values;
  PeelOptions opt;
  opt.eps_schedule = run.sc.peel.eps;
  PeelReport again = peel(in, opt);
  const double tol = 10.0 * SolverOptions{}.residual_tol;
  double rerun = 0.0;
  for (const PeelStep& s : again.steps) rerun = std::max(rerun, std::abs(s.delta));

  // Gap left between the original data and the recovered reference.
  DirichletSolver truth(mesh, run.sc.partition->all(), run.sc.q1);
  const double residual = dtn_gap(assemble_dtn(truth, trace).dtn, assemble_dtn(data, trace).dtn, trace);

  const bool ok = worst <= 0.25 && again.completed && again.steps.size() == 2 && rerun <= tol;
  return {ok, "max relative coefficient error " + fmt("%.4f", worst) + ", rerun max delta_k " + g(rerun) +
                  " (limit " + g(tol) + "); info: gap between original data and recovered reference " +
                  g(residual)};
}

double max_ratio(const PartitionConfig& c, double h, int pairs) {
  auto p = make_partition(c);
  Mesh mesh(p, h);
  StabilityOptions opt;
  opt.pairs = pairs;
  opt.seed = 1;
  opt.E0 = 5.0;
  opt.jobs = 4;
  StabilityReport r = stability_experiment(mesh, opt);
  for (const StabilityRow& row : r.rows) {
    if (!std::isfinite(row.ratio)) return std::nan("");
  }
  return static_cast<int>(r.rows.size()) == pairs ? r.max_ratio : std::nan("");
}

Outcome stability() {
  const double a32 = max_ratio(unit_square_config(), 1.0 / 32, 50), a64 = max_ratio(unit_square_config(), 1.0 / 64, 50);
  const double b32 = max_ratio(stacked_squares_config(), 1.0 / 32, 50);
  const double b64 = max_ratio(stacked_squares_config(), 1.0 / 64, 50);
  const bool finite = std::isfinite(a32) && std::isfinite(a64) && std::isfinite(b32) && std::isfinite(b64);
  const double da = std::abs(a64 / a32 - 1.0), db = std::abs(b64 / b32 - 1.0);
  const bool ok = finite && da <= 0.2 && db <= 0.2 && b64 >= a64 && b32 >= a32;
  return {ok, "N=1 max ratio " + g(a32) + " -> " + g(a64) + ", N=2 max ratio " + g(b32) + " -> " + g(b64)};
}

Outcome bound_consistency(const PeelRun& run) {
  const PeelReport& r = run.report;
  if (!r.completed || r.steps.size() < 2) return {false, "peel stopped: " + r.failure};
  const PeelStep& s = r.steps[1];
  const double budget = std::isfinite(s.delta_budget) ? s.delta_budget : 0.0;
  return {std::isfinite(s.bound) && s.bound + budget >= s.delta,
          "bound " + g(s.bound) + " + budget " + g(budget) + " vs delta_2 " + g(s.delta)};
}

}  // namespace

int main() {
  int failures = 0;
  std::unique_ptr<PeelRun> peel_run;
  auto shared_peel = [&]() -> const PeelRun& {
    if (!peel_run) peel_run = std::make_unique<PeelRun>(two_layer_peel());
    return *peel_run;
  };
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"forward solver order", forward_order},
      {"DtN closed form", dtn_closed_form},
      {"Alessandrini identity", alessandrini},
      {"DtN symmetry and gap", dtn_symmetry_and_gap},
      {"adjoint consistency", adjoint},
      {"Runge frontier", runge_frontier},
      {"in-range recovery", in_range},
      {"affine recovery exactness", affine_exactness},
      {"end-to-end peeling", [&] { return end_to_end(shared_peel()); }},
      {"stability experiment", stability},
      {"bound consistency", [&] { return bound_consistency(shared_peel()); }},
  };
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s %2zu %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
    if (!o.pass) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
