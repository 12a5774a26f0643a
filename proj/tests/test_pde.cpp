#include <doctest.h>

#include <numbers>

#include "support.hpp"

using namespace lipstab;
using namespace lipstab::testing;

namespace {

constexpr double kPi = std::numbers::pi;

PartitionConfig right_edge_config() {
  PartitionConfig c = unit_square_config();
  c.portions = {portion2(1, 0.5, 0, 0.5)};
  return c;
}

double max_error(const Mesh& mesh, const Eigen::VectorXd& u, const std::function<double(const Point&)>& f) {
  double e = 0.0;
  for (int i = 0; i < mesh.node_count(); ++i) e = std::max(e, std::abs(u[i] - f(mesh.node(i))));
  return e;
}

/// Value at the node of `fine` coinciding with each node of `coarse`.
Eigen::VectorXd on_coarse(const Mesh& coarse, const Mesh& fine, const Eigen::VectorXd& u) {
  Eigen::VectorXd out(coarse.node_count());
  for (int i = 0; i < coarse.node_count(); ++i) out[i] = u[fine.node_near(coarse.node(i))];
  return out;
}

/// Poisson problem -Delta w = 1 on the unit square with zero boundary values, by double sine series.
double poisson_series(double x, double y, int terms) {
  double w = 0.0;
  for (int m = 1; m <= terms; m += 2) {
    for (int n = 1; n <= terms; n += 2) {
      w += 16.0 / (std::pow(kPi, 4) * m * n * (m * m + n * n)) * std::sin(m * kPi * x) * std::sin(n * kPi * y);
    }
  }
  return w;
}

}  // namespace

TEST_SUITE("pde") {
  TEST_CASE("affine data are reproduced exactly for q = 0") {
    for (const PartitionConfig& c : {unit_square_config(), stacked_squares_config(), unit_cube_config()}) {
      auto p = make_partition(c);
      Mesh mesh(p, c.dimension == 3 ? 0.25 : 1.0 / 16);
      DirichletSolver solver(mesh, p->all(), PiecewiseAffinePotential(p));
      auto f = [](const Point& x) { return 0.3 + x[0] - 2.0 * x[1] + 0.5 * x[2]; };
      SolveReport rep = solver.solve_dirichlet(nodal(mesh, f));
      CHECK(max_error(mesh, rep.solution, f) < 1e-12);
      CHECK(rep.residual <= 1e-10 * rep.rhs_norm);
    }
  }

  TEST_CASE("exponential solution converges at second order") {
    auto p = make_partition(unit_square_config());
    const double c = 1.5;
    auto f = [c](const Point& x) { return std::exp(c * x[0]); };
    std::vector<double> errors;
    for (int n : {16, 32, 64}) {
      Mesh mesh(p, 1.0 / n);
      DirichletSolver solver(mesh, p->all(), constant_potential(p, c * c));
      errors.push_back(max_error(mesh, solver.solve_dirichlet(nodal(mesh, f)).solution, f));
    }
    for (std::size_t i = 0; i + 1 < errors.size(); ++i) {
      double order = std::log2(errors[i] / errors[i + 1]);
      CHECK(order == doctest::Approx(2.0).epsilon(0.15));
    }
  }

  TEST_CASE("random potential and smooth data: three-grid order") {
    auto p = make_partition(unit_square_config());
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(0.0, 2.0);
    for (int trial = 0; trial < 3; ++trial) {
      PiecewiseAffinePotential q(p, {piece(u(rng), u(rng) - 1, u(rng) - 1)});
      double k1 = u(rng) + 0.5, k2 = u(rng) + 0.5, ph = u(rng), c0 = u(rng);
      auto g = [=](const Point& x) { return c0 + std::sin(k1 * x[0] + k2 * x[1] + ph) + 0.5 * std::cos(k2 * x[0]); };
      Mesh coarse(p, 1.0 / 8);
      std::vector<Eigen::VectorXd> sols;
      for (int n : {16, 32, 64}) {
        Mesh mesh(p, 1.0 / n);
        DirichletSolver solver(mesh, p->all(), q);
        sols.push_back(on_coarse(coarse, mesh, solver.solve_dirichlet(nodal(mesh, g)).solution));
      }
      double e1 = (sols[0] - sols[1]).lpNorm<Eigen::Infinity>();
      double e2 = (sols[1] - sols[2]).lpNorm<Eigen::Infinity>();
      CHECK(std::log2(e1 / e2) == doctest::Approx(2.0).epsilon(0.15));
    }
  }

  TEST_CASE("dual problem") {
    auto p = make_partition(unit_square_config());
    Mesh mesh(p, 1.0 / 64);
    DirichletSolver solver(mesh, p->all(), PiecewiseAffinePotential(p));
    SolveReport zero = solver.solve_dual(p->all(), Eigen::VectorXd::Zero(mesh.node_count()));
    CHECK(zero.solution.lpNorm<Eigen::Infinity>() == 0.0);
    SolveReport w = solver.solve_dual(p->all(), Eigen::VectorXd::Ones(mesh.node_count()));
    CHECK(w.residual <= 1e-10 * w.rhs_norm);
    const double oracle = poisson_series(0.5, 0.5, 201);
    CHECK(oracle == doctest::Approx(0.0737).epsilon(1e-3));
    CHECK(w.solution[mesh.node_near({0.5, 0.5, 0})] == doctest::Approx(oracle).epsilon(1e-3));
    for (int id : mesh.region_nodes(p->all()).boundary) CHECK(w.solution[id] == 0.0);
  }

  TEST_CASE("spectral check of the Laplacian matches the discrete spectrum") {
    auto p = make_partition(unit_square_config());
    for (int n : {8, 16, 32}) {
      const double h = 1.0 / n;
      Mesh mesh(p, h);
      SpectralReport rep = spectral_check(mesh, p->all(), PiecewiseAffinePotential(p));
      const double exact = 8.0 / (h * h) * std::pow(std::sin(kPi * h / 2), 2);
      CHECK(rep.passed);
      CHECK(rep.lambda_min == doctest::Approx(exact).epsilon(1e-8));
    }
    Mesh mesh(p, 1.0 / 64);
    CHECK(spectral_check(mesh, p->all(), PiecewiseAffinePotential(p)).lambda_min ==
          doctest::Approx(2 * kPi * kPi).epsilon(1e-3));
  }

  TEST_CASE("near-resonant potential fails the spectral check") {
    auto p = make_partition(unit_square_config());
    Mesh mesh(p, 1.0 / 8);
    DirichletSolver zero(mesh, p->all(), PiecewiseAffinePotential(p));
    const auto& in = zero.op().nodes().interior;
    const auto ni = static_cast<Eigen::Index>(in.size());
    Eigen::MatrixXd k(ni, ni), m = Eigen::MatrixXd::Zero(ni, ni);
    Eigen::MatrixXd full = Eigen::MatrixXd(zero.op().system());
    for (Eigen::Index i = 0; i < ni; ++i) {
      m(i, i) = zero.op().mass()[in[static_cast<std::size_t>(i)]];
      for (Eigen::Index j = 0; j < ni; ++j) k(i, j) = full(in[static_cast<std::size_t>(i)], in[static_cast<std::size_t>(j)]);
    }
    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(k, m);
    const double lambda = es.eigenvalues()[0];
    const double shift = 1e-7;
    DirichletSolver near(mesh, p->all(), constant_potential(p, -lambda + shift));
    CHECK_FALSE(near.spectral().passed);
    if (near.spectral().iterations > 0) CHECK(near.spectral().margin == doctest::Approx(shift).epsilon(0.05));
    CHECK_THROWS_WITH(near.solve_dirichlet(Eigen::VectorXd::Ones(mesh.node_count())),
                      doctest::Contains("SpectralFailure"));
    DirichletSolver away(mesh, p->all(), constant_potential(p, -lambda + 1.0));
    CHECK(away.spectral().passed);
    CHECK(away.spectral().lambda_min == doctest::Approx(1.0).epsilon(1e-6));
  }

  TEST_CASE("positive shift") {
    auto p = make_partition(unit_square_config());
    Mesh mesh(p, 1.0 / 32);
    SpectralReport rep = spectral_check(mesh, p->all(), constant_potential(p, 10.0));
    CHECK(rep.passed);
    CHECK(rep.margin >= 29.0);
  }

  TEST_CASE("spectral margin is monotone under positive shifts") {
    auto p = make_partition(stacked_squares_config());
    Mesh mesh(p, 1.0 / 16);
    PiecewiseAffinePotential base(p, {piece(-2, 1, 0), piece(0.5, 0, -0.3)});
    double last = -1.0;
    for (double c : {0.0, 0.5, 2.0, 7.0}) {
      SpectralReport rep = spectral_check(mesh, p->all(), base + constant_potential(p, c));
      REQUIRE(rep.lambda_min > 0);
      CHECK(rep.margin >= last);
      last = rep.margin;
    }
  }

  TEST_CASE("inverse iteration cap raises NoConvergence") {
    auto p = make_partition(unit_square_config());
    Mesh mesh(p, 1.0 / 16);
    SolverOptions opt;
    opt.max_power_iterations = 1;
    try {
      spectral_check(mesh, p->all(), PiecewiseAffinePotential(p), opt);
      FAIL("expected NoConvergence");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::NoConvergence);
    }
  }

  TEST_CASE("Neumann trace") {
    auto p = make_partition(right_edge_config());
    Mesh mesh(p, 1.0 / 16);
    DirichletSolver solver(mesh, p->all(), PiecewiseAffinePotential(p));
    auto x = solver.solve_dirichlet(nodal(mesh, [](const Point& z) { return z[0]; })).solution;
    TraceValues t = neumann_trace(solver, x, p->portion(0));
    CHECK(t.nodes.size() == 17u);
    for (Eigen::Index i = 0; i < t.values.size(); ++i) CHECK(t.values[i] == doctest::Approx(1.0).epsilon(1e-10));
    auto one = solver.solve_dirichlet(Eigen::VectorXd::Ones(mesh.node_count())).solution;
    TraceValues c = neumann_trace(solver, one, p->portion(0));
    CHECK(c.values.lpNorm<Eigen::Infinity>() < 1e-10);

    auto s = make_partition(stacked_squares_config());
    Mesh ms(s, 0.25);
    DirichletSolver whole(ms, s->all(), PiecewiseAffinePotential(s));
    try {
      neumann_trace(whole, Eigen::VectorXd::Zero(ms.node_count()), s->portion(1));
      FAIL("expected PortionNotOnBoundary");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::PortionNotOnBoundary);
    }
    DirichletSolver upper(ms, s->remaining(1), PiecewiseAffinePotential(s));
    CHECK_NOTHROW(neumann_trace(upper, Eigen::VectorXd::Zero(ms.node_count()), s->portion(1)));
  }

  TEST_CASE("discrete Green identity") {
    auto p = make_partition(stacked_squares_config());
    Mesh mesh(p, 1.0 / 16);
    std::mt19937_64 rng(23);
    PiecewiseAffinePotential q(p, {piece(1.0, 0.4, -0.2), piece(0.3, -0.5, 0.1)});
    DirichletSolver solver(mesh, p->all(), q);
    const FlatPortion& sigma = p->portion(0);
    std::vector<int> open = mesh.portion_nodes(sigma, true);
    for (int t = 0; t < 5; ++t) {
      Eigen::VectorXd g1 = Eigen::VectorXd::Zero(mesh.node_count()), g2 = g1;
      Eigen::VectorXd r1 = random_vector(rng, static_cast<Eigen::Index>(open.size()));
      Eigen::VectorXd r2 = random_vector(rng, static_cast<Eigen::Index>(open.size()));
      for (std::size_t i = 0; i < open.size(); ++i) {
        g1[open[i]] = r1[static_cast<Eigen::Index>(i)];
        g2[open[i]] = r2[static_cast<Eigen::Index>(i)];
      }
      SolveReport u = solver.solve_dirichlet(g1), v = solver.solve_dirichlet(g2);
      CHECK(u.residual <= 1e-10 * u.rhs_norm);
      TraceValues tu = neumann_trace(solver, u.solution, sigma), tv = neumann_trace(solver, v.solution, sigma);
      double a = 0.0, b = 0.0, scale = 0.0;
      for (std::size_t i = 0; i < tu.nodes.size(); ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        const int id = tu.nodes[i];
        a += tu.values[ii] * tu.face_measure[ii] * v.solution[id];
        b += tv.values[ii] * tv.face_measure[ii] * u.solution[id];
        scale += std::abs(tu.values[ii] * tu.face_measure[ii] * v.solution[id]);
      }
      CHECK(std::abs(a - b) <= 1e-10 * scale);
    }
  }
}
