#include "lipstab/pde.hpp"

#include <cmath>
#include <numbers>

#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>

namespace lipstab {

Eigen::VectorXd lumped_mass(const Mesh& mesh, Region region) {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(mesh.node_count());
  const double cw = mesh.corner_weight();
  for (const Mesh::Cell& cell : mesh.cells()) {
    if (!region.contains(cell.owner)) continue;
    for (int b = 0; b < mesh.corner_count(); ++b) w[cell.corners[static_cast<std::size_t>(b)]] += cw;
  }
  return w;
}

Eigen::VectorXd lumped_potential(const Mesh& mesh, Region region, const PiecewiseAffinePotential& q) {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(mesh.node_count());
  const double cw = mesh.corner_weight();
  for (const Mesh::Cell& cell : mesh.cells()) {
    if (!region.contains(cell.owner)) continue;
    const AffinePiece& piece = q.piece(cell.owner);
    for (int b = 0; b < mesh.corner_count(); ++b) {
      int i = cell.corners[static_cast<std::size_t>(b)];
      w[i] += cw * piece.at(mesh.node(i));
    }
  }
  return w;
}

DiscreteOperator::DiscreteOperator(const Mesh& mesh, Region region, const PiecewiseAffinePotential& q)
    : mesh_(&mesh), region_(region) {
  if (region.empty()) fail(ErrorKind::EmptyRegion, "operator on an empty region");
  nodes_ = mesh.region_nodes(region);
  const int n = mesh.node_count();
  const int dim = mesh.dimension();
  // P1-equivalent edge weight per cell: h^(n-2) / 2^(n-1)
  const double edge = std::pow(mesh.spacing(), dim - 2) / std::pow(2.0, dim - 1);
  std::vector<Eigen::Triplet<double>> trip;
  for (const Mesh::Cell& cell : mesh.cells()) {
    if (!region.contains(cell.owner)) continue;
    for (int b = 0; b < mesh.corner_count(); ++b) {
      for (int d = 0; d < dim; ++d) {
        if ((b >> d) & 1) continue;
        int i = cell.corners[static_cast<std::size_t>(b)];
        int j = cell.corners[static_cast<std::size_t>(b | (1 << d))];
        trip.emplace_back(i, i, edge);
        trip.emplace_back(j, j, edge);
        trip.emplace_back(i, j, -edge);
        trip.emplace_back(j, i, -edge);
      }
    }
  }
  stiffness_.resize(n, n);
  stiffness_.setFromTriplets(trip.begin(), trip.end());
  mass_ = lumped_mass(mesh, region);
  Eigen::VectorXd pot = lumped_potential(mesh, region, q);
  SparseMatrix diag(n, n);
  std::vector<Eigen::Triplet<double>> dtrip;
  for (int i = 0; i < n; ++i) {
    if (pot[i] != 0.0) dtrip.emplace_back(i, i, pot[i]);
  }
  diag.setFromTriplets(dtrip.begin(), dtrip.end());
  system_ = stiffness_ + diag;
}

struct DirichletSolver::Factor {
  std::unique_ptr<Eigen::SimplicialLDLT<SparseMatrix>> ldlt;
  std::unique_ptr<Eigen::SparseLU<SparseMatrix>> lu;

  Eigen::MatrixXd solve(const Eigen::MatrixXd& b) const {
    if (ldlt) return ldlt->solve(b);
    return lu->solve(b);
  }
};

DirichletSolver::DirichletSolver(const Mesh& mesh, Region region, const PiecewiseAffinePotential& q,
                                 SolverOptions options)
    : q_(q), op_(mesh, region, q), options_(options) {
  const RegionNodes& nodes = op_.nodes();
  local_.assign(static_cast<std::size_t>(mesh.node_count()), -1);
  for (std::size_t i = 0; i < nodes.interior.size(); ++i) local_[static_cast<std::size_t>(nodes.interior[i])] = static_cast<int>(i);
  std::vector<int> bnd_local(static_cast<std::size_t>(mesh.node_count()), -1);
  for (std::size_t i = 0; i < nodes.boundary.size(); ++i) bnd_local[static_cast<std::size_t>(nodes.boundary[i])] = static_cast<int>(i);

  const auto ni = static_cast<Eigen::Index>(nodes.interior.size());
  const auto nb = static_cast<Eigen::Index>(nodes.boundary.size());
  std::vector<Eigen::Triplet<double>> tii, tib;
  const SparseMatrix& k = op_.system();
  for (int col = 0; col < k.outerSize(); ++col) {
    for (SparseMatrix::InnerIterator it(k, col); it; ++it) {
      int r = local_[static_cast<std::size_t>(it.row())];
      if (r < 0) continue;
      int ci = local_[static_cast<std::size_t>(col)];
      int cb = bnd_local[static_cast<std::size_t>(col)];
      if (ci >= 0) tii.emplace_back(r, ci, it.value());
      else if (cb >= 0) tib.emplace_back(r, cb, it.value());
    }
  }
  k_ii_.resize(ni, ni);
  k_ii_.setFromTriplets(tii.begin(), tii.end());
  k_ib_.resize(ni, nb);
  k_ib_.setFromTriplets(tib.begin(), tib.end());

  factor_ = std::make_unique<Factor>();
  bool ok = false;
  if (ni > 0) {
    factor_->ldlt = std::make_unique<Eigen::SimplicialLDLT<SparseMatrix>>(k_ii_);
    if (factor_->ldlt->info() == Eigen::Success) {
      Eigen::VectorXd probe = Eigen::VectorXd::LinSpaced(ni, 1.0, 2.0);
      Eigen::VectorXd x = factor_->ldlt->solve(probe);
      ok = x.allFinite() && (k_ii_ * x - probe).norm() <= options_.residual_tol * probe.norm();
    }
    if (!ok) {
      factor_->ldlt.reset();
      factor_->lu = std::make_unique<Eigen::SparseLU<SparseMatrix>>();
      factor_->lu->compute(k_ii_);
      ok = factor_->lu->info() == Eigen::Success;
      if (!ok) factor_->lu.reset();
    }
  }
  if (!ok) {
    factor_.reset();
    spectral_.tau = options_.spectral_tau;
    return;
  }
  spectral_ = run_spectral_check();
}

DirichletSolver::~DirichletSolver() = default;

SpectralReport DirichletSolver::run_spectral_check() const {
  SpectralReport rep;
  double diam = op_.mesh().partition().diameter(op_.region());
  rep.tau = options_.spectral_tau >= 0.0
                ? options_.spectral_tau
                : 1e-6 * 2.0 * std::numbers::pi * std::numbers::pi / (diam * diam);
  const RegionNodes& nodes = op_.nodes();
  const auto ni = static_cast<Eigen::Index>(nodes.interior.size());
  Eigen::VectorXd m(ni);
  for (Eigen::Index i = 0; i < ni; ++i) m[i] = op_.mass()[nodes.interior[static_cast<std::size_t>(i)]];
  Eigen::VectorXd x(ni);
  for (Eigen::Index i = 0; i < ni; ++i) x[i] = 1.0 + 0.25 * std::sin(0.7 * static_cast<double>(i));
  double lambda = 0.0;
  for (int it = 1; it <= options_.max_power_iterations; ++it) {
    x /= std::sqrt(x.dot(m.cwiseProduct(x)));
    Eigen::VectorXd y = factor_->solve(m.cwiseProduct(x));
    if (!y.allFinite()) {
      rep.lambda_min = 0.0;
      rep.iterations = it;
      rep.passed = false;
      return rep;
    }
    // Rayleigh quotient of y, using K y = M x.
    double next = y.dot(m.cwiseProduct(x)) / y.dot(m.cwiseProduct(y));
    x = y;
    if (it > 1 && std::abs(next - lambda) <= options_.power_tol * std::abs(next)) {
      lambda = next;
      rep.iterations = it;
      rep.lambda_min = lambda;
      rep.margin = std::abs(lambda);
      rep.passed = rep.margin >= rep.tau;
      return rep;
    }
    lambda = next;
  }
  fail(ErrorKind::NoConvergence,
       "inverse iteration did not converge in " + std::to_string(options_.max_power_iterations) + " steps");
}

void DirichletSolver::require_spectral() const {
  if (!factor_ || !spectral_.passed) {
    fail(ErrorKind::SpectralFailure, "zero is too close to a Dirichlet eigenvalue (|lambda_min|=" +
                                         format_double(spectral_.margin) + ", tau=" + format_double(spectral_.tau) +
                                         ")");
  }
}

Eigen::MatrixXd DirichletSolver::solve_interior(const Eigen::MatrixXd& rhs) const {
  Eigen::MatrixXd x = factor_->solve(rhs);
  for (Eigen::Index c = 0; c < rhs.cols(); ++c) {
    double bn = rhs.col(c).norm();
    double rn = (k_ii_ * x.col(c) - rhs.col(c)).norm();
    if (!std::isfinite(rn) || rn > options_.residual_tol * bn) {
      fail(ErrorKind::SingularOperator, "solve residual " + format_double(rn) + " exceeds tolerance");
    }
  }
  return x;
}

Eigen::MatrixXd DirichletSolver::solve_dirichlet_many(const Eigen::MatrixXd& g) const {
  require_spectral();
  const RegionNodes& nodes = op_.nodes();
  const auto nb = static_cast<Eigen::Index>(nodes.boundary.size());
  Eigen::MatrixXd gb(nb, g.cols());
  for (Eigen::Index i = 0; i < nb; ++i) gb.row(i) = g.row(nodes.boundary[static_cast<std::size_t>(i)]);
  Eigen::MatrixXd rhs = -(k_ib_ * gb);
  Eigen::MatrixXd xi = solve_interior(rhs);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(g.rows(), g.cols());
  for (Eigen::Index i = 0; i < nb; ++i) out.row(nodes.boundary[static_cast<std::size_t>(i)]) = gb.row(i);
  for (std::size_t i = 0; i < nodes.interior.size(); ++i) out.row(nodes.interior[i]) = xi.row(static_cast<Eigen::Index>(i));
  return out;
}

SolveReport DirichletSolver::solve_dirichlet(const Eigen::VectorXd& g) const {
  if (g.size() != mesh().node_count()) fail(ErrorKind::DimensionMismatch, "datum must be a global nodal vector");
  SolveReport rep;
  rep.solution = solve_dirichlet_many(g);
  Eigen::VectorXd r = apply(rep.solution);
  double rn = 0.0;
  for (int i : op_.nodes().interior) rn += r[i] * r[i];
  rep.residual = std::sqrt(rn);
  Eigen::VectorXd gb(static_cast<Eigen::Index>(op_.nodes().boundary.size()));
  for (std::size_t i = 0; i < op_.nodes().boundary.size(); ++i) gb[static_cast<Eigen::Index>(i)] = g[op_.nodes().boundary[i]];
  rep.rhs_norm = (k_ib_ * gb).norm();
  return rep;
}

SolveReport DirichletSolver::solve_load(const Eigen::VectorXd& load) const {
  require_spectral();
  if (load.size() != mesh().node_count()) fail(ErrorKind::DimensionMismatch, "load must be a global nodal vector");
  const RegionNodes& nodes = op_.nodes();
  Eigen::VectorXd b(static_cast<Eigen::Index>(nodes.interior.size()));
  for (std::size_t i = 0; i < nodes.interior.size(); ++i) b[static_cast<Eigen::Index>(i)] = load[nodes.interior[i]];
  SolveReport rep;
  rep.rhs_norm = b.norm();
  rep.solution = Eigen::VectorXd::Zero(load.size());
  if (rep.rhs_norm == 0.0) return rep;
  Eigen::VectorXd x = solve_interior(b);
  for (std::size_t i = 0; i < nodes.interior.size(); ++i) rep.solution[nodes.interior[i]] = x[static_cast<Eigen::Index>(i)];
  rep.residual = (k_ii_ * x - b).norm();
  return rep;
}

SolveReport DirichletSolver::solve_dual(Region inner, const Eigen::VectorXd& source) const {
  if (!inner.without(op_.region()).empty()) {
    fail(ErrorKind::DimensionMismatch, "source region must lie inside the solver region");
  }
  Eigen::VectorXd load = lumped_mass(mesh(), inner).cwiseProduct(source);
  return solve_load(load);
}

Eigen::VectorXd DirichletSolver::apply(const Eigen::VectorXd& u) const { return op_.system() * u; }

TraceValues neumann_trace(const DirichletSolver& solver, const Eigen::VectorXd& u, const FlatPortion& portion,
                          const Eigen::VectorXd* load) {
  const Mesh& mesh = solver.mesh();
  const Region region = solver.op().region();
  const int dim = mesh.dimension();
  const int axis = portion.normal_axis;
  std::vector<int> tangents = portion.tangent_axes();
  const double face = std::pow(mesh.spacing() / 2.0, dim - 1);

  TraceValues out;
  out.nodes = mesh.portion_nodes(portion, false);
  const auto m = static_cast<Eigen::Index>(out.nodes.size());
  out.values.resize(m);
  out.face_measure.resize(m);
  Eigen::VectorXd r = solver.apply(u);
  if (load != nullptr) r -= *load;
  std::vector<int> open = mesh.portion_nodes(portion, true);
  for (Eigen::Index idx = 0; idx < m; ++idx) {
    int id = out.nodes[static_cast<std::size_t>(idx)];
    const auto& v = mesh.node_ijk(id);
    double measure = 0.0;
    for (int b = 0; b < (1 << (dim - 1)); ++b) {
      std::array<int, 3> c = v;
      for (std::size_t t = 0; t < tangents.size(); ++t) c[static_cast<std::size_t>(tangents[t])] -= (b >> t) & 1;
      std::array<int, 3> below = c;
      below[static_cast<std::size_t>(axis)] -= 1;
      bool in_above = region.contains(mesh.cell_owner(c));
      bool in_below = region.contains(mesh.cell_owner(below));
      if (in_above != in_below) measure += face;
    }
    bool is_open = std::binary_search(open.begin(), open.end(), id);
    if (measure == 0.0) {
      if (is_open) fail(ErrorKind::PortionNotOnBoundary, "portion is not on the boundary of the region");
      out.values[idx] = 0.0;
    } else {
      out.values[idx] = r[id] / measure;
    }
    out.face_measure[idx] = measure;
  }
  if (m == 0) fail(ErrorKind::PortionNotOnBoundary, "portion has no mesh nodes");
  return out;
}

SpectralReport spectral_check(const Mesh& mesh, Region region, const PiecewiseAffinePotential& q,
                              SolverOptions options) {
  DirichletSolver solver(mesh, region, q, options);
  return solver.spectral();
}

}  // namespace lipstab
