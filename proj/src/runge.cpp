#include "lipstab/runge.hpp"

#include <cmath>
#include <ostream>

namespace lipstab {

RestrictionOperator::RestrictionOperator(const Mesh& mesh, Region inner, Region outer, const FlatPortion& control,
                                         const PiecewiseAffinePotential& q, RungeOptions options)
    : mesh_(&mesh), inner_(inner), outer_(outer), trace_(mesh, control), options_(options) {
  const DomainPartition& part = mesh.partition();
  if (inner.empty() || !inner.without(outer).empty()) {
    fail(ErrorKind::ConditionRViolated, "inner region must be a non-empty part of the outer region");
  }
  Region shell = outer.without(inner);
  if (shell.empty() || !part.connected(shell)) {
    fail(ErrorKind::ConditionRViolated, "outer minus inner region is empty or disconnected");
  }
  if (!part.portion_on_boundary(control, outer)) {
    fail(ErrorKind::ConditionRViolated, "control portion is not on the outer boundary");
  }
  if (part.portion_touches(control, inner)) {
    fail(ErrorKind::ConditionRViolated, "control portion touches the inner region");
  }

  outer_solver_ = std::make_unique<DirichletSolver>(mesh, outer, q, options_.solver);
  inner_solver_ = std::make_unique<DirichletSolver>(mesh, inner, q, options_.solver);
  outer_solver_->require_spectral();
  inner_solver_->require_spectral();

  inner_nodes_ = mesh.region_nodes(inner).all;
  Eigen::VectorXd w = lumped_mass(mesh, inner);
  const auto n = static_cast<Eigen::Index>(inner_nodes_.size());
  weights_.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) weights_[i] = w[inner_nodes_[static_cast<std::size_t>(i)]];

  const int m = trace_.size();
  Eigen::MatrixXd data = Eigen::MatrixXd::Zero(mesh.node_count(), m);
  for (int j = 0; j < m; ++j) data(trace_.nodes()[static_cast<std::size_t>(j)], j) = 1.0;
  solutions_ = outer_solver_->solve_dirichlet_many(data);
  a_.resize(n, m);
  for (Eigen::Index i = 0; i < n; ++i) a_.row(i) = solutions_.row(inner_nodes_[static_cast<std::size_t>(i)]);

  Eigen::VectorXd sw = weights_.cwiseSqrt();
  Eigen::MatrixXd whitened = sw.asDiagonal() * a_ * trace_.gram_inv_sqrt();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(whitened, Eigen::ComputeThinU | Eigen::ComputeThinV);
  sigma_ = svd.singularValues();
  phi_ = trace_.gram_inv_sqrt() * svd.matrixV();
  psi_ = sw.cwiseInverse().asDiagonal() * svd.matrixU();
  usable_ = 0;
  for (Eigen::Index j = 0; j < sigma_.size(); ++j) {
    if (sigma_[j] > options_.sigma_floor * sigma_[0]) usable_ = static_cast<int>(j) + 1;
  }
}

Eigen::VectorXd RestrictionOperator::to_inner(const Eigen::VectorXd& global) const {
  Eigen::VectorXd out(static_cast<Eigen::Index>(inner_nodes_.size()));
  for (std::size_t i = 0; i < inner_nodes_.size(); ++i) out[static_cast<Eigen::Index>(i)] = global[inner_nodes_[i]];
  return out;
}

Eigen::VectorXd RestrictionOperator::to_global(const Eigen::VectorXd& inner) const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(mesh_->node_count());
  for (std::size_t i = 0; i < inner_nodes_.size(); ++i) out[inner_nodes_[i]] = inner[static_cast<Eigen::Index>(i)];
  return out;
}

double RestrictionOperator::inner_product(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const {
  return (a.array() * weights_.array() * b.array()).sum();
}

double RestrictionOperator::h1_norm(const Eigen::VectorXd& h) const {
  Eigen::VectorXd g = to_global(h);
  double energy = g.dot(inner_solver_->op().stiffness() * g);
  return std::sqrt(std::max(energy, 0.0) + inner_product(h, h));
}

Eigen::VectorXd RestrictionOperator::adjoint_apply(const Eigen::VectorXd& psi) const {
  if (psi.size() != static_cast<Eigen::Index>(inner_nodes_.size())) {
    fail(ErrorKind::DimensionMismatch, "psi must live on the inner region's nodes");
  }
  Eigen::VectorXd load = to_global(weights_.cwiseProduct(psi));
  Eigen::VectorXd w = outer_solver_->solve_load(load).solution;
  Eigen::VectorXd kw = outer_solver_->apply(w);
  // Green's identity gives <A g, psi> = -sum_Gamma g_i (K w)_i since w vanishes on the boundary.
  return -trace_.restrict(kw);
}

Eigen::VectorXd RestrictionOperator::forward(const Eigen::VectorXd& g) const {
  return outer_solver_->solve_dirichlet(trace_.embed(g)).solution;
}

RungeResult RestrictionOperator::approximate(const Eigen::VectorXd& h, double eps, bool allow_unreached) const {
  if (h.size() != static_cast<Eigen::Index>(inner_nodes_.size())) {
    fail(ErrorKind::DimensionMismatch, "target must live on the inner region's nodes");
  }
  if (!(eps > 0.0 && eps < 1.0)) fail(ErrorKind::InvalidConfig, "eps must lie in (0, 1)");

  Eigen::VectorXd hg = to_global(h);
  const SparseMatrix& k = inner_solver_->op().system();
  Eigen::VectorXd r = k * hg;
  Eigen::VectorXd scale = SparseMatrix(k.cwiseAbs()) * hg.cwiseAbs();
  double rn = 0.0, sn = 0.0;
  for (int i : inner_solver_->op().nodes().interior) {
    rn += r[i] * r[i];
    sn += scale[i] * scale[i];
  }
  if (std::sqrt(rn) > options_.solution_tol * std::sqrt(sn)) {
    fail(ErrorKind::NotASolution, "target violates the interior equation (residual " +
                                      format_double(std::sqrt(rn / std::max(sn, 1e-300))) + ")");
  }

  RungeResult res;
  res.h1_norm = h1_norm(h);
  res.l2_norm = l2_norm(h);
  res.datum = Eigen::VectorXd::Zero(trace_.size());
  if (res.h1_norm == 0.0) return res;

  Eigen::VectorXd c = psi_.transpose() * weights_.cwiseProduct(h);
  const double target = eps * res.h1_norm;
  double remaining = res.l2_norm * res.l2_norm;
  int level = -1;
  for (int j = 0; j <= usable_; ++j) {
    if (j > 0) remaining -= c[j - 1] * c[j - 1];
    if (std::sqrt(std::max(remaining, 0.0)) <= target) {
      level = j;
      break;
    }
  }
  res.reached = level >= 0;
  if (!res.reached) {
    if (!allow_unreached) {
      fail(ErrorKind::TargetUnreachable, "eps=" + format_double(eps) + " is below the operator's resolution");
    }
    level = usable_;
  }
  res.truncation = level;
  Eigen::VectorXd coef = c.head(level).cwiseQuotient(sigma_.head(level));
  res.datum = phi_.leftCols(level) * coef;
  res.cost = coef.norm();
  Eigen::VectorXd residual = h - psi_.leftCols(level) * c.head(level);
  res.error = l2_norm(residual) / res.h1_norm;
  return res;
}

std::vector<FrontierRow> frontier_sweep(const RestrictionOperator& op, const Eigen::VectorXd& h,
                                        std::span<const double> eps) {
  std::vector<FrontierRow> rows;
  for (double e : eps) {
    RungeResult r = op.approximate(h, e, true);
    rows.push_back({e, r.error, r.cost, r.truncation, r.reached});
  }
  return rows;
}

double FrontierFit::constant() const { return std::max({1.0, std::exp(intercept), slope}); }

FrontierFit fit_frontier(std::span<const FrontierRow> rows, double h_l2_norm) {
  FrontierFit best;
  std::vector<double> eps, y;
  for (const FrontierRow& r : rows) {
    if (r.reached && r.cost > 0.0) {
      eps.push_back(r.epsilon);
      y.push_back(std::log(r.cost / h_l2_norm));
    }
  }
  best.points = static_cast<int>(eps.size());
  if (eps.size() < 2) return best;
  const double n = static_cast<double>(eps.size());
  for (int step = 1; step <= 200; ++step) {
    double mu = 0.01 * step;
    double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < eps.size(); ++i) {
      double x = std::pow(eps[i], -mu);
      sx += x;
      sy += y[i];
      sxx += x * x;
      sxy += x * y[i];
      syy += y[i] * y[i];
    }
    double vx = sxx - sx * sx / n, vy = syy - sy * sy / n, cxy = sxy - sx * sy / n;
    if (vx <= 0.0) continue;
    double slope = cxy / vx;
    double r2 = vy > 0.0 ? cxy * cxy / (vx * vy) : 1.0;
    if (slope > 0.0 && (!best.valid || r2 > best.r2)) {
      best.valid = true;
      best.mu = mu;
      best.slope = slope;
      best.intercept = (sy - slope * sx) / n;
      best.r2 = r2;
    }
  }
  return best;
}

void write_spectrum_csv(std::ostream& out, const Eigen::VectorXd& sigma) {
  out << "index,sigma\n";
  for (Eigen::Index j = 0; j < sigma.size(); ++j) out << j + 1 << ',' << format_double(sigma[j]) << '\n';
}

void write_sweep_csv(std::ostream& out, std::span<const FrontierRow> rows) {
  out << "epsilon,error,cost,truncation_level,reached\n";
  for (const FrontierRow& r : rows) {
    out << format_double(r.epsilon) << ',' << format_double(r.error) << ',' << format_double(r.cost) << ','
        << r.truncation << ',' << (r.reached ? 1 : 0) << '\n';
  }
}

}  // namespace lipstab
