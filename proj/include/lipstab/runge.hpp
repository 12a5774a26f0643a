#pragma once

#include <iosfwd>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "lipstab/dtn.hpp"

namespace lipstab {

struct RungeOptions {
  SolverOptions solver;
  /// Singular values below this fraction of sigma_1 are treated as numerically zero.
  double sigma_floor = 1e-12;
  /// Interior residual tolerance for targets, relative to |K| |h|.
  double solution_tol = 1e-8;
};

struct RungeResult {
  Eigen::VectorXd datum;  ///< trace coefficients on the control portion
  double error = 0.0;     ///< ||h - A g||_{L2(inner)} / ||h||_{H1(inner)}
  double cost = 0.0;      ///< ||g||_{H^{1/2}_{00}}
  int truncation = 0;
  bool reached = true;
  double h1_norm = 0.0;
  double l2_norm = 0.0;
};

/// A: trace coefficients on the control portion -> solution values on the inner region's nodes.
class RestrictionOperator {
 public:
  RestrictionOperator(const Mesh& mesh, Region inner, Region outer, const FlatPortion& control,
                      const PiecewiseAffinePotential& q, RungeOptions options = {});

  const Mesh& mesh() const { return *mesh_; }
  Region inner() const { return inner_; }
  Region outer() const { return outer_; }
  const TraceSpace& trace() const { return trace_; }
  const DirichletSolver& outer_solver() const { return *outer_solver_; }
  const DirichletSolver& inner_solver() const { return *inner_solver_; }
  const std::vector<int>& inner_nodes() const { return inner_nodes_; }
  const Eigen::VectorXd& weights() const { return weights_; }

  const Eigen::MatrixXd& matrix() const { return a_; }
  const Eigen::VectorXd& singular_values() const { return sigma_; }
  /// Columns phi_j, orthonormal in the H^{1/2}_{00} Gram.
  const Eigen::MatrixXd& phi() const { return phi_; }
  /// Columns psi_j, orthonormal in the lumped L2(inner) product.
  const Eigen::MatrixXd& psi() const { return psi_; }
  int usable_rank() const { return usable_; }

  Eigen::VectorXd apply(const Eigen::VectorXd& g) const { return a_ * g; }
  /// Neumann data of the dual solution with source psi chi_inner, as functional coefficients on the control basis.
  Eigen::VectorXd adjoint_apply(const Eigen::VectorXd& psi) const;
  /// Global solution on the outer region with datum g.
  Eigen::VectorXd forward(const Eigen::VectorXd& g) const;

  Eigen::VectorXd to_inner(const Eigen::VectorXd& global) const;
  Eigen::VectorXd to_global(const Eigen::VectorXd& inner) const;
  double inner_product(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const;
  double l2_norm(const Eigen::VectorXd& h) const { return std::sqrt(inner_product(h, h)); }
  double h1_norm(const Eigen::VectorXd& h) const;

  /// Spectral truncation with the smallest level meeting error <= eps ||h||_{H1}.
  /// Throws TargetUnreachable unless `allow_unreached`, in which case the full usable rank is returned flagged.
  RungeResult approximate(const Eigen::VectorXd& h, double eps, bool allow_unreached = false) const;

 private:
  const Mesh* mesh_;
  Region inner_, outer_;
  TraceSpace trace_;
  RungeOptions options_;
  std::unique_ptr<DirichletSolver> outer_solver_;
  std::unique_ptr<DirichletSolver> inner_solver_;
  std::vector<int> inner_nodes_;
  Eigen::VectorXd weights_;
  Eigen::MatrixXd solutions_;
  Eigen::MatrixXd a_;
  Eigen::VectorXd sigma_;
  Eigen::MatrixXd phi_, psi_;
  int usable_ = 0;
};

struct FrontierRow {
  double epsilon = 0.0;
  double error = 0.0;
  double cost = 0.0;
  int truncation = 0;
  bool reached = true;
};

std::vector<FrontierRow> frontier_sweep(const RestrictionOperator& op, const Eigen::VectorXd& h,
                                        std::span<const double> eps);

/// log(cost / ||h||_{L2}) = intercept + slope eps^{-mu}, best R^2 over mu in (0, 2].
struct FrontierFit {
  double mu = 0.0;
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  int points = 0;
  bool valid = false;
  /// max(1, e^intercept, slope): a constant C with cost <= C e^{C eps^{-mu}} ||h|| on the fitted rows.
  double constant() const;
};

FrontierFit fit_frontier(std::span<const FrontierRow> rows, double h_l2_norm);

void write_spectrum_csv(std::ostream& out, const Eigen::VectorXd& sigma);
void write_sweep_csv(std::ostream& out, std::span<const FrontierRow> rows);

}  // namespace lipstab
