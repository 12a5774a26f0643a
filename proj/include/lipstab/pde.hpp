#pragma once

#include <memory>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "lipstab/geometry.hpp"
#include "lipstab/potential.hpp"

namespace lipstab {

using SparseMatrix = Eigen::SparseMatrix<double>;

/// Lumped region mass per node: sum over region cells of (h/2)^n.
Eigen::VectorXd lumped_mass(const Mesh& mesh, Region region);
/// Lumped potential mass per node: sum over region cells c of (h/2)^n q_c(x_i).
Eigen::VectorXd lumped_potential(const Mesh& mesh, Region region, const PiecewiseAffinePotential& q);

/// Bilinear form int grad u . grad v + q u v over a region, on global node numbering.
class DiscreteOperator {
 public:
  DiscreteOperator(const Mesh& mesh, Region region, const PiecewiseAffinePotential& q);

  const Mesh& mesh() const { return *mesh_; }
  Region region() const { return region_; }
  const RegionNodes& nodes() const { return nodes_; }
  const SparseMatrix& stiffness() const { return stiffness_; }
  const SparseMatrix& system() const { return system_; }
  const Eigen::VectorXd& mass() const { return mass_; }

 private:
  const Mesh* mesh_;
  Region region_;
  RegionNodes nodes_;
  SparseMatrix stiffness_;
  SparseMatrix system_;
  Eigen::VectorXd mass_;
};

struct SolverOptions {
  double residual_tol = 1e-10;
  /// Negative selects 1e-6 * 2 pi^2 / diam^2 of the region.
  double spectral_tau = -1.0;
  int max_power_iterations = 5000;
  double power_tol = 1e-12;
};

struct SpectralReport {
  double lambda_min = 0.0;
  double margin = 0.0;
  double tau = 0.0;
  bool passed = false;
  int iterations = 0;
};

struct SolveReport {
  Eigen::VectorXd solution;  ///< global node numbering, zero off the region
  double residual = 0.0;
  double rhs_norm = 0.0;
};

struct TraceValues {
  std::vector<int> nodes;
  Eigen::VectorXd values;
  Eigen::VectorXd face_measure;
};

/// Factorized Dirichlet problem for (-Delta + q) on one region; immutable and safe for concurrent solves.
class DirichletSolver {
 public:
  DirichletSolver(const Mesh& mesh, Region region, const PiecewiseAffinePotential& q, SolverOptions options = {});
  ~DirichletSolver();
  DirichletSolver(const DirichletSolver&) = delete;
  DirichletSolver& operator=(const DirichletSolver&) = delete;

  const DiscreteOperator& op() const { return op_; }
  const Mesh& mesh() const { return op_.mesh(); }
  const PiecewiseAffinePotential& potential() const { return q_; }
  const SpectralReport& spectral() const { return spectral_; }
  const SolverOptions& options() const { return options_; }
  /// Throws SpectralFailure when the spectral check did not pass.
  void require_spectral() const;

  /// Boundary values are read from `g` at the region's boundary nodes.
  SolveReport solve_dirichlet(const Eigen::VectorXd& g) const;
  /// One column per datum; columns are global nodal vectors.
  Eigen::MatrixXd solve_dirichlet_many(const Eigen::MatrixXd& g) const;
  /// Zero boundary values and source h chi_inner, lumped on the inner region's cells.
  SolveReport solve_dual(Region inner, const Eigen::VectorXd& source) const;
  /// Zero boundary values and an already lumped load vector.
  SolveReport solve_load(const Eigen::VectorXd& load) const;

  /// K u in global numbering.
  Eigen::VectorXd apply(const Eigen::VectorXd& u) const;

 private:
  struct Factor;

  Eigen::MatrixXd solve_interior(const Eigen::MatrixXd& rhs) const;
  SpectralReport run_spectral_check() const;

  PiecewiseAffinePotential q_;
  DiscreteOperator op_;
  SolverOptions options_;
  std::vector<int> local_;  ///< global id -> interior index, -1 otherwise
  SparseMatrix k_ii_;
  SparseMatrix k_ib_;
  std::unique_ptr<Factor> factor_;
  SpectralReport spectral_;
};

/// Variational co-normal derivative on the closed portion (outward for the region).
TraceValues neumann_trace(const DirichletSolver& solver, const Eigen::VectorXd& u, const FlatPortion& portion,
                          const Eigen::VectorXd* load = nullptr);

/// Convenience wrapper around DirichletSolver::spectral.
SpectralReport spectral_check(const Mesh& mesh, Region region, const PiecewiseAffinePotential& q,
                              SolverOptions options = {});

}  // namespace lipstab
