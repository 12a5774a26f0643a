#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "lipstab/pde.hpp"

namespace lipstab {

/// Nodal hat basis on the open portion with L2, H^{1/2}_{00} and H^{-1/2}_{00} Gram matrices.
class TraceSpace {
 public:
  TraceSpace(const Mesh& mesh, const FlatPortion& portion);

  const Mesh& mesh() const { return *mesh_; }
  const FlatPortion& portion() const { return portion_; }
  const std::vector<int>& nodes() const { return nodes_; }
  int size() const { return static_cast<int>(nodes_.size()); }

  const Eigen::MatrixXd& mass() const { return mass_; }
  /// Zero-trace stiffness plus mass on the portion.
  const Eigen::MatrixXd& stiffness() const { return stiffness_; }
  /// M V Lambda^{1/2} V^T M with S V = M V Lambda, V^T M V = I.
  const Eigen::MatrixXd& gram() const { return gram_; }
  const Eigen::MatrixXd& dual_gram() const { return dual_gram_; }
  const Eigen::MatrixXd& gram_inv_sqrt() const { return gram_inv_sqrt_; }

  double norm(const Eigen::VectorXd& c) const { return std::sqrt(c.dot(gram_ * c)); }
  double l2_norm(const Eigen::VectorXd& c) const { return std::sqrt(c.dot(mass_ * c)); }
  /// Element of the trace space representing a functional: G^{-1} f.
  Eigen::VectorXd riesz(const Eigen::VectorXd& functional) const { return dual_gram_ * functional; }

  /// Global nodal vector with these coefficients on the portion and zero elsewhere.
  Eigen::VectorXd embed(const Eigen::VectorXd& coeffs) const;
  Eigen::VectorXd restrict(const Eigen::VectorXd& nodal) const;
  Eigen::VectorXd interpolate(const std::function<double(const Point&)>& f) const;

 private:
  const Mesh* mesh_;
  FlatPortion portion_;
  std::vector<int> nodes_;
  Eigen::MatrixXd mass_, stiffness_, gram_, dual_gram_, gram_inv_sqrt_;
};

TraceSpace build_trace_space(const Mesh& mesh, const FlatPortion& portion);

struct DtnMatrix {
  Eigen::MatrixXd values;  ///< entry (i, j) = <Lambda phi_j, phi_i>
  std::string region;
  int portion = 0;  ///< 1-based chain position of the portion
  double h = 0.0;
  std::uint64_t potential_hash = 0;

  double symmetry_error() const;
};

struct DtnAssembly {
  DtnMatrix dtn;
  Eigen::MatrixXd solutions;  ///< one global nodal solution per basis function
};

std::string region_label(Region region);

DtnAssembly assemble_dtn(const DirichletSolver& solver, const TraceSpace& trace);

/// Largest singular value of G^{-1/2} (L1 - L2) G^{-1/2}.
double dtn_gap(const DtnMatrix& l1, const DtnMatrix& l2, const TraceSpace& trace);
/// Same norm applied to a raw matrix.
double dual_norm(const Eigen::MatrixXd& m, const TraceSpace& trace);

struct AlessandriniResult {
  double lhs = 0.0;
  double rhs = 0.0;
  double residual = 0.0;
};

/// lhs = <(L1 - L2) g1, g2>; rhs = lumped quadrature of (q1 - q2) u1 u2 over the solver region.
AlessandriniResult alessandrini_pairing(const DtnMatrix& l1, const DtnMatrix& l2, const DirichletSolver& s1,
                                        const DirichletSolver& s2, const TraceSpace& trace,
                                        const Eigen::VectorXd& g1, const Eigen::VectorXd& g2);

using HeaderFields = std::vector<std::pair<std::string, std::string>>;

void write_dtn_csv(std::ostream& out, const DtnMatrix& dtn, const HeaderFields& extra = {});
DtnMatrix read_dtn_csv(std::istream& in);

}  // namespace lipstab
