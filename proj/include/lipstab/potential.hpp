#pragma once

#include <functional>
#include <iosfwd>
#include <vector>

#include <Eigen/Dense>

#include "lipstab/geometry.hpp"

namespace lipstab {

/// q(x) = a + A . x on one subdomain.
struct AffinePiece {
  double a = 0.0;
  Point A{0.0, 0.0, 0.0};

  double at(const Point& x) const { return a + dot(A, x); }
};

class PiecewiseAffinePotential {
 public:
  PiecewiseAffinePotential() = default;
  /// Zero potential on every subdomain.
  explicit PiecewiseAffinePotential(PartitionPtr partition);
  PiecewiseAffinePotential(PartitionPtr partition, std::vector<AffinePiece> pieces);

  const DomainPartition& partition() const { return *partition_; }
  const PartitionPtr& partition_ptr() const { return partition_; }
  const std::vector<AffinePiece>& pieces() const { return pieces_; }
  const AffinePiece& piece(int j) const { return pieces_.at(static_cast<std::size_t>(j)); }
  void set_piece(int j, const AffinePiece& piece);

  /// Throws PointOutsideDomain.
  double evaluate(const Point& x) const;

  /// Fingerprint of the coefficients, used in DtN headers.
  std::uint64_t hash() const;

  PiecewiseAffinePotential operator-(const PiecewiseAffinePotential& other) const;
  PiecewiseAffinePotential operator+(const PiecewiseAffinePotential& other) const;
  PiecewiseAffinePotential operator*(double s) const;
  /// Keeps the pieces of `region` and zeroes the rest.
  PiecewiseAffinePotential restricted(Region region) const;

 private:
  PartitionPtr partition_;
  std::vector<AffinePiece> pieces_;
};

/// max_j (|a^j| + |A^j|_2).
double triple_norm(const PiecewiseAffinePotential& q);
/// Exact L-infinity norm over a union of subdomains, from box vertices.
double sup_norm(const PiecewiseAffinePotential& q, Region region);
/// Subdomain where |q1 - q2| attains its maximum; ties go to the smallest index.
int max_subdomain(const PiecewiseAffinePotential& q1, const PiecewiseAffinePotential& q2);

/// Node values q_c(x_i), where c is the subdomain reported by `evaluate`.
Eigen::VectorXd nodal_values(const PiecewiseAffinePotential& q, const Mesh& mesh);
void write_potential_csv(std::ostream& out, const PiecewiseAffinePotential& q, const Mesh& mesh);

/// Finite family of basis functions with coefficients.
class BasisPotential {
 public:
  using Function = std::function<double(const Point&)>;

  BasisPotential(std::vector<Function> functions, Eigen::VectorXd coefficients);

  int size() const { return static_cast<int>(functions_.size()); }
  double evaluate(const Point& x) const;
  /// Rows: nodes of the portion; columns: basis functions.
  Eigen::MatrixXd sample_restriction(const Mesh& mesh, const FlatPortion& portion) const;
  /// sigma_min >= tol * sigma_max of the sampled restriction.
  bool restrictions_independent(const Mesh& mesh, const FlatPortion& portion, double tol = 1e-8) const;

 private:
  std::vector<Function> functions_;
  Eigen::VectorXd coefficients_;
};

}  // namespace lipstab
