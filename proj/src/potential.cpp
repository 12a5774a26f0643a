#include "lipstab/potential.hpp"

#include <cmath>
#include <ostream>

namespace lipstab {

PiecewiseAffinePotential::PiecewiseAffinePotential(PartitionPtr partition)
    : partition_(std::move(partition)), pieces_(static_cast<std::size_t>(partition_->subdomain_count())) {}

PiecewiseAffinePotential::PiecewiseAffinePotential(PartitionPtr partition, std::vector<AffinePiece> pieces)
    : partition_(std::move(partition)), pieces_(std::move(pieces)) {
  if (static_cast<int>(pieces_.size()) != partition_->subdomain_count()) {
    fail(ErrorKind::DimensionMismatch, "one affine piece per subdomain is required");
  }
  for (AffinePiece& p : pieces_) {
    for (int d = partition_->dimension(); d < kMaxDimension; ++d) p.A[d] = 0.0;
  }
}

void PiecewiseAffinePotential::set_piece(int j, const AffinePiece& piece) {
  AffinePiece p = piece;
  for (int d = partition_->dimension(); d < kMaxDimension; ++d) p.A[d] = 0.0;
  pieces_.at(static_cast<std::size_t>(j)) = p;
}

double PiecewiseAffinePotential::evaluate(const Point& x) const {
  int j = partition_->locate(x);
  if (j < 0) fail(ErrorKind::PointOutsideDomain, "point outside the domain");
  return piece(j).at(x);
}

std::uint64_t PiecewiseAffinePotential::hash() const {
  std::vector<double> flat;
  for (const AffinePiece& p : pieces_) {
    flat.push_back(p.a);
    flat.insert(flat.end(), p.A.begin(), p.A.end());
  }
  return fnv1a_doubles(flat.data(), flat.size());
}

PiecewiseAffinePotential PiecewiseAffinePotential::operator-(const PiecewiseAffinePotential& other) const {
  if (pieces_.size() != other.pieces_.size()) fail(ErrorKind::DimensionMismatch, "potentials on different partitions");
  std::vector<AffinePiece> out(pieces_.size());
  for (std::size_t j = 0; j < out.size(); ++j) {
    out[j].a = pieces_[j].a - other.pieces_[j].a;
    out[j].A = pieces_[j].A - other.pieces_[j].A;
  }
  return PiecewiseAffinePotential(partition_, std::move(out));
}

PiecewiseAffinePotential PiecewiseAffinePotential::operator+(const PiecewiseAffinePotential& other) const {
  if (pieces_.size() != other.pieces_.size()) fail(ErrorKind::DimensionMismatch, "potentials on different partitions");
  std::vector<AffinePiece> out(pieces_.size());
  for (std::size_t j = 0; j < out.size(); ++j) {
    out[j].a = pieces_[j].a + other.pieces_[j].a;
    out[j].A = pieces_[j].A + other.pieces_[j].A;
  }
  return PiecewiseAffinePotential(partition_, std::move(out));
}

PiecewiseAffinePotential PiecewiseAffinePotential::operator*(double s) const {
  std::vector<AffinePiece> out(pieces_);
  for (AffinePiece& p : out) {
    p.a *= s;
    p.A = s * p.A;
  }
  return PiecewiseAffinePotential(partition_, std::move(out));
}

PiecewiseAffinePotential PiecewiseAffinePotential::restricted(Region region) const {
  PiecewiseAffinePotential out(partition_);
  for (int j : region.members()) {
    if (j < static_cast<int>(pieces_.size())) out.pieces_[static_cast<std::size_t>(j)] = pieces_[static_cast<std::size_t>(j)];
  }
  return out;
}

double triple_norm(const PiecewiseAffinePotential& q) {
  double best = 0.0;
  for (const AffinePiece& p : q.pieces()) best = std::max(best, std::abs(p.a) + std::sqrt(dot(p.A, p.A)));
  return best;
}

namespace {

double box_sup(const AffinePiece& p, const Box& b, int dim) {
  double best = 0.0;
  for (int v = 0; v < (1 << dim); ++v) {
    Point x{0.0, 0.0, 0.0};
    for (int d = 0; d < dim; ++d) x[d] = ((v >> d) & 1) ? b.hi[d] : b.lo[d];
    best = std::max(best, std::abs(p.at(x)));
  }
  return best;
}

}  // namespace

double sup_norm(const PiecewiseAffinePotential& q, Region region) {
  if (region.empty()) fail(ErrorKind::EmptyRegion, "sup norm over an empty region");
  double best = 0.0;
  for (int j : region.members()) {
    if (j >= q.partition().subdomain_count()) fail(ErrorKind::EmptyRegion, "region references unknown subdomain");
    best = std::max(best, box_sup(q.piece(j), q.partition().subdomain(j), q.partition().dimension()));
  }
  return best;
}

int max_subdomain(const PiecewiseAffinePotential& q1, const PiecewiseAffinePotential& q2) {
  PiecewiseAffinePotential diff = q1 - q2;
  int best = 0;
  double best_value = -1.0;
  for (int j = 0; j < diff.partition().subdomain_count(); ++j) {
    double v = box_sup(diff.piece(j), diff.partition().subdomain(j), diff.partition().dimension());
    if (v > best_value) {
      best_value = v;
      best = j;
    }
  }
  return best;
}

Eigen::VectorXd nodal_values(const PiecewiseAffinePotential& q, const Mesh& mesh) {
  Eigen::VectorXd out(mesh.node_count());
  for (int i = 0; i < mesh.node_count(); ++i) out[i] = q.evaluate(mesh.node(i));
  return out;
}

void write_potential_csv(std::ostream& out, const PiecewiseAffinePotential& q, const Mesh& mesh) {
  static const char* names[] = {"x", "y", "z"};
  for (int d = 0; d < mesh.dimension(); ++d) out << names[d] << ',';
  out << "q\n";
  Eigen::VectorXd v = nodal_values(q, mesh);
  for (int i = 0; i < mesh.node_count(); ++i) {
    for (int d = 0; d < mesh.dimension(); ++d) out << format_double(mesh.node(i)[d]) << ',';
    out << format_double(v[i]) << '\n';
  }
}

BasisPotential::BasisPotential(std::vector<Function> functions, Eigen::VectorXd coefficients)
    : functions_(std::move(functions)), coefficients_(std::move(coefficients)) {
  if (coefficients_.size() != static_cast<Eigen::Index>(functions_.size())) {
    fail(ErrorKind::DimensionMismatch, "one coefficient per basis function is required");
  }
}

double BasisPotential::evaluate(const Point& x) const {
  double s = 0.0;
  for (std::size_t i = 0; i < functions_.size(); ++i) s += coefficients_[static_cast<Eigen::Index>(i)] * functions_[i](x);
  return s;
}

Eigen::MatrixXd BasisPotential::sample_restriction(const Mesh& mesh, const FlatPortion& portion) const {
  std::vector<int> nodes = mesh.portion_nodes(portion, false);
  Eigen::MatrixXd m(static_cast<Eigen::Index>(nodes.size()), size());
  for (std::size_t r = 0; r < nodes.size(); ++r) {
    for (int c = 0; c < size(); ++c) {
      m(static_cast<Eigen::Index>(r), c) = functions_[static_cast<std::size_t>(c)](mesh.node(nodes[r]));
    }
  }
  return m;
}

bool BasisPotential::restrictions_independent(const Mesh& mesh, const FlatPortion& portion, double tol) const {
  Eigen::MatrixXd m = sample_restriction(mesh, portion);
  if (m.rows() < m.cols() || m.cols() == 0) return false;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const auto& s = svd.singularValues();
  return s[s.size() - 1] >= tol * s[0];
}

}  // namespace lipstab
