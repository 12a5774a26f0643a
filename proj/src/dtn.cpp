#include "lipstab/dtn.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace lipstab {

namespace {

Eigen::MatrixXd tridiagonal(int n, double diag, double off) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    m(i, i) = diag;
    if (i + 1 < n) m(i, i + 1) = m(i + 1, i) = off;
  }
  return m;
}

Eigen::MatrixXd kron(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  }
  return out;
}

}  // namespace

TraceSpace::TraceSpace(const Mesh& mesh, const FlatPortion& portion) : mesh_(&mesh), portion_(portion) {
  const double h = mesh.spacing();
  nodes_ = mesh.portion_nodes(portion, true);
  const int per_axis = static_cast<int>(std::lround(2.0 * portion.extent / h)) - 1;
  const int dims = mesh.dimension() - 1;
  int expected = 1;
  for (int d = 0; d < dims; ++d) expected *= std::max(per_axis, 0);
  if (static_cast<int>(nodes_.size()) != expected) {
    fail(ErrorKind::PortionNotOnBoundary, "portion is not fully resolved by mesh nodes");
  }
  if (expected < 3) fail(ErrorKind::PortionTooCoarse, "portion has fewer than 3 interior nodes");

  Eigen::MatrixXd m1 = tridiagonal(per_axis, 4.0 * h / 6.0, h / 6.0);
  Eigen::MatrixXd k1 = tridiagonal(per_axis, 2.0 / h, -1.0 / h);
  Eigen::MatrixXd k;
  if (dims == 1) {
    mass_ = m1;
    k = k1;
  } else {
    // lower tangential axis varies fastest in node order
    mass_ = kron(m1, m1);
    k = kron(k1, m1) + kron(m1, k1);
  }
  stiffness_ = k + mass_;

  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> ges(stiffness_, mass_);
  if (ges.info() != Eigen::Success) fail(ErrorKind::SingularOperator, "trace Gram eigensolve failed");
  const Eigen::MatrixXd& v = ges.eigenvectors();
  Eigen::VectorXd lam = ges.eigenvalues();
  Eigen::MatrixXd mv = mass_ * v;
  gram_ = mv * lam.cwiseSqrt().asDiagonal() * mv.transpose();
  gram_ = 0.5 * (gram_ + gram_.transpose());
  dual_gram_ = v * lam.cwiseSqrt().cwiseInverse().asDiagonal() * v.transpose();
  dual_gram_ = 0.5 * (dual_gram_ + dual_gram_.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram_);
  gram_inv_sqrt_ = es.eigenvectors() * es.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() *
                   es.eigenvectors().transpose();
}

TraceSpace build_trace_space(const Mesh& mesh, const FlatPortion& portion) { return TraceSpace(mesh, portion); }

Eigen::VectorXd TraceSpace::embed(const Eigen::VectorXd& coeffs) const {
  if (coeffs.size() != size()) fail(ErrorKind::DimensionMismatch, "trace coefficient vector has wrong size");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(mesh_->node_count());
  for (int i = 0; i < size(); ++i) out[nodes_[static_cast<std::size_t>(i)]] = coeffs[i];
  return out;
}

Eigen::VectorXd TraceSpace::restrict(const Eigen::VectorXd& nodal) const {
  Eigen::VectorXd out(size());
  for (int i = 0; i < size(); ++i) out[i] = nodal[nodes_[static_cast<std::size_t>(i)]];
  return out;
}

Eigen::VectorXd TraceSpace::interpolate(const std::function<double(const Point&)>& f) const {
  Eigen::VectorXd out(size());
  for (int i = 0; i < size(); ++i) out[i] = f(mesh_->node(nodes_[static_cast<std::size_t>(i)]));
  return out;
}

double DtnMatrix::symmetry_error() const {
  double scale = values.cwiseAbs().maxCoeff();
  if (scale == 0.0) return 0.0;
  return (values - values.transpose()).cwiseAbs().maxCoeff() / scale;
}

std::string region_label(Region region) {
  std::string out = "D";
  bool first = true;
  for (int j : region.members()) {
    out += (first ? "" : "+") + std::to_string(j + 1);
    first = false;
  }
  return out;
}

DtnAssembly assemble_dtn(const DirichletSolver& solver, const TraceSpace& trace) {
  solver.require_spectral();
  const RegionNodes& rn = solver.op().nodes();
  for (int id : trace.nodes()) {
    if (!std::binary_search(rn.boundary.begin(), rn.boundary.end(), id)) {
      fail(ErrorKind::PortionNotOnBoundary, "trace node is not on the region boundary");
    }
  }
  const int m = trace.size();
  Eigen::MatrixXd data = Eigen::MatrixXd::Zero(solver.mesh().node_count(), m);
  for (int j = 0; j < m; ++j) data(trace.nodes()[static_cast<std::size_t>(j)], j) = 1.0;
  DtnAssembly out;
  out.solutions = solver.solve_dirichlet_many(data);
  Eigen::MatrixXd r = solver.op().system() * out.solutions;
  out.dtn.values.resize(m, m);
  for (int i = 0; i < m; ++i) out.dtn.values.row(i) = r.row(trace.nodes()[static_cast<std::size_t>(i)]);
  out.dtn.region = region_label(solver.op().region());
  out.dtn.portion = trace.portion().step + 1;
  out.dtn.h = solver.mesh().spacing();
  out.dtn.potential_hash = solver.potential().hash();
  return out;
}

double dual_norm(const Eigen::MatrixXd& m, const TraceSpace& trace) {
  if (m.rows() != trace.size() || m.cols() != trace.size()) {
    fail(ErrorKind::DimensionMismatch, "matrix does not match the trace space");
  }
  Eigen::MatrixXd w = trace.gram_inv_sqrt() * m * trace.gram_inv_sqrt();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(w);
  return svd.singularValues()[0];
}

double dtn_gap(const DtnMatrix& l1, const DtnMatrix& l2, const TraceSpace& trace) {
  if (l1.values.rows() != l2.values.rows() || l1.values.cols() != l2.values.cols()) {
    fail(ErrorKind::DimensionMismatch, "DtN matrices of different sizes");
  }
  return dual_norm(l1.values - l2.values, trace);
}

AlessandriniResult alessandrini_pairing(const DtnMatrix& l1, const DtnMatrix& l2, const DirichletSolver& s1,
                                        const DirichletSolver& s2, const TraceSpace& trace,
                                        const Eigen::VectorXd& g1, const Eigen::VectorXd& g2) {
  if (g1.size() != trace.size() || g2.size() != trace.size() || l1.values.rows() != trace.size() ||
      l2.values.rows() != trace.size()) {
    fail(ErrorKind::DimensionMismatch, "pairing inputs do not match the trace space");
  }
  AlessandriniResult res;
  res.lhs = g2.dot((l1.values - l2.values) * g1);
  Eigen::VectorXd u1 = s1.solve_dirichlet(trace.embed(g1)).solution;
  Eigen::VectorXd u2 = s2.solve_dirichlet(trace.embed(g2)).solution;
  Eigen::VectorXd w = lumped_potential(s1.mesh(), s1.op().region(), s1.potential() - s2.potential());
  res.rhs = (w.array() * u1.array() * u2.array()).sum();
  res.residual = std::abs(res.lhs - res.rhs) /
                 (std::abs(res.lhs) + std::abs(res.rhs) + std::numeric_limits<double>::epsilon());
  return res;
}

void write_dtn_csv(std::ostream& out, const DtnMatrix& dtn, const HeaderFields& extra) {
  for (const auto& [k, v] : extra) out << "# " << k << '=' << v << '\n';
  out << "# region=" << dtn.region << '\n';
  out << "# portion=" << dtn.portion << '\n';
  out << "# h=" << format_double(dtn.h) << '\n';
  out << "# q_hash=" << hex64(dtn.potential_hash) << '\n';
  out << "# size=" << dtn.values.rows() << '\n';
  for (Eigen::Index i = 0; i < dtn.values.rows(); ++i) {
    for (Eigen::Index j = 0; j < dtn.values.cols(); ++j) {
      if (j > 0) out << ',';
      out << format_double(dtn.values(i, j));
    }
    out << '\n';
  }
}

DtnMatrix read_dtn_csv(std::istream& in) {
  DtnMatrix dtn;
  std::string line;
  std::vector<std::vector<double>> rows;
  int line_no = 0;
  long size = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line[0] == '#') {
      auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      std::string key = line.substr(1, eq - 1);
      key.erase(0, key.find_first_not_of(' '));
      std::string value = line.substr(eq + 1);
      try {
        if (key == "region") dtn.region = value;
        else if (key == "portion") dtn.portion = std::stoi(value);
        else if (key == "h") dtn.h = std::stod(value);
        else if (key == "q_hash") dtn.potential_hash = std::stoull(value, nullptr, 16);
        else if (key == "size") size = std::stol(value);
      } catch (const std::exception&) {
        fail(ErrorKind::ParseError, "line " + std::to_string(line_no) + ": bad header value for " + key);
      }
      continue;
    }
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        fail(ErrorKind::ParseError, "line " + std::to_string(line_no) + ": not a number: " + cell);
      }
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      fail(ErrorKind::ParseError, "line " + std::to_string(line_no) + ": ragged row");
    }
    rows.push_back(std::move(row));
  }
  const auto n = static_cast<Eigen::Index>(rows.size());
  if (n == 0 || static_cast<Eigen::Index>(rows.front().size()) != n || (size >= 0 && size != n)) {
    fail(ErrorKind::DimensionMismatch, "DtN CSV is not a square matrix of the declared size");
  }
  dtn.values.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) dtn.values(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }
  return dtn;
}

}  // namespace lipstab
