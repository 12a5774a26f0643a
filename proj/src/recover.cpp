#include "lipstab/recover.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>
#include <thread>

namespace lipstab {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double cos2_bump(double s, double w) {
  if (std::abs(s) >= w) return 0.0;
  double c = std::cos(std::numbers::pi * s / (2.0 * w));
  return c * c;
}

struct LineFit {
  double intercept = 0.0;
  double slope = 0.0;
  double rms = 0.0;
};

LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  LineFit f;
  double vx = sxx - sx * sx / n;
  if (vx <= 1e-30) {
    f.intercept = sy / n;
  } else {
    f.slope = (sxy - sx * sy / n) / vx;
    f.intercept = (sy - f.slope * sx) / n;
  }
  double ss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double r = y[i] - f.intercept - f.slope * x[i];
    ss += r * r;
  }
  f.rms = std::sqrt(ss / n);
  return f;
}

double drift_corrected(const ProbeSample& s, const Point& point, const FlatPortion& portion,
                       const EstimateHints& hints) {
  double v = s.value;
  for (int t : portion.tangent_axes()) v -= hints.tangential_slope[t] * (s.centroid[t] - point[t]);
  return v;
}

/// Throws when values sorted by depth move in both directions by more than the tolerance.
void require_monotone(std::vector<std::pair<double, double>> pts) {
  if (pts.size() < 3) return;
  std::sort(pts.begin(), pts.end());
  double scale = 0.0;
  for (const auto& p : pts) scale = std::max(scale, std::abs(p.second));
  const double tol = 1e-2 * scale + 1e-8;
  double up = 0.0, down = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    double d = pts[i].second - pts[i - 1].second;
    up = std::max(up, d);
    down = std::max(down, -d);
  }
  if (up > tol && down > tol) {
    fail(ErrorKind::ExtrapolationUnstable, "probe ladder is not monotone in depth");
  }
}

}  // namespace

ProbeFamily direct_probe_family() { return ProbeFamily{}; }

ProbeFamily propagated_probe_family() {
  ProbeFamily f;
  f.shape = ProbeShape::Bump;
  f.cross_offsets = {1.0 / 16.0, 1.0 / 8.0};
  f.cross_width = 1.0 / 8.0;
  f.budget_tolerance = 1.0;
  return f;
}

Eigen::VectorXd probe_trace(const TraceSpace& trace, const Point& center, double width, ProbeShape shape) {
  const FlatPortion& portion = trace.portion();
  std::vector<int> tangents = portion.tangent_axes();
  Eigen::VectorXd wide(trace.size()), narrow(trace.size());
  for (int i = 0; i < trace.size(); ++i) {
    const Point& x = trace.mesh().node(trace.nodes()[static_cast<std::size_t>(i)]);
    double a = 1.0, b = 1.0;
    for (int t : tangents) {
      a *= cos2_bump(x[t] - center[t], width);
      b *= cos2_bump(x[t] - center[t], 0.5 * width);
    }
    wide[i] = a;
    narrow[i] = b;
  }
  Eigen::VectorXd g = wide;
  if (shape == ProbeShape::ZeroMean) {
    if (narrow.sum() <= 0.0) fail(ErrorKind::PortionTooCoarse, "probe is narrower than the mesh");
    g = wide - (wide.sum() / narrow.sum()) * narrow;
  }
  double n = trace.l2_norm(g);
  if (!(n > 0.0)) fail(ErrorKind::PortionTooCoarse, "probe has no support on the portion nodes");
  return g / n;
}

MeasuredPairing::MeasuredPairing(std::shared_ptr<const TraceSpace> trace, Eigen::MatrixXd l1, Eigen::MatrixXd l2,
                                 double relative_noise)
    : trace_(std::move(trace)), noise_(relative_noise) {
  if (l1.rows() != trace_->size() || l2.rows() != trace_->size() || l1.cols() != l2.cols() ||
      l1.rows() != l1.cols()) {
    fail(ErrorKind::DimensionMismatch, "measured DtN matrices do not match the trace space");
  }
  diff_ = l1 - l2;
  gap_ = dual_norm(diff_, *trace_);
  scale_ = std::max(dual_norm(l1, *trace_), dual_norm(l2, *trace_));
}

Pairing MeasuredPairing::pair(const Eigen::VectorXd& ga, const Eigen::VectorXd& gb) const {
  Pairing p;
  p.value = gb.dot(diff_ * ga);
  const double m = static_cast<double>(trace_->size());
  const double rel = 64.0 * m * std::numeric_limits<double>::epsilon() + noise_ * std::sqrt(m);
  p.budget = rel * scale_ * trace_->norm(ga) * trace_->norm(gb);
  return p;
}

PropagatedPairing::PropagatedPairing(Parts parts) : parts_(std::move(parts)) {
  const Parts& p = parts_;
  if (!p.previous || !p.a1 || !p.a2 || !p.s1 || !p.s2 || !p.trace) {
    fail(ErrorKind::InvalidConfig, "incomplete propagation inputs");
  }
  if (p.a1->inner() != p.s1->op().region() || p.a2->inner() != p.s2->op().region()) {
    fail(ErrorKind::DimensionMismatch, "Runge inner region differs from the step region");
  }
  if (p.a1->trace().size() != p.previous->trace().size()) {
    fail(ErrorKind::DimensionMismatch, "Runge control portion differs from the data portion");
  }
  const Mesh& mesh = p.s1->mesh();
  correction_weights_ = lumped_potential(mesh, p.corrected, p.correction);
  inner_weights_ = lumped_mass(mesh, p.s1->op().region());
}

Pairing PropagatedPairing::pair(const Eigen::VectorXd& ga, const Eigen::VectorXd& gb) const {
  const Parts& p = parts_;
  Eigen::VectorXd u1 = p.s1->solve_dirichlet(p.trace->embed(ga)).solution;
  Eigen::VectorXd u2 = p.s2->solve_dirichlet(p.trace->embed(gb)).solution;
  RungeResult r1 = p.a1->approximate(p.a1->to_inner(u1), p.eps);
  RungeResult r2 = p.a2->approximate(p.a2->to_inner(u2), p.eps);
  Eigen::VectorXd v1 = p.a1->forward(r1.datum);
  Eigen::VectorXd v2 = p.a2->forward(r2.datum);
  Pairing prev = p.previous->pair(r1.datum, r2.datum);
  double corr = (correction_weights_.array() * v1.array() * v2.array()).sum();

  auto l2 = [&](const Eigen::VectorXd& f) { return std::sqrt((inner_weights_.array() * f.array().square()).sum()); };
  Pairing out;
  out.value = prev.value - corr;
  out.budget = p.difference_bound * (l2(u1 - v1) * l2(v2) + l2(u1) * l2(u2 - v2)) + prev.budget;
  return out;
}

BoundaryProbe::BoundaryProbe(std::shared_ptr<const PairingSource> source, std::shared_ptr<const DirichletSolver> s1,
                             std::shared_ptr<const DirichletSolver> s2, ProbeFamily family, double r0)
    : source_(std::move(source)), s1_(std::move(s1)), s2_(std::move(s2)), family_(std::move(family)), r0_(r0) {
  if (s1_->op().region() != s2_->op().region()) fail(ErrorKind::DimensionMismatch, "probe solvers on different regions");
  const RegionNodes& rn = s1_->op().nodes();
  for (int id : trace().nodes()) {
    if (!std::binary_search(rn.boundary.begin(), rn.boundary.end(), id)) {
      fail(ErrorKind::PortionNotOnBoundary, "probe portion is not on the step region's boundary");
    }
  }
  weights_ = lumped_mass(s1_->mesh(), s1_->op().region());
}

ProbeSample BoundaryProbe::sample(const Point& center_a, const Point& center_b, double width) const {
  std::array<double, 7> key{center_a[0], center_a[1], center_a[2], center_b[0], center_b[1], center_b[2], width};
  {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
  }
  ProbeSample s;
  s.center_a = center_a;
  s.center_b = center_b;
  s.width = width;
  Eigen::VectorXd ga = probe_trace(trace(), center_a, width, family_.shape);
  Eigen::VectorXd gb = center_a == center_b ? ga : probe_trace(trace(), center_b, width, family_.shape);
  s.data_norm = trace().norm(ga) * trace().norm(gb);
  Eigen::VectorXd u1 = s1_->solve_dirichlet(trace().embed(ga)).solution;
  Eigen::VectorXd u2 = s2_->solve_dirichlet(trace().embed(gb)).solution;
  Eigen::ArrayXd density = weights_.array() * u1.array() * u2.array();
  s.weight = density.sum();
  const Mesh& mesh = s1_->mesh();
  for (int d = 0; d < mesh.dimension(); ++d) {
    double acc = 0.0;
    for (int i = 0; i < mesh.node_count(); ++i) acc += density[i] * mesh.node(i)[d];
    s.centroid[d] = s.weight != 0.0 ? acc / s.weight : 0.0;
  }
  const FlatPortion& p = portion();
  s.depth = (s.centroid[p.normal_axis] - p.anchor[p.normal_axis]) * p.normal_sign;
  if (s.weight > 0.0) {
    Pairing pr = source_->pair(ga, gb);
    s.pairing = pr.value;
    s.value = pr.value / s.weight;
    s.budget = pr.budget / s.weight;
    s.feasible = s.budget <= family_.budget_tolerance * std::max(std::abs(s.value), family_.budget_floor);
  } else {
    s.feasible = false;
  }
  std::lock_guard<std::mutex> lock(mutex_);
  cache_.emplace(key, s);
  return s;
}

std::vector<ProbeSample> BoundaryProbe::ladder(const Point& point) const {
  std::vector<ProbeSample> out;
  for (double f : family_.width_factors) {
    ProbeSample s = sample(point, point, f * r0_);
    if (s.feasible) out.push_back(s);
  }
  return out;
}

std::vector<ProbeSample> BoundaryProbe::cross_samples() const {
  std::vector<ProbeSample> out;
  const FlatPortion& p = portion();
  std::vector<int> tangents = p.tangent_axes();
  for (double t : family_.cross_offsets) {
    Point e = axis_vector(tangents.front(), t * r0_);
    ProbeSample s = sample(p.anchor - e, p.anchor + e, family_.cross_width * r0_);
    if (s.feasible) out.push_back(s);
  }
  return out;
}

PointEstimate estimate_pointwise_difference(const BoundaryProbe& probe, const Point& point,
                                            const EstimateHints& hints) {
  const FlatPortion& p = probe.portion();
  const double tol = 1e-9 * std::max(1.0, probe.r0());
  if (std::abs(point[p.normal_axis] - p.anchor[p.normal_axis]) > tol ||
      std::sqrt(dot(point - p.anchor, point - p.anchor)) > probe.r0() / 4.0 + tol) {
    fail(ErrorKind::ProbeOutsideWindow, "point is outside the portion window of radius r0/4");
  }
  std::vector<ProbeSample> samples = probe.ladder(point);
  if (samples.empty()) {
    // Every width within its own budget of zero carries no detectable difference.
    bool null = true;
    for (double f : probe.family().width_factors) {
      ProbeSample s = probe.sample(point, point, f * probe.r0());
      null = null && s.weight > 0.0 && std::abs(s.value) <= s.budget;
    }
    if (!null) fail(ErrorKind::ExtrapolationUnstable, "no probe width passed the error budget");
    PointEstimate est;
    est.below_budget = true;
    return est;
  }
  std::vector<double> depth, value;
  std::vector<std::pair<double, double>> pts;
  for (const ProbeSample& s : samples) {
    depth.push_back(s.depth);
    value.push_back(drift_corrected(s, point, p, hints));
    pts.emplace_back(depth.back(), value.back());
  }
  require_monotone(pts);
  PointEstimate est;
  est.samples = static_cast<int>(samples.size());
  if (samples.size() >= 2) {
    LineFit f = fit_line(depth, value);
    est.value = f.intercept;
    est.slope = f.slope;
    est.residual = f.rms;
  } else if (hints.normal_slope) {
    est.value = value.front() - *hints.normal_slope * depth.front();
    est.used_hint = true;
  } else {
    est.value = value.front();
  }
  return est;
}

NormalEstimate estimate_normal_derivative(const BoundaryProbe& probe, const EstimateHints& hints) {
  const FlatPortion& p = probe.portion();
  std::vector<ProbeSample> samples = probe.ladder(p.anchor);
  std::vector<ProbeSample> cross = probe.cross_samples();
  samples.insert(samples.end(), cross.begin(), cross.end());
  if (samples.size() < 2) fail(ErrorKind::ExtrapolationUnstable, "normal derivative needs two feasible probes");
  std::vector<double> depth, value;
  std::vector<std::pair<double, double>> pts;
  for (const ProbeSample& s : samples) {
    depth.push_back(s.depth);
    value.push_back(drift_corrected(s, p.anchor, p, hints));
    pts.emplace_back(depth.back(), value.back());
  }
  require_monotone(pts);
  LineFit f = fit_line(depth, value);
  NormalEstimate est;
  const double t1 = probe.r0() / 16.0, t2 = probe.r0() / 8.0;
  est.value_near = f.intercept + f.slope * t1;
  est.value_far = f.intercept + f.slope * t2;
  est.slope = (est.value_far - est.value_near) / (t2 - t1);
  est.samples = static_cast<int>(samples.size());
  est.residual = f.rms;
  return est;
}

AffineEstimate recover_affine(const FlatPortion& portion, double r0, double anchor_value,
                              const std::vector<double>& tangential_values, double normal_derivative) {
  std::vector<int> tangents = portion.tangent_axes();
  if (tangential_values.size() != tangents.size()) {
    fail(ErrorKind::DimensionMismatch, "need one tangential value per tangent direction");
  }
  AffineEstimate e;
  const double step = r0 / 5.0;
  for (std::size_t j = 0; j < tangents.size(); ++j) {
    e.beta[tangents[j]] = (tangential_values[j] - anchor_value) / step;
  }
  e.beta[portion.normal_axis] = normal_derivative * portion.normal_sign;
  e.alpha = anchor_value - dot(e.beta, portion.anchor);
  return e;
}

AffineEstimate recover_affine(const BoundaryProbe& probe) {
  const FlatPortion& p = probe.portion();
  std::vector<int> tangents = p.tangent_axes();
  EstimateHints hints;
  AffineEstimate est;
  for (int it = 1; it <= 10; ++it) {
    // Without two feasible probes the normal slope defaults to zero and the piece is flagged.
    NormalEstimate ne;
    bool normal_ok = true;
    try {
      ne = estimate_normal_derivative(probe, hints);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::ExtrapolationUnstable) throw;
      normal_ok = false;
    }
    hints.normal_slope = ne.slope;
    PointEstimate v0 = estimate_pointwise_difference(probe, p.anchor, hints);
    std::vector<double> vt;
    bool confident = normal_ok && (v0.samples >= 2 || v0.used_hint);
    std::vector<double> residuals{v0.residual};
    for (int t : tangents) {
      PointEstimate v = estimate_pointwise_difference(probe, p.anchor + axis_vector(t, probe.r0() / 5.0), hints);
      vt.push_back(v.value);
      confident = confident && (v.samples >= 2 || v.used_hint);
      residuals.push_back(v.residual);
    }
    residuals.push_back(ne.residual);
    AffineEstimate next = recover_affine(p, probe.r0(), v0.value, vt, ne.slope);
    double change = 0.0, size = 0.0;
    for (int t : tangents) {
      change = std::max(change, std::abs(next.beta[t] - hints.tangential_slope[t]));
      size = std::max(size, std::abs(next.beta[t]));
      hints.tangential_slope[t] = next.beta[t];
    }
    est = next;
    est.residuals = residuals;
    est.confident = confident;
    est.iterations = it;
    if (change <= 1e-10 * (1.0 + size)) break;
    if (it == 10) est.confident = false;
  }
  est.subdomain = probe.trace().mesh().partition().chain()[static_cast<std::size_t>(p.step)];
  return est;
}

double runge_bdry_bound(double delta, double E, double eps, const BoundConstants& c) {
  double tail = c.C * eps * E;
  double base = delta + E;
  if (base <= 0.0) return tail;
  double head = base * std::pow(delta / base, c.eta);
  if (head == 0.0) return tail;
  return c.C * std::exp(c.C * std::pow(eps, -c.mu)) * head + tail;
}

std::vector<AbsorptionLevel> absorption_schedule(int chain_length, const BoundConstants& c) {
  std::vector<AbsorptionLevel> out(static_cast<std::size_t>(std::max(chain_length - 1, 0)));
  double big = std::pow(2.0 * c.C, 1.0 / c.eta);
  for (int k = chain_length; k >= 2; --k) {
    AbsorptionLevel& level = out[static_cast<std::size_t>(k - 2)];
    level.C_k = big;
    level.eps = 1.0 / (2.0 * big * c.C);
    level.c_k = 2.0 * big * c.C * std::exp(c.C * std::pow(2.0 * big * c.C, c.mu));
    big = std::pow(2.0 * level.c_k, 1.0 / c.eta);
  }
  return out;
}

namespace {

/// Frontier of the transfer from Sigma_k onto U_k for q, with the widest bump on Sigma_{k+1} as target.
FrontierFit transfer_frontier(const RestrictionOperator& a, const DirichletSolver& next_solver,
                              const TraceSpace& next_trace, double r0, const std::vector<double>& eps,
                              std::vector<FrontierRow>* rows_out = nullptr) {
  Eigen::VectorXd g = probe_trace(next_trace, next_trace.portion().anchor, r0 / 8.0, ProbeShape::Bump);
  Eigen::VectorXd u = next_solver.solve_dirichlet(next_trace.embed(g)).solution;
  Eigen::VectorXd h = a.to_inner(u);
  std::vector<FrontierRow> rows = frontier_sweep(a, h, eps);
  if (rows_out != nullptr) *rows_out = rows;
  return fit_frontier(rows, a.l2_norm(h));
}

}  // namespace

Propagation propagate_dtn(const PeelingState& state, double eps, const BoundConstants& constants,
                          CorrectionSource correction, const RungeOptions& runge,
                          const std::vector<double>& frontier_eps) {
  if (state.mesh == nullptr || !state.source) fail(ErrorKind::MeshMissing, "propagation without a mesh or data");
  const Mesh& mesh = *state.mesh;
  const DomainPartition& part = mesh.partition();
  const int k = state.k;
  if (k < 1 || k >= part.chain_length()) fail(ErrorKind::IndexOutOfChain, "no portion after step " + std::to_string(k));
  Region uk = part.remaining(k);
  Region ukm1 = part.remaining(k - 1);
  Region peeled = Region::single(part.chain()[static_cast<std::size_t>(k - 1)]);
  const FlatPortion& control = part.portion(k - 1);
  const FlatPortion& next = part.portion(k);

  PropagatedPairing::Parts parts;
  parts.previous = state.source;
  parts.a1 = std::make_shared<RestrictionOperator>(mesh, uk, ukm1, control, state.q1, runge);
  parts.a2 = std::make_shared<RestrictionOperator>(mesh, uk, ukm1, control, state.q2, runge);
  auto s1 = std::make_shared<DirichletSolver>(mesh, uk, state.q1, runge.solver);
  auto s2 = std::make_shared<DirichletSolver>(mesh, uk, state.q2, runge.solver);
  s1->require_spectral();
  s2->require_spectral();
  parts.s1 = s1;
  parts.s2 = s2;
  parts.trace = std::make_shared<TraceSpace>(mesh, next);
  parts.corrected = peeled;
  parts.correction = correction == CorrectionSource::Exact ? (state.q1 - state.q2).restricted(peeled)
                                                           : state.recovered.restricted(peeled);
  parts.eps = eps;
  parts.difference_bound = sup_norm(state.q1 - state.q2, uk);

  Propagation out;
  out.constants = constants;
  if (!frontier_eps.empty()) {
    out.frontier = transfer_frontier(*parts.a2, *s2, *parts.trace, part.r0(), frontier_eps);
    if (out.frontier.valid) {
      out.constants.C = std::max(constants.C, out.frontier.constant());
      out.constants.mu = out.frontier.mu;
    }
  }
  out.a2 = parts.a2;
  out.s1 = s1;
  out.s2 = s2;
  out.source = std::make_shared<PropagatedPairing>(std::move(parts));
  out.bound = runge_bdry_bound(state.delta, state.E, eps, out.constants);
  return out;
}

namespace {

double direct_gap(const DirichletSolver& s1, const DirichletSolver& s2, const TraceSpace& trace) {
  DtnAssembly d1 = assemble_dtn(s1, trace);
  DtnAssembly d2 = assemble_dtn(s2, trace);
  return dtn_gap(d1.dtn, d2.dtn, trace);
}

double coarse_gap(const Mesh& mesh, Region region, int k, const PiecewiseAffinePotential& q1,
                  const PiecewiseAffinePotential& q2, const SolverOptions& opts) {
  try {
    Mesh coarse(mesh.partition_ptr(), 2.0 * mesh.spacing());
    TraceSpace trace(coarse, mesh.partition().portion(k));
    DirichletSolver s1(coarse, region, q1, opts);
    DirichletSolver s2(coarse, region, q2, opts);
    return direct_gap(s1, s2, trace);
  } catch (const Error&) {
    return kNaN;
  }
}

double probe_gap(const BoundaryProbe& probe) {
  double best = 0.0;
  for (const ProbeSample& s : probe.ladder(probe.portion().anchor)) {
    if (s.data_norm > 0.0) best = std::max(best, std::abs(s.pairing) / s.data_norm);
  }
  return best;
}

}  // namespace

HolderFit fit_holder_exponent(const Mesh& mesh, const PiecewiseAffinePotential& q1, const PiecewiseAffinePotential& q2,
                              const ProbeFamily& family, const std::vector<double>& scales,
                              const SolverOptions& solver) {
  const DomainPartition& part = mesh.partition();
  const int first = part.chain().front();
  const PiecewiseAffinePotential diff = q1 - q2;
  auto trace = std::make_shared<TraceSpace>(mesh, part.portion(0));
  auto s2 = std::make_shared<DirichletSolver>(mesh, part.all(), q2, solver);
  s2->require_spectral();
  const Eigen::MatrixXd l2 = assemble_dtn(*s2, *trace).dtn.values;
  std::vector<double> x, y;
  for (double t : scales) {
    const PiecewiseAffinePotential qt = q2 + diff * t;
    auto s1 = std::make_shared<DirichletSolver>(mesh, part.all(), qt, solver);
    s1->require_spectral();
    auto source = std::make_shared<MeasuredPairing>(trace, assemble_dtn(*s1, *trace).dtn.values, l2);
    const double delta = source->gap();
    BoundaryProbe probe(source, s1, s2, family, part.r0());
    PiecewiseAffinePotential miss(mesh.partition_ptr());
    AffinePiece truth = (diff * t).piece(first);
    AffinePiece est = recover_affine(probe).piece();
    miss.set_piece(first, AffinePiece{est.a - truth.a, est.A - truth.A});
    const double err = sup_norm(miss, Region::single(first));
    if (delta > 0.0 && err > 0.0) {
      x.push_back(std::log(delta));
      y.push_back(std::log(err));
    }
  }
  HolderFit fit;
  fit.points = static_cast<int>(x.size());
  if (fit.points < 3) return fit;
  LineFit line = fit_line(x, y);
  double my = 0.0, ss = 0.0;
  for (double v : y) my += v / static_cast<double>(y.size());
  for (double v : y) ss += (v - my) * (v - my);
  double res = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - line.intercept - line.slope * x[i];
    res += r * r;
  }
  fit.eta = line.slope;
  fit.r2 = ss > 0.0 ? 1.0 - res / ss : 1.0;
  fit.valid = line.slope > 0.0;
  return fit;
}

PeelReport peel(const PeelInputs& inputs, const PeelOptions& options) {
  if (inputs.mesh == nullptr) fail(ErrorKind::MeshMissing, "peel requires a mesh");
  const Mesh& mesh = *inputs.mesh;
  const DomainPartition& part = mesh.partition();
  const int K = part.chain_length();
  PeelReport report;
  report.estimate = PiecewiseAffinePotential(mesh.partition_ptr());
  const PiecewiseAffinePotential diff = inputs.q1 - inputs.q2;
  const double E = sup_norm(diff, part.all());
  const SolverOptions& sopts = options.runge.solver;

  auto trace = std::make_shared<TraceSpace>(mesh, part.portion(0));
  std::shared_ptr<const DirichletSolver> s1 = std::make_shared<DirichletSolver>(mesh, part.all(), inputs.q1, sopts);
  std::shared_ptr<const DirichletSolver> s2 = std::make_shared<DirichletSolver>(mesh, part.all(), inputs.q2, sopts);
  s1->require_spectral();
  s2->require_spectral();
  Eigen::MatrixXd l1 = inputs.measured1 ? *inputs.measured1 : assemble_dtn(*s1, *trace).dtn.values;
  Eigen::MatrixXd l2 = inputs.measured2 ? *inputs.measured2 : assemble_dtn(*s2, *trace).dtn.values;
  if (options.noise > 0.0) {
    std::mt19937_64 rng(options.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::MatrixXd* l : {&l1, &l2}) {
      for (Eigen::Index i = 0; i < l->rows(); ++i) {
        for (Eigen::Index j = i; j < l->cols(); ++j) {
          double f = 1.0 + options.noise * normal(rng);
          (*l)(i, j) *= f;
          (*l)(j, i) = (*l)(i, j);
        }
      }
    }
  }
  auto measured = std::make_shared<MeasuredPairing>(trace, l1, l2, options.noise);
  std::shared_ptr<const PairingSource> source = measured;

  PeelingState state;
  state.mesh = &mesh;
  state.q1 = inputs.q1;
  state.q2 = inputs.q2;
  state.E = E;
  state.recovered = PiecewiseAffinePotential(mesh.partition_ptr());
  BoundConstants constants;
  constants.eta = options.eta;
  if (!options.eta_scales.empty()) {
    report.holder = fit_holder_exponent(mesh, inputs.q1, inputs.q2, options.direct, options.eta_scales, sopts);
    if (report.holder.valid) constants.eta = std::min(report.holder.eta, 1.0);
  }
  std::vector<AbsorptionLevel> levels;
  double next_bound = kNaN;
  double next_eps = 0.0;

  try {
    for (int k = 1; k <= K; ++k) {
      PeelStep step;
      step.k = k;
      step.subdomain = part.chain()[static_cast<std::size_t>(k - 1)];
      step.truth = diff.piece(step.subdomain);
      step.E = E;
      step.eps = next_eps;
      step.bound = next_bound;
      const TraceSpace& tr = source->trace();
      BoundaryProbe probe(source, s1, s2, k == 1 ? options.direct : options.propagated, part.r0());
      step.estimate = recover_affine(probe);
      report.estimate.set_piece(step.subdomain, step.estimate.piece());
      state.recovered.set_piece(step.subdomain, step.estimate.piece());

      if (k == 1) {
        step.delta = measured->gap();
      } else {
        step.delta = options.direct_gaps ? direct_gap(*s1, *s2, tr) : kNaN;
      }
      step.delta_probe = probe_gap(probe);
      step.delta_budget = kNaN;
      if (options.discretization_budget && std::isfinite(step.delta) && !(k == 1 && inputs.measured1)) {
        double coarse = coarse_gap(mesh, part.remaining(k - 1), k - 1, inputs.q1, inputs.q2, sopts);
        if (std::isfinite(coarse)) step.delta_budget = std::abs(step.delta - coarse);
      }
      double delta = std::isfinite(step.delta) ? step.delta : step.delta_probe;
      step.branch = E < delta ? 'a' : 'b';
      if (k >= 2 && !levels.empty()) {
        step.C_k = levels[static_cast<std::size_t>(k - 2)].C_k;
        step.c_k = levels[static_cast<std::size_t>(k - 2)].c_k;
      }

      if (k < K) {
        if (k == 1) {
          // Boundary constant: smallest C with sup_{D_1}|q1 - q2| <= C (delta + E)(delta/(delta + E))^eta.
          double e_d = sup_norm(diff, Region::single(step.subdomain));
          double denom = delta + E > 0.0 ? (delta + E) * std::pow(delta / (delta + E), constants.eta) : 0.0;
          double c_b = denom > 0.0 ? e_d / denom : 1.0;
          auto a2 = std::make_shared<RestrictionOperator>(mesh, part.remaining(1), part.all(), part.portion(0),
                                                          inputs.q2, options.runge);
          DirichletSolver next2(mesh, part.remaining(1), inputs.q2, sopts);
          TraceSpace next_trace(mesh, part.portion(1));
          step.frontier = transfer_frontier(*a2, next2, next_trace, part.r0(), options.frontier_eps);
          constants.C = std::max({1.0, c_b, step.frontier.valid ? step.frontier.constant() : 1.0});
          constants.mu = step.frontier.valid ? step.frontier.mu : 1.0;
          levels = absorption_schedule(K, constants);
          for (int j = 0; j < K - 1; ++j) {
            double eps = options.eps_schedule.empty()
                             ? levels[static_cast<std::size_t>(j)].eps
                             : options.eps_schedule[std::min<std::size_t>(static_cast<std::size_t>(j),
                                                                          options.eps_schedule.size() - 1)];
            report.eps_schedule.push_back(eps);
          }
          report.constants = constants;
        }
        state.k = k;
        state.source = source;
        state.s1 = s1;
        state.s2 = s2;
        state.delta = delta;
        next_eps = report.eps_schedule[static_cast<std::size_t>(k - 1)];
        report.steps.push_back(step);
        Propagation prop = propagate_dtn(state, next_eps, constants, options.correction, options.runge, {});
        source = prop.source;
        s1 = prop.s1;
        s2 = prop.s2;
        next_bound = prop.bound;
      } else {
        report.steps.push_back(step);
      }
    }
    report.completed = true;
  } catch (const Error& e) {
    report.failure = e.what();
    report.failure_kind = e.kind();
  }
  return report;
}

void write_peel_csv(std::ostream& out, const PeelReport& report, int dimension) {
  static const char* axes[] = {"x", "y", "z"};
  out << "k,subdomain,eps,delta,delta_probe,delta_budget,E,branch,bound,C_k,c_k,alpha";
  for (int d = 0; d < dimension; ++d) out << ",beta_" << axes[d];
  out << ",true_alpha";
  for (int d = 0; d < dimension; ++d) out << ",true_beta_" << axes[d];
  out << ",confident\n";
  for (const PeelStep& s : report.steps) {
    out << s.k << ',' << s.subdomain + 1 << ',' << format_double(s.eps) << ',' << format_double(s.delta) << ','
        << format_double(s.delta_probe) << ',' << format_double(s.delta_budget) << ',' << format_double(s.E) << ','
        << (s.branch == 'a' ? "Ka" : "Kb") << ',' << format_double(s.bound) << ',' << format_double(s.C_k) << ','
        << format_double(s.c_k) << ',' << format_double(s.estimate.alpha);
    for (int d = 0; d < dimension; ++d) out << ',' << format_double(s.estimate.beta[d]);
    out << ',' << format_double(s.truth.a);
    for (int d = 0; d < dimension; ++d) out << ',' << format_double(s.truth.A[d]);
    out << ',' << (s.estimate.confident ? 1 : 0) << '\n';
  }
}

void write_peel_log(std::ostream& out, const PeelReport& report) {
  out << "constants: C=" << format_double(report.constants.C) << " mu=" << format_double(report.constants.mu)
      << " eta=" << format_double(report.constants.eta) << '\n';
  out << "holder fit: eta=" << format_double(report.holder.eta) << " r2=" << format_double(report.holder.r2)
      << " points=" << report.holder.points << (report.holder.valid ? "" : " (not used)") << '\n';
  out << "eps schedule:";
  for (double e : report.eps_schedule) out << ' ' << format_double(e);
  out << '\n';
  for (const PeelStep& s : report.steps) {
    out << "step " << s.k << " (subdomain " << s.subdomain + 1 << "): delta=" << format_double(s.delta)
        << " probe_delta=" << format_double(s.delta_probe) << " E=" << format_double(s.E) << " case K"
        << s.branch << '\n';
    if (s.k >= 2) {
      out << "  transfer eps=" << format_double(s.eps) << " chain bound=" << format_double(s.bound)
          << " budget=" << format_double(s.delta_budget) << '\n';
    }
    out << "  alpha=" << format_double(s.estimate.alpha) << " beta=(" << format_double(s.estimate.beta[0]) << ", "
        << format_double(s.estimate.beta[1]) << ", " << format_double(s.estimate.beta[2]) << ")"
        << " iterations=" << s.estimate.iterations << (s.estimate.confident ? "" : " low-confidence") << '\n';
  }
  out << (report.completed ? "completed" : "aborted: " + report.failure) << '\n';
}

PiecewiseAffinePotential sample_potential(const PartitionPtr& partition, std::mt19937_64& rng, double E0) {
  std::vector<AffinePiece> pieces(static_cast<std::size_t>(partition->subdomain_count()));
  if (E0 <= 0.0) return PiecewiseAffinePotential(partition, std::move(pieces));
  std::uniform_real_distribution<double> coef(-E0, E0);
  for (AffinePiece& p : pieces) {
    do {
      p.a = coef(rng);
      for (int d = 0; d < partition->dimension(); ++d) p.A[d] = coef(rng);
    } while (std::abs(p.a) + std::sqrt(dot(p.A, p.A)) > E0);
  }
  return PiecewiseAffinePotential(partition, std::move(pieces));
}

StabilityReport stability_experiment(const Mesh& mesh, const StabilityOptions& options) {
  const DomainPartition& part = mesh.partition();
  StabilityReport report;
  auto trace = std::make_shared<TraceSpace>(mesh, part.portion(0));
  std::mt19937_64 rng(options.seed);
  int candidate = 0;
  const int max_candidates = 20 * std::max(options.pairs, 1);

  struct Job {
    int candidate = 0;
    PiecewiseAffinePotential q1, q2;
    bool ok = false;
    double delta = 0.0;
    std::string why;
  };

  while (static_cast<int>(report.rows.size()) < options.pairs && candidate < max_candidates) {
    std::vector<Job> jobs;
    while (static_cast<int>(jobs.size() + report.rows.size()) < options.pairs && candidate < max_candidates) {
      Job j;
      j.candidate = candidate++;
      j.q1 = sample_potential(mesh.partition_ptr(), rng, options.E0);
      j.q2 = sample_potential(mesh.partition_ptr(), rng, options.E0);
      double e = sup_norm(j.q1 - j.q2, part.all());
      if (e == 0.0) {
        report.log.push_back("candidate " + std::to_string(j.candidate) + " rejected: identical potentials");
        ++report.rejected;
        continue;
      }
      jobs.push_back(std::move(j));
    }

    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
      for (std::size_t i = next++; i < jobs.size(); i = next++) {
        Job& j = jobs[i];
        try {
          for (int k = 0; k < part.chain_length(); ++k) {
            Region u = part.remaining(k);
            for (const PiecewiseAffinePotential* q : {&j.q1, &j.q2}) {
              if (k > 0 && !spectral_check(mesh, u, *q, options.solver).passed) {
                fail(ErrorKind::SpectralFailure, "spectral check failed on U_" + std::to_string(k));
              }
            }
          }
          DirichletSolver s1(mesh, part.all(), j.q1, options.solver);
          DirichletSolver s2(mesh, part.all(), j.q2, options.solver);
          DtnAssembly d1 = assemble_dtn(s1, *trace);
          DtnAssembly d2 = assemble_dtn(s2, *trace);
          j.delta = dtn_gap(d1.dtn, d2.dtn, *trace);
          j.ok = true;
        } catch (const Error& e) {
          j.why = e.what();
        }
      }
    };
    const int workers = std::max(1, std::min<int>(options.jobs, static_cast<int>(jobs.size())));
    std::vector<std::thread> pool;
    for (int w = 1; w < workers; ++w) pool.emplace_back(worker);
    worker();
    for (std::thread& t : pool) t.join();

    for (Job& j : jobs) {
      if (!j.ok) {
        report.log.push_back("candidate " + std::to_string(j.candidate) + " rejected: " + j.why);
        ++report.rejected;
        continue;
      }
      StabilityRow row;
      row.pair = static_cast<int>(report.rows.size()) + 1;
      row.E = sup_norm(j.q1 - j.q2, part.all());
      row.delta = j.delta;
      row.ratio = row.E / row.delta;
      report.max_ratio = std::max(report.max_ratio, row.ratio);
      report.rows.push_back(row);
    }
  }
  return report;
}

void write_stability_csv(std::ostream& out, const StabilityReport& report) {
  out << "pair,E,delta1,ratio\n";
  for (const StabilityRow& r : report.rows) {
    out << r.pair << ',' << format_double(r.E) << ',' << format_double(r.delta) << ',' << format_double(r.ratio)
        << '\n';
  }
}

}  // namespace lipstab
