#pragma once

#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lipstab/runge.hpp"

namespace lipstab {

enum class ProbeShape {
  Bump,      ///< cos^2 bump of half-width w
  ZeroMean,  ///< b_w - lambda b_{w/2} with zero discrete mean
};

struct ProbeFamily {
  ProbeShape shape = ProbeShape::ZeroMean;
  std::vector<double> width_factors{1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0};  ///< half-widths in units of r0
  std::vector<double> cross_offsets;  ///< pairs at P -+ t e_1, t in units of r0
  double cross_width = 1.0 / 8.0;
  /// A sample is kept when its error budget is below this fraction of max(|value|, budget_floor).
  double budget_tolerance = 0.1;
  double budget_floor = 1e-6;
};

/// Zero-mean ladder for data measured directly on the portion.
ProbeFamily direct_probe_family();
/// Positive bumps plus cross pairs for Runge-transferred data.
ProbeFamily propagated_probe_family();

/// Probe datum centered at `center`, normalized to unit L2 norm on the portion.
Eigen::VectorXd probe_trace(const TraceSpace& trace, const Point& center, double width, ProbeShape shape);

struct Pairing {
  double value = 0.0;
  double budget = 0.0;  ///< error bound on `value`
};

/// Source of <(Lambda_1 - Lambda_2) ga, gb> on one portion, ga driving q1 and gb driving q2.
class PairingSource {
 public:
  virtual ~PairingSource() = default;
  virtual const TraceSpace& trace() const = 0;
  virtual Pairing pair(const Eigen::VectorXd& ga, const Eigen::VectorXd& gb) const = 0;
};

/// Pairing read off measured DtN matrices.
class MeasuredPairing : public PairingSource {
 public:
  /// `relative_noise` widens the budget for perturbed data.
  MeasuredPairing(std::shared_ptr<const TraceSpace> trace, Eigen::MatrixXd l1, Eigen::MatrixXd l2,
                  double relative_noise = 0.0);

  const TraceSpace& trace() const override { return *trace_; }
  Pairing pair(const Eigen::VectorXd& ga, const Eigen::VectorXd& gb) const override;
  double gap() const { return gap_; }

 private:
  std::shared_ptr<const TraceSpace> trace_;
  Eigen::MatrixXd diff_;
  double gap_ = 0.0;
  double scale_ = 0.0;
  double noise_ = 0.0;
};

/// Pairing on the next portion, obtained by Runge transfer to the previous portion and the
/// correction of the already known subdomain.
class PropagatedPairing : public PairingSource {
 public:
  struct Parts {
    std::shared_ptr<const PairingSource> previous;
    std::shared_ptr<const RestrictionOperator> a1, a2;  ///< inner U_k, outer U_{k-1}, control Sigma_k
    std::shared_ptr<const DirichletSolver> s1, s2;      ///< on U_k
    std::shared_ptr<const TraceSpace> trace;            ///< Sigma_{k+1}
    PiecewiseAffinePotential correction;                ///< difference used on the corrected region
    Region corrected;                                   ///< D_{j_k}
    double eps = 0.01;
    double difference_bound = 0.0;  ///< sup |q1 - q2| over U_k, for the Runge budget
  };

  explicit PropagatedPairing(Parts parts);

  const TraceSpace& trace() const override { return *parts_.trace; }
  Pairing pair(const Eigen::VectorXd& ga, const Eigen::VectorXd& gb) const override;
  const Parts& parts() const { return parts_; }

 private:
  Parts parts_;
  Eigen::VectorXd correction_weights_;
  Eigen::VectorXd inner_weights_;
};

struct ProbeSample {
  Point center_a{0.0, 0.0, 0.0};
  Point center_b{0.0, 0.0, 0.0};
  double width = 0.0;
  double pairing = 0.0;
  double weight = 0.0;  ///< lumped integral of u1 u2 over the step region
  double value = 0.0;   ///< pairing / weight
  double budget = 0.0;  ///< error bound on value
  Point centroid{0.0, 0.0, 0.0};
  double depth = 0.0;  ///< centroid offset along the inward normal
  double data_norm = 0.0;  ///< product of the two data norms in H^{1/2}_{00}
  bool feasible = true;
};

/// Peaked data on one portion with solutions for both potentials on the step region.
class BoundaryProbe {
 public:
  BoundaryProbe(std::shared_ptr<const PairingSource> source, std::shared_ptr<const DirichletSolver> s1,
                std::shared_ptr<const DirichletSolver> s2, ProbeFamily family, double r0);

  const TraceSpace& trace() const { return source_->trace(); }
  const FlatPortion& portion() const { return source_->trace().portion(); }
  const ProbeFamily& family() const { return family_; }
  double r0() const { return r0_; }

  ProbeSample sample(const Point& center_a, const Point& center_b, double width) const;
  /// Feasible self-pair samples at `point`, one per width.
  std::vector<ProbeSample> ladder(const Point& point) const;
  /// Feasible cross-pair samples around the anchor.
  std::vector<ProbeSample> cross_samples() const;

 private:
  std::shared_ptr<const PairingSource> source_;
  std::shared_ptr<const DirichletSolver> s1_, s2_;
  ProbeFamily family_;
  double r0_;
  Eigen::VectorXd weights_;
  mutable std::mutex mutex_;
  mutable std::map<std::array<double, 7>, ProbeSample> cache_;
};

struct EstimateHints {
  Point tangential_slope{0.0, 0.0, 0.0};  ///< tangential part of beta, used to remove centroid drift
  std::optional<double> normal_slope;     ///< used when a single width survives
};

struct PointEstimate {
  double value = 0.0;
  double slope = 0.0;  ///< fitted normal slope of the ladder, 0 with fewer than two samples
  int samples = 0;
  bool used_hint = false;
  bool below_budget = false;  ///< no width cleared its budget but all are within budget of zero; value is 0
  double residual = 0.0;  ///< rms of the ladder fit
};

struct NormalEstimate {
  double slope = 0.0;
  double value_near = 0.0;  ///< fitted value at depth r0/16
  double value_far = 0.0;   ///< fitted value at depth r0/8
  int samples = 0;
  double residual = 0.0;
};

/// Extrapolated (q1 - q2)(point); throws ProbeOutsideWindow or ExtrapolationUnstable.
PointEstimate estimate_pointwise_difference(const BoundaryProbe& probe, const Point& point,
                                            const EstimateHints& hints = {});
NormalEstimate estimate_normal_derivative(const BoundaryProbe& probe, const EstimateHints& hints = {});

struct AffineEstimate {
  int subdomain = -1;
  double alpha = 0.0;
  Point beta{0.0, 0.0, 0.0};
  std::vector<double> residuals;  ///< fit rms per estimated quantity: anchor, tangential points, normal
  bool confident = true;
  int iterations = 0;

  AffinePiece piece() const { return {alpha, beta}; }
};

/// beta.e_j = (v_j - v_0) / (r0/5), beta.nu = normal derivative, alpha = v_0 - beta.P.
AffineEstimate recover_affine(const FlatPortion& portion, double r0, double anchor_value,
                              const std::vector<double>& tangential_values, double normal_derivative);
/// Full estimator with a fixed-point correction for tangential centroid drift. When the normal
/// derivative has fewer than two feasible probes, its slope is taken as zero and `confident` is cleared.
AffineEstimate recover_affine(const BoundaryProbe& probe);

/// Right side of the chain estimate: C e^{C eps^-mu} (delta + E) (delta / (delta + E))^eta + C eps E.
struct BoundConstants {
  double C = 1.0;
  double mu = 1.0;
  double eta = 0.5;
};
double runge_bdry_bound(double delta, double E, double eps, const BoundConstants& c);

struct AbsorptionLevel {
  double eps = 0.0;
  double C_k = 0.0;
  double c_k = 0.0;
};

/// Absorption rule for K steps: eps_k = 1/(2 C_k C), c_k = 2 C_k C e^{C (2 C_k C)^mu},
/// C_K = (2C)^{1/eta}, C_{k-1} = (2 c_k)^{1/eta}. Entry k-2 belongs to the transfer onto Sigma_k, k = 2..K.
std::vector<AbsorptionLevel> absorption_schedule(int chain_length, const BoundConstants& c);

/// Hoelder exponent fitted as the log-log slope of the boundary-recovery error against delta_1.
struct HolderFit {
  double eta = 0.0;
  double r2 = 0.0;
  int points = 0;
  bool valid = false;  ///< at least three usable members and a positive slope
};

/// Exact data on Sigma_1 for the family q2 + t (q1 - q2); the error is sup_{D_1} of the recovered piece minus truth.
HolderFit fit_holder_exponent(const Mesh& mesh, const PiecewiseAffinePotential& q1, const PiecewiseAffinePotential& q2,
                              const ProbeFamily& family, const std::vector<double>& scales,
                              const SolverOptions& solver = {});

enum class CorrectionSource { Exact, Recovered };

struct PeelingState {
  const Mesh* mesh = nullptr;
  PiecewiseAffinePotential q1, q2;
  int k = 1;  ///< the portion Sigma_k whose data `source` carries
  std::shared_ptr<const PairingSource> source;
  std::shared_ptr<const DirichletSolver> s1, s2;  ///< on U_{k-1}
  PiecewiseAffinePotential recovered;             ///< estimate of q1 - q2 on W_k
  double delta = 0.0;
  double E = 0.0;
};

struct Propagation {
  std::shared_ptr<const PairingSource> source;  ///< data on Sigma_{k+1}
  std::shared_ptr<const DirichletSolver> s1, s2;  ///< on U_k
  std::shared_ptr<const RestrictionOperator> a2;
  double bound = 0.0;  ///< right side of the chain estimate for delta_{k+1}
  FrontierFit frontier;
  BoundConstants constants;
};

Propagation propagate_dtn(const PeelingState& state, double eps, const BoundConstants& constants,
                          CorrectionSource correction = CorrectionSource::Exact, const RungeOptions& runge = {},
                          const std::vector<double>& frontier_eps = {0.3, 0.1, 0.03, 0.01});

struct PeelOptions {
  std::vector<double> eps_schedule;  ///< per transfer; empty selects the absorption rule
  CorrectionSource correction = CorrectionSource::Exact;
  ProbeFamily direct = direct_probe_family();
  ProbeFamily propagated = propagated_probe_family();
  std::vector<double> eta_scales{1.0, 0.5, 0.25, 0.125};  ///< family for the fitted eta; empty skips the fit
  double eta = 0.5;  ///< used when the fit is skipped or invalid; a fitted slope above 1 is capped at 1
  std::vector<double> frontier_eps{0.3, 0.1, 0.03, 0.01};
  bool direct_gaps = true;  ///< assemble delta_k on U_{k-1} from both potentials
  bool discretization_budget = true;
  double noise = 0.0;
  std::uint64_t seed = 1;
  RungeOptions runge;
};

struct PeelStep {
  int k = 0;
  int subdomain = -1;
  double eps = 0.0;  ///< Runge tolerance of the transfer onto this portion, 0 for k = 1
  double delta = 0.0;  ///< measured gap for k = 1, direct assembly otherwise (NaN when skipped)
  double delta_probe = 0.0;  ///< largest normalized probe pairing
  double delta_budget = 0.0;  ///< |delta(h) - delta(2h)|, NaN when unavailable
  double E = 0.0;
  char branch = 'b';
  double bound = 0.0;  ///< chain-estimate bound on delta for k >= 2, NaN for k = 1
  double C_k = 0.0;
  double c_k = 0.0;
  AffineEstimate estimate;
  AffinePiece truth;
  FrontierFit frontier;
};

struct PeelReport {
  std::vector<PeelStep> steps;
  PiecewiseAffinePotential estimate;  ///< recovered q1 - q2 on the peeled subdomains
  bool completed = false;
  std::string failure;
  std::optional<ErrorKind> failure_kind;
  BoundConstants constants;
  HolderFit holder;
  std::vector<double> eps_schedule;
};

struct PeelInputs {
  const Mesh* mesh = nullptr;
  PiecewiseAffinePotential q1, q2;
  /// DtN matrices on Sigma_1 over the whole domain; assembled from q1, q2 when absent.
  std::optional<Eigen::MatrixXd> measured1, measured2;
};

PeelReport peel(const PeelInputs& inputs, const PeelOptions& options = {});

void write_peel_csv(std::ostream& out, const PeelReport& report, int dimension);
void write_peel_log(std::ostream& out, const PeelReport& report);

struct StabilityOptions {
  int pairs = 50;
  std::uint64_t seed = 1;
  double E0 = 5.0;
  int jobs = 1;
  SolverOptions solver;
};

struct StabilityRow {
  int pair = 0;
  double E = 0.0;
  double delta = 0.0;
  double ratio = 0.0;
};

struct StabilityReport {
  std::vector<StabilityRow> rows;
  int rejected = 0;
  double max_ratio = 0.0;
  std::vector<std::string> log;
};

/// Uniform sample of {q : triple_norm(q) <= E0}, by per-piece rejection from the coefficient box [-E0, E0].
PiecewiseAffinePotential sample_potential(const PartitionPtr& partition, std::mt19937_64& rng, double E0);

StabilityReport stability_experiment(const Mesh& mesh, const StabilityOptions& options);
void write_stability_csv(std::ostream& out, const StabilityReport& report);

}  // namespace lipstab
