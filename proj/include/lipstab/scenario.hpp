#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "lipstab/recover.hpp"

namespace lipstab {

enum class ForwardDatum { Sine, Affine, Bump };
enum class RungeTarget { Bump, Affine };

struct ForwardSpec {
  ForwardDatum datum = ForwardDatum::Sine;
  std::vector<double> coeffs;  ///< c0 c1 .. cn for g = c0 + c . x
  int portion = 1;             ///< 1-based portion carrying sine and bump data
};

struct RungeSpec {
  int step = 1;  ///< transfer from Sigma_step onto U_step inside U_{step-1}
  std::vector<double> eps{0.3, 0.1, 0.03, 0.01};
  RungeTarget target = RungeTarget::Bump;
};

struct PeelSpec {
  std::vector<double> eps;  ///< empty selects the absorption rule
  CorrectionSource correction = CorrectionSource::Exact;
  std::string measured1, measured2;  ///< DtN CSV paths, resolved against the scenario directory
  double noise = 0.0;
  std::optional<std::uint64_t> seed;
};

struct StabilitySpec {
  bool present = false;
  int pairs = 50;
  std::optional<std::uint64_t> seed;
  double E0 = 5.0;
};

struct Scenario {
  std::string origin;  ///< file path or a label
  std::uint64_t hash = 0;  ///< over the canonical text: comments and blank lines dropped, whitespace trimmed
  PartitionConfig config;
  PartitionPtr partition;
  double h = 1.0 / 32.0;
  bool has_potential = false;
  PiecewiseAffinePotential q1;  ///< [potential.j], zero where absent
  PiecewiseAffinePotential q2;  ///< [reference.j], zero where absent
  RungeOptions tolerances;
  ForwardSpec forward;
  RungeSpec runge;
  PeelSpec peel;
  StabilitySpec stability;
};

/// Parses the scenario text; syntax errors are ParseError with the line number, geometry errors keep their kind.
Scenario parse_scenario(std::istream& in, const std::string& origin = "<input>");
/// Throws IoError when the file cannot be opened.
Scenario load_scenario(const std::string& path);

/// Parses "0.25" or "1/64".
double parse_number(const std::string& text);

}  // namespace lipstab
