#include "lipstab/report.hpp"

#include <ostream>

namespace lipstab {

HeaderFields report_header(const Scenario& scenario, const std::string& command, double h) {
  const RungeOptions& t = scenario.tolerances;
  return {
      {"tool", "lipstab"},
      {"version", std::string(kVersion)},
      {"command", command},
      {"scenario_hash", hex64(scenario.hash)},
      {"mesh_h", format_double(h)},
      {"residual_tol", format_double(t.solver.residual_tol)},
      {"spectral_tau", format_double(t.solver.spectral_tau)},
      {"power_tol", format_double(t.solver.power_tol)},
      {"max_power_iterations", std::to_string(t.solver.max_power_iterations)},
      {"sigma_floor", format_double(t.sigma_floor)},
      {"solution_tol", format_double(t.solution_tol)},
  };
}

void write_header(std::ostream& out, const HeaderFields& fields) {
  for (const auto& [k, v] : fields) out << "# " << k << '=' << v << '\n';
}

void write_solution_csv(std::ostream& out, const Mesh& mesh, const Eigen::VectorXd& u) {
  static const char* axes[] = {"x", "y", "z"};
  for (int d = 0; d < mesh.dimension(); ++d) out << axes[d] << ',';
  out << "u\n";
  for (int i = 0; i < mesh.node_count(); ++i) {
    const Point& x = mesh.node(i);
    for (int d = 0; d < mesh.dimension(); ++d) out << format_double(x[d]) << ',';
    out << format_double(u[i]) << '\n';
  }
}

}  // namespace lipstab
