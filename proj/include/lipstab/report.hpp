#pragma once

#include <iosfwd>
#include <string>

#include "lipstab/dtn.hpp"
#include "lipstab/scenario.hpp"

namespace lipstab {

/// Provenance fields written at the top of every emitted file: tool version, command,
/// scenario hash, mesh spacing and every tolerance in force.
HeaderFields report_header(const Scenario& scenario, const std::string& command, double h);

/// Writes the fields as "# key=value" lines.
void write_header(std::ostream& out, const HeaderFields& fields);

/// Writes (x, y[, z], u) rows for a global nodal vector.
void write_solution_csv(std::ostream& out, const Mesh& mesh, const Eigen::VectorXd& u);

}  // namespace lipstab
