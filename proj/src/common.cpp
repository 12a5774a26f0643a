#include "lipstab/common.hpp"

#include <cstdio>
#include <cstring>

namespace lipstab {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::OverlappingSubdomains: return "OverlappingSubdomains";
    case ErrorKind::BrokenChain: return "BrokenChain";
    case ErrorKind::PortionNotOnInterface: return "PortionNotOnInterface";
    case ErrorKind::PortionTooSmall: return "PortionTooSmall";
    case ErrorKind::IncompatibleSpacing: return "IncompatibleSpacing";
    case ErrorKind::IndexOutOfChain: return "IndexOutOfChain";
    case ErrorKind::PointOutsideDomain: return "PointOutsideDomain";
    case ErrorKind::EmptyRegion: return "EmptyRegion";
    case ErrorKind::SingularOperator: return "SingularOperator";
    case ErrorKind::SpectralFailure: return "SpectralFailure";
    case ErrorKind::NoConvergence: return "NoConvergence";
    case ErrorKind::MeshMissing: return "MeshMissing";
    case ErrorKind::PortionNotOnBoundary: return "PortionNotOnBoundary";
    case ErrorKind::PortionTooCoarse: return "PortionTooCoarse";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::ConditionRViolated: return "ConditionRViolated";
    case ErrorKind::TargetUnreachable: return "TargetUnreachable";
    case ErrorKind::NotASolution: return "NotASolution";
    case ErrorKind::ProbeOutsideWindow: return "ProbeOutsideWindow";
    case ErrorKind::ExtrapolationUnstable: return "ExtrapolationUnstable";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t hash = seed;
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

std::uint64_t fnv1a_doubles(const double* values, std::size_t count, std::uint64_t seed) {
  std::uint64_t hash = seed;
  for (std::size_t i = 0; i < count; ++i) {
    // +0.0 and -0.0 hash alike
    double v = values[i] == 0.0 ? 0.0 : values[i];
    char raw[sizeof(double)];
    std::memcpy(raw, &v, sizeof(double));
    hash = fnv1a(std::string_view(raw, sizeof(double)), hash);
  }
  return hash;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

std::string format_double(double value) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

Point axis_vector(int axis, double sign) {
  Point p{0.0, 0.0, 0.0};
  p[static_cast<std::size_t>(axis)] = sign;
  return p;
}

}  // namespace lipstab
