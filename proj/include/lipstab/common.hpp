#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace lipstab {

inline constexpr int kMaxDimension = 3;
inline constexpr std::string_view kVersion = "0.3.0";

/// Points carry three components; components beyond the active dimension stay zero.
using Point = std::array<double, kMaxDimension>;

enum class ErrorKind {
  ParseError,
  InvalidConfig,
  OverlappingSubdomains,
  BrokenChain,
  PortionNotOnInterface,
  PortionTooSmall,
  IncompatibleSpacing,
  IndexOutOfChain,
  PointOutsideDomain,
  EmptyRegion,
  SingularOperator,
  SpectralFailure,
  NoConvergence,
  MeshMissing,
  PortionNotOnBoundary,
  PortionTooCoarse,
  DimensionMismatch,
  ConditionRViolated,
  TargetUnreachable,
  NotASolution,
  ProbeOutsideWindow,
  ExtrapolationUnstable,
  IoError,
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& message);

/// 64-bit FNV-1a, used for scenario and potential fingerprints in file headers.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a_doubles(const double* values, std::size_t count,
                            std::uint64_t seed = 0xcbf29ce484222325ULL);

std::string hex64(std::uint64_t value);

/// Shortest round-trippable decimal rendering ("%.17g").
std::string format_double(double value);

inline double dot(const Point& a, const Point& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

inline Point operator+(const Point& a, const Point& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Point operator-(const Point& a, const Point& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Point operator*(double s, const Point& a) { return {s * a[0], s * a[1], s * a[2]}; }

Point axis_vector(int axis, double sign = 1.0);

}  // namespace lipstab
