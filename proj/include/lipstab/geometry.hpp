#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lipstab/common.hpp"

namespace lipstab {

struct Box {
  Point lo{0.0, 0.0, 0.0};
  Point hi{0.0, 0.0, 0.0};
};

/// A set of subdomains, stored as a bitmask over subdomain indices (at most 64).
class Region {
 public:
  Region() = default;
  explicit Region(std::uint64_t mask) : mask_(mask) {}

  static Region single(int subdomain) { return Region(std::uint64_t{1} << subdomain); }
  static Region first(int count) {
    return Region(count >= 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << count) - 1);
  }

  bool contains(int subdomain) const { return subdomain >= 0 && ((mask_ >> subdomain) & 1U) != 0; }
  bool empty() const { return mask_ == 0; }
  int count() const { return __builtin_popcountll(mask_); }
  std::uint64_t mask() const { return mask_; }

  Region operator|(Region other) const { return Region(mask_ | other.mask_); }
  Region operator&(Region other) const { return Region(mask_ & other.mask_); }
  Region without(Region other) const { return Region(mask_ & ~other.mask_); }
  bool operator==(const Region&) const = default;

  /// Subdomain indices in ascending order.
  std::vector<int> members() const;

 private:
  std::uint64_t mask_ = 0;
};

struct PortionSpec {
  Point anchor{0.0, 0.0, 0.0};
  int axis = 0;  ///< normal axis, 0-based
  double extent = 0.0;
};

struct PartitionConfig {
  int dimension = 2;
  std::vector<Box> boxes;       ///< one box per subdomain
  std::vector<int> chain;       ///< 0-based subdomain indices, D_{j_1}, ..., D_{j_K}
  std::vector<PortionSpec> portions;  ///< one per chain entry
  std::optional<double> r0;
  double lipschitz = 1.0;
};

/// Flat piece {anchor + sum t_j e_j : |t_j| < extent} of an axis hyperplane.
struct FlatPortion {
  int step = 0;  ///< position k in the chain, 0-based
  int dimension = 2;
  Point anchor{0.0, 0.0, 0.0};
  int normal_axis = 0;
  int normal_sign = 1;  ///< the normal points into D_{j_k}
  double extent = 0.0;

  Point normal() const { return axis_vector(normal_axis, normal_sign); }
  std::vector<int> tangent_axes() const;
  /// Tangential offsets are compared against `extent` with tolerance `tol`.
  bool contains(const Point& x, bool closed, double tol) const;
};

class DomainPartition {
 public:
  int dimension() const { return dimension_; }
  int subdomain_count() const { return static_cast<int>(boxes_.size()); }
  const std::vector<Box>& subdomains() const { return boxes_; }
  const Box& subdomain(int j) const { return boxes_.at(static_cast<std::size_t>(j)); }
  const std::vector<int>& chain() const { return chain_; }
  int chain_length() const { return static_cast<int>(chain_.size()); }
  const std::vector<FlatPortion>& portions() const { return portions_; }
  const FlatPortion& portion(int k) const;
  double r0() const { return r0_; }
  double lipschitz() const { return lipschitz_; }
  /// B with |Omega| = B r0^n.
  double volume_bound() const;

  Region all() const { return Region::first(subdomain_count()); }
  /// W_k: union of the first k chain subdomains.
  Region peeled(int k) const;
  /// U_k: the complement of W_k, with U_0 the whole domain.
  Region remaining(int k) const;

  /// Subdomain containing x; on shared faces the lower chain rank wins. Returns -1 outside.
  int locate(const Point& x) const;
  /// Chain position of a subdomain; subdomains outside the chain rank after it by index.
  int chain_rank(int subdomain) const;

  double volume() const;
  Box bounding_box(Region region) const;
  double diameter(Region region) const;
  bool connected(Region region) const;
  /// True when the closed portion meets the closure of some subdomain of `region`.
  bool portion_touches(const FlatPortion& portion, Region region) const;
  /// True when the portion separates `region` (on the normal side) from its exterior.
  bool portion_on_boundary(const FlatPortion& portion, Region region) const;

  /// Canonical text form; equal configs give equal strings.
  std::string describe() const;

 private:
  friend DomainPartition build_partition(const PartitionConfig& config);

  int dimension_ = 2;
  std::vector<Box> boxes_;
  std::vector<int> chain_;
  std::vector<FlatPortion> portions_;
  double r0_ = 0.0;
  double lipschitz_ = 1.0;
};

using PartitionPtr = std::shared_ptr<const DomainPartition>;

DomainPartition build_partition(const PartitionConfig& config);

enum class NodeClass { Interior, Interface, Boundary };

struct RegionNodes {
  std::vector<int> all;       ///< nodes touching a cell of the region
  std::vector<int> interior;  ///< nodes whose surrounding cells all lie in the region
  std::vector<int> boundary;  ///< the rest of `all`
};

/// Structured grid of spacing h over the bounding box; only nodes touching a cell of the domain exist.
class Mesh {
 public:
  Mesh(PartitionPtr partition, double h);

  const DomainPartition& partition() const { return *partition_; }
  const PartitionPtr& partition_ptr() const { return partition_; }
  int dimension() const { return dim_; }
  double spacing() const { return h_; }
  /// Per-corner share of a cell's volume, h^n / 2^n.
  double corner_weight() const;
  int corner_count() const { return 1 << dim_; }

  int node_count() const { return static_cast<int>(points_.size()); }
  const Point& node(int id) const { return points_[static_cast<std::size_t>(id)]; }
  NodeClass node_class(int id) const { return classes_[static_cast<std::size_t>(id)]; }
  /// Bitmask of subdomains whose cells touch the node.
  std::uint64_t node_subdomains(int id) const { return touching_[static_cast<std::size_t>(id)]; }
  /// Node id at integer grid coordinates, or -1.
  int node_at(const std::array<int, 3>& ijk) const;
  /// Node id at a point snapped to the grid, or -1.
  int node_near(const Point& x) const;
  const std::array<int, 3>& node_ijk(int id) const { return ijk_[static_cast<std::size_t>(id)]; }
  /// Owner of the bounding-grid cell with the given lower-corner indices, -1 outside the domain.
  int cell_owner(const std::array<int, 3>& c) const { return cell_owner_at(c); }

  struct Cell {
    int owner = -1;
    std::array<int, 8> corners{};
  };
  const std::vector<Cell>& cells() const { return cells_; }

  RegionNodes region_nodes(Region region) const;
  /// Nodes on the portion's hyperplane, open (|t| < extent) or closed.
  std::vector<int> portion_nodes(const FlatPortion& portion, bool open) const;
  /// Nodes per subdomain, in subdomain order.
  std::vector<int> subdomain_node_counts() const;

 private:
  PartitionPtr partition_;
  int dim_ = 2;
  double h_ = 0.0;
  Point origin_{0.0, 0.0, 0.0};
  std::array<int, 3> cells_per_axis_{1, 1, 1};
  std::vector<int> grid_to_node_;
  std::vector<Point> points_;
  std::vector<std::array<int, 3>> ijk_;
  std::vector<NodeClass> classes_;
  std::vector<std::uint64_t> touching_;
  std::vector<Cell> cells_;  ///< only cells inside the domain
  std::vector<int> cell_grid_owner_;  ///< owner per bounding-grid cell, -1 outside

  int cell_owner_at(const std::array<int, 3>& c) const;
};

struct TruncatedRegions {
  Region peeled;     ///< W_k
  Region remaining;  ///< U_k
  RegionNodes peeled_nodes;
  RegionNodes remaining_nodes;
};

TruncatedRegions truncated_regions(const Mesh& mesh, int k);

}  // namespace lipstab
