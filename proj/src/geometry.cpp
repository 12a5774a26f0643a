#include "lipstab/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace lipstab {

namespace {

double scale_of(const std::vector<Box>& boxes, int dim) {
  double s = 1.0;
  for (const Box& b : boxes) {
    for (int a = 0; a < dim; ++a) s = std::max({s, std::abs(b.lo[a]), std::abs(b.hi[a])});
  }
  return s;
}

bool interiors_overlap(const Box& a, const Box& b, int dim, double tol) {
  for (int d = 0; d < dim; ++d) {
    if (a.hi[d] <= b.lo[d] + tol || b.hi[d] <= a.lo[d] + tol) return false;
  }
  return true;
}

bool closed_contains(const Box& outer, const Box& inner, int dim, double tol) {
  for (int d = 0; d < dim; ++d) {
    if (inner.lo[d] < outer.lo[d] - tol || inner.hi[d] > outer.hi[d] + tol) return false;
  }
  return true;
}

bool share_face(const Box& a, const Box& b, int dim, double tol) {
  for (int d = 0; d < dim; ++d) {
    bool touching = std::abs(a.hi[d] - b.lo[d]) <= tol || std::abs(b.hi[d] - a.lo[d]) <= tol;
    if (!touching) continue;
    bool overlap = true;
    for (int e = 0; e < dim; ++e) {
      if (e == d) continue;
      if (std::min(a.hi[e], b.hi[e]) - std::max(a.lo[e], b.lo[e]) <= tol) overlap = false;
    }
    if (overlap) return true;
  }
  return false;
}

/// Thin slab on one side of the portion, `depth` thick.
Box half_slab(const FlatPortion& p, int side, double depth) {
  Box b;
  for (int t : p.tangent_axes()) {
    b.lo[t] = p.anchor[t] - p.extent;
    b.hi[t] = p.anchor[t] + p.extent;
  }
  int a = p.normal_axis;
  if (side > 0) {
    b.lo[a] = p.anchor[a];
    b.hi[a] = p.anchor[a] + depth;
  } else {
    b.lo[a] = p.anchor[a] - depth;
    b.hi[a] = p.anchor[a];
  }
  return b;
}

bool is_multiple(double value, double h) {
  double r = value / h;
  return std::abs(r - std::round(r)) <= 1e-9 * std::max(1.0, std::abs(r));
}

}  // namespace

std::vector<int> Region::members() const {
  std::vector<int> out;
  for (int j = 0; j < 64; ++j) {
    if (contains(j)) out.push_back(j);
  }
  return out;
}

std::vector<int> FlatPortion::tangent_axes() const {
  std::vector<int> axes;
  for (int a = 0; a < dimension; ++a) {
    if (a != normal_axis) axes.push_back(a);
  }
  return axes;
}

bool FlatPortion::contains(const Point& x, bool closed, double tol) const {
  if (std::abs(x[normal_axis] - anchor[normal_axis]) > tol) return false;
  for (int t : tangent_axes()) {
    double off = std::abs(x[t] - anchor[t]);
    if (closed ? off > extent + tol : off >= extent - tol) return false;
  }
  return true;
}

const FlatPortion& DomainPartition::portion(int k) const {
  if (k < 0 || k >= chain_length()) fail(ErrorKind::IndexOutOfChain, "portion index " + std::to_string(k));
  return portions_[static_cast<std::size_t>(k)];
}

double DomainPartition::volume_bound() const { return volume() / std::pow(r0_, dimension_); }

Region DomainPartition::peeled(int k) const {
  if (k < 0 || k > chain_length()) fail(ErrorKind::IndexOutOfChain, "chain index " + std::to_string(k));
  Region w;
  for (int i = 0; i < k; ++i) w = w | Region::single(chain_[static_cast<std::size_t>(i)]);
  return w;
}

Region DomainPartition::remaining(int k) const { return all().without(peeled(k)); }

int DomainPartition::chain_rank(int subdomain) const {
  auto it = std::find(chain_.begin(), chain_.end(), subdomain);
  if (it != chain_.end()) return static_cast<int>(it - chain_.begin());
  return chain_length() + subdomain;
}

int DomainPartition::locate(const Point& x) const {
  double tol = 1e-12 * scale_of(boxes_, dimension_);
  int best = -1;
  for (int j = 0; j < subdomain_count(); ++j) {
    const Box& b = boxes_[static_cast<std::size_t>(j)];
    bool inside = true;
    for (int d = 0; d < dimension_; ++d) {
      if (x[d] < b.lo[d] - tol || x[d] > b.hi[d] + tol) inside = false;
    }
    if (inside && (best < 0 || chain_rank(j) < chain_rank(best))) best = j;
  }
  return best;
}

double DomainPartition::volume() const {
  double v = 0.0;
  for (const Box& b : boxes_) {
    double bv = 1.0;
    for (int d = 0; d < dimension_; ++d) bv *= b.hi[d] - b.lo[d];
    v += bv;
  }
  return v;
}

Box DomainPartition::bounding_box(Region region) const {
  if (region.empty()) fail(ErrorKind::EmptyRegion, "bounding box of an empty region");
  Box out;
  bool first = true;
  for (int j : region.members()) {
    const Box& b = subdomain(j);
    for (int d = 0; d < dimension_; ++d) {
      out.lo[d] = first ? b.lo[d] : std::min(out.lo[d], b.lo[d]);
      out.hi[d] = first ? b.hi[d] : std::max(out.hi[d], b.hi[d]);
    }
    first = false;
  }
  return out;
}

double DomainPartition::diameter(Region region) const {
  Box b = bounding_box(region);
  double s = 0.0;
  for (int d = 0; d < dimension_; ++d) s += (b.hi[d] - b.lo[d]) * (b.hi[d] - b.lo[d]);
  return std::sqrt(s);
}

bool DomainPartition::connected(Region region) const {
  std::vector<int> members = region.members();
  if (members.empty()) return true;
  double tol = 1e-12 * scale_of(boxes_, dimension_);
  std::vector<int> seen{members.front()};
  std::vector<int> stack{members.front()};
  while (!stack.empty()) {
    int a = stack.back();
    stack.pop_back();
    for (int b : members) {
      if (std::find(seen.begin(), seen.end(), b) != seen.end()) continue;
      if (share_face(subdomain(a), subdomain(b), dimension_, tol)) {
        seen.push_back(b);
        stack.push_back(b);
      }
    }
  }
  return seen.size() == members.size();
}

bool DomainPartition::portion_touches(const FlatPortion& p, Region region) const {
  double tol = 1e-12 * scale_of(boxes_, dimension_);
  for (int j : region.members()) {
    const Box& b = subdomain(j);
    int a = p.normal_axis;
    if (p.anchor[a] < b.lo[a] - tol || p.anchor[a] > b.hi[a] + tol) continue;
    bool meets = true;
    for (int t : p.tangent_axes()) {
      if (b.lo[t] > p.anchor[t] + p.extent + tol || b.hi[t] < p.anchor[t] - p.extent - tol) meets = false;
    }
    if (meets) return true;
  }
  return false;
}

bool DomainPartition::portion_on_boundary(const FlatPortion& p, Region region) const {
  double scale = scale_of(boxes_, dimension_);
  double tol = 1e-12 * scale;
  double depth = 1e-6 * scale;
  Box inside = half_slab(p, p.normal_sign, depth);
  Box outside = half_slab(p, -p.normal_sign, depth);
  bool found = false;
  for (int j : region.members()) {
    if (closed_contains(subdomain(j), inside, dimension_, tol)) found = true;
    if (interiors_overlap(subdomain(j), outside, dimension_, tol)) return false;
  }
  return found;
}

std::string DomainPartition::describe() const {
  std::ostringstream os;
  os << "dimension " << dimension_ << "\n";
  for (const Box& b : boxes_) {
    os << "box";
    for (int d = 0; d < dimension_; ++d) os << ' ' << format_double(b.lo[d]);
    for (int d = 0; d < dimension_; ++d) os << ' ' << format_double(b.hi[d]);
    os << "\n";
  }
  os << "chain";
  for (int j : chain_) os << ' ' << j;
  os << "\n";
  for (const FlatPortion& p : portions_) {
    os << "portion " << p.step << " axis " << p.normal_axis << " sign " << p.normal_sign << " extent "
       << format_double(p.extent) << " anchor";
    for (int d = 0; d < dimension_; ++d) os << ' ' << format_double(p.anchor[d]);
    os << "\n";
  }
  os << "r0 " << format_double(r0_) << " L " << format_double(lipschitz_) << "\n";
  return os.str();
}

DomainPartition build_partition(const PartitionConfig& config) {
  const int dim = config.dimension;
  if (dim != 2 && dim != 3) fail(ErrorKind::InvalidConfig, "dimension must be 2 or 3");
  const int n = static_cast<int>(config.boxes.size());
  if (n == 0) fail(ErrorKind::InvalidConfig, "no subdomains");
  if (n > 64) fail(ErrorKind::InvalidConfig, "at most 64 subdomains are supported");

  DomainPartition part;
  part.dimension_ = dim;
  part.lipschitz_ = config.lipschitz;
  for (Box b : config.boxes) {
    for (int d = dim; d < kMaxDimension; ++d) b.lo[d] = b.hi[d] = 0.0;
    for (int d = 0; d < dim; ++d) {
      if (!(b.hi[d] > b.lo[d])) fail(ErrorKind::InvalidConfig, "box with non-positive extent");
    }
    part.boxes_.push_back(b);
  }
  double scale = scale_of(part.boxes_, dim);
  double tol = 1e-12 * scale;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (interiors_overlap(part.boxes_[static_cast<std::size_t>(i)], part.boxes_[static_cast<std::size_t>(j)], dim,
                            tol)) {
        fail(ErrorKind::OverlappingSubdomains,
             "subdomains " + std::to_string(i + 1) + " and " + std::to_string(j + 1) + " overlap");
      }
    }
  }

  if (config.chain.empty()) fail(ErrorKind::InvalidConfig, "empty chain");
  for (int j : config.chain) {
    if (j < 0 || j >= n) fail(ErrorKind::InvalidConfig, "chain references unknown subdomain " + std::to_string(j + 1));
    if (std::count(config.chain.begin(), config.chain.end(), j) > 1) {
      fail(ErrorKind::InvalidConfig, "chain repeats subdomain " + std::to_string(j + 1));
    }
  }
  part.chain_ = config.chain;
  if (config.portions.size() != config.chain.size()) {
    fail(ErrorKind::InvalidConfig, "need exactly one portion per chain entry");
  }

  double min_extent = config.portions.front().extent;
  for (const PortionSpec& s : config.portions) {
    if (!(s.extent > 0.0)) fail(ErrorKind::InvalidConfig, "portion extent must be positive");
    if (s.axis < 0 || s.axis >= dim) fail(ErrorKind::InvalidConfig, "portion axis out of range");
    min_extent = std::min(min_extent, s.extent);
  }
  part.r0_ = config.r0.value_or(3.0 * min_extent);
  if (!(part.r0_ > 0.0)) fail(ErrorKind::InvalidConfig, "r0 must be positive");
  for (std::size_t k = 0; k < config.portions.size(); ++k) {
    if (config.portions[k].extent < part.r0_ / 3.0 - tol) {
      fail(ErrorKind::PortionTooSmall, "portion " + std::to_string(k + 1) + " has extent " +
                                           format_double(config.portions[k].extent) + " < r0/3");
    }
  }

  const int K = static_cast<int>(part.chain_.size());
  for (int l = 0; l <= K; ++l) {
    if (!part.connected(part.peeled(l)) || !part.connected(part.remaining(l))) {
      fail(ErrorKind::BrokenChain, "W_" + std::to_string(l) + " or U_" + std::to_string(l) + " is disconnected");
    }
  }

  double depth = 1e-6 * scale;
  for (int k = 0; k < K; ++k) {
    const PortionSpec& s = config.portions[static_cast<std::size_t>(k)];
    FlatPortion p;
    p.step = k;
    p.dimension = dim;
    p.anchor = s.anchor;
    for (int d = dim; d < kMaxDimension; ++d) p.anchor[d] = 0.0;
    p.normal_axis = s.axis;
    p.extent = s.extent;
    const Box& upper_box = part.boxes_[static_cast<std::size_t>(part.chain_[static_cast<std::size_t>(k)])];
    bool placed = false;
    for (int sign : {1, -1}) {
      p.normal_sign = sign;
      Box upper = half_slab(p, sign, depth);
      Box lower = half_slab(p, -sign, depth);
      if (!closed_contains(upper_box, upper, dim, tol)) continue;
      bool lower_ok = true;
      if (k == 0) {
        for (const Box& b : part.boxes_) {
          if (interiors_overlap(b, lower, dim, tol)) lower_ok = false;
        }
      } else {
        const Box& prev = part.boxes_[static_cast<std::size_t>(part.chain_[static_cast<std::size_t>(k - 1)])];
        lower_ok = closed_contains(prev, lower, dim, tol);
      }
      if (lower_ok) {
        placed = true;
        break;
      }
    }
    if (!placed) {
      fail(ErrorKind::PortionNotOnInterface,
           "portion " + std::to_string(k + 1) + " does not lie on the interface of its chain subdomains");
    }
    // Sigma_k must stay away from the boundary of U_k.
    FlatPortion open_part = p;
    open_part.extent = p.extent - 2.0 * tol;
    if (part.portion_touches(open_part, part.remaining(k + 1))) {
      fail(ErrorKind::PortionNotOnInterface,
           "portion " + std::to_string(k + 1) + " touches the boundary of U_" + std::to_string(k + 1));
    }
    part.portions_.push_back(p);
  }
  return part;
}

Mesh::Mesh(PartitionPtr partition, double h) : partition_(std::move(partition)), h_(h) {
  if (!partition_) fail(ErrorKind::MeshMissing, "mesh requires a partition");
  const DomainPartition& part = *partition_;
  dim_ = part.dimension();
  if (!(h > 0.0)) fail(ErrorKind::IncompatibleSpacing, "h must be positive");
  for (const Box& b : part.subdomains()) {
    for (int d = 0; d < dim_; ++d) {
      if (!is_multiple(b.lo[d], h) || !is_multiple(b.hi[d], h)) {
        fail(ErrorKind::IncompatibleSpacing, "h=" + format_double(h) + " does not divide box coordinates");
      }
    }
  }
  for (const FlatPortion& p : part.portions()) {
    bool ok = is_multiple(p.extent, h);
    for (int d = 0; d < dim_; ++d) ok = ok && is_multiple(p.anchor[d], h);
    if (!ok) fail(ErrorKind::IncompatibleSpacing, "h=" + format_double(h) + " does not resolve a flat portion");
  }

  Box bb = part.bounding_box(part.all());
  origin_ = bb.lo;
  for (int d = 0; d < dim_; ++d) {
    cells_per_axis_[static_cast<std::size_t>(d)] = static_cast<int>(std::lround((bb.hi[d] - bb.lo[d]) / h));
  }
  const auto& nc = cells_per_axis_;
  const std::size_t total_cells = static_cast<std::size_t>(nc[0]) * nc[1] * nc[2];
  cell_grid_owner_.assign(total_cells, -1);
  for (int k = 0; k < nc[2]; ++k) {
    for (int j = 0; j < nc[1]; ++j) {
      for (int i = 0; i < nc[0]; ++i) {
        std::array<int, 3> c{i, j, k};
        Point center{0.0, 0.0, 0.0};
        for (int d = 0; d < dim_; ++d) center[d] = origin_[d] + (c[static_cast<std::size_t>(d)] + 0.5) * h;
        cell_grid_owner_[static_cast<std::size_t>(i + nc[0] * (j + nc[1] * k))] = part.locate(center);
      }
    }
  }

  std::array<int, 3> nn{nc[0] + 1, dim_ >= 2 ? nc[1] + 1 : 1, dim_ >= 3 ? nc[2] + 1 : 1};
  grid_to_node_.assign(static_cast<std::size_t>(nn[0]) * nn[1] * nn[2], -1);
  const int corners = 1 << dim_;
  for (int k = 0; k < nn[2]; ++k) {
    for (int j = 0; j < nn[1]; ++j) {
      for (int i = 0; i < nn[0]; ++i) {
        std::array<int, 3> v{i, j, k};
        std::uint64_t mask = 0;
        bool outside = false;
        for (int b = 0; b < corners; ++b) {
          std::array<int, 3> c = v;
          for (int d = 0; d < dim_; ++d) c[static_cast<std::size_t>(d)] -= (b >> d) & 1;
          int owner = cell_owner_at(c);
          if (owner < 0) {
            outside = true;
          } else {
            mask |= std::uint64_t{1} << owner;
          }
        }
        if (mask == 0) continue;
        grid_to_node_[static_cast<std::size_t>(i + nn[0] * (j + nn[1] * k))] = static_cast<int>(points_.size());
        Point x{0.0, 0.0, 0.0};
        for (int d = 0; d < dim_; ++d) x[d] = origin_[d] + v[static_cast<std::size_t>(d)] * h;
        points_.push_back(x);
        ijk_.push_back(v);
        touching_.push_back(mask);
        if (outside) {
          classes_.push_back(NodeClass::Boundary);
        } else if (__builtin_popcountll(mask) > 1) {
          classes_.push_back(NodeClass::Interface);
        } else {
          classes_.push_back(NodeClass::Interior);
        }
      }
    }
  }

  for (int k = 0; k < nc[2]; ++k) {
    for (int j = 0; j < nc[1]; ++j) {
      for (int i = 0; i < nc[0]; ++i) {
        std::array<int, 3> c{i, j, k};
        int owner = cell_owner_at(c);
        if (owner < 0) continue;
        Cell cell;
        cell.owner = owner;
        for (int b = 0; b < corners; ++b) {
          std::array<int, 3> v = c;
          for (int d = 0; d < dim_; ++d) v[static_cast<std::size_t>(d)] += (b >> d) & 1;
          cell.corners[static_cast<std::size_t>(b)] = node_at(v);
        }
        cells_.push_back(cell);
      }
    }
  }
}

int Mesh::cell_owner_at(const std::array<int, 3>& c) const {
  for (int d = 0; d < 3; ++d) {
    if (c[static_cast<std::size_t>(d)] < 0 || c[static_cast<std::size_t>(d)] >= cells_per_axis_[static_cast<std::size_t>(d)]) {
      return -1;
    }
  }
  const auto& nc = cells_per_axis_;
  return cell_grid_owner_[static_cast<std::size_t>(c[0] + nc[0] * (c[1] + nc[1] * c[2]))];
}

double Mesh::corner_weight() const { return std::pow(h_ / 2.0, dim_); }

int Mesh::node_at(const std::array<int, 3>& v) const {
  std::array<int, 3> nn{cells_per_axis_[0] + 1, dim_ >= 2 ? cells_per_axis_[1] + 1 : 1,
                        dim_ >= 3 ? cells_per_axis_[2] + 1 : 1};
  for (int d = 0; d < 3; ++d) {
    if (v[static_cast<std::size_t>(d)] < 0 || v[static_cast<std::size_t>(d)] >= nn[static_cast<std::size_t>(d)]) {
      return -1;
    }
  }
  return grid_to_node_[static_cast<std::size_t>(v[0] + nn[0] * (v[1] + nn[1] * v[2]))];
}

int Mesh::node_near(const Point& x) const {
  std::array<int, 3> v{0, 0, 0};
  for (int d = 0; d < dim_; ++d) {
    double r = (x[d] - origin_[d]) / h_;
    v[static_cast<std::size_t>(d)] = static_cast<int>(std::lround(r));
    if (std::abs(r - v[static_cast<std::size_t>(d)]) > 1e-6) return -1;
  }
  return node_at(v);
}

RegionNodes Mesh::region_nodes(Region region) const {
  RegionNodes out;
  const int corners = 1 << dim_;
  for (int id = 0; id < node_count(); ++id) {
    const auto& v = ijk_[static_cast<std::size_t>(id)];
    int inside = 0;
    for (int b = 0; b < corners; ++b) {
      std::array<int, 3> c = v;
      for (int d = 0; d < dim_; ++d) c[static_cast<std::size_t>(d)] -= (b >> d) & 1;
      if (region.contains(cell_owner_at(c))) ++inside;
    }
    if (inside == 0) continue;
    out.all.push_back(id);
    (inside == corners ? out.interior : out.boundary).push_back(id);
  }
  return out;
}

std::vector<int> Mesh::portion_nodes(const FlatPortion& portion, bool open) const {
  std::vector<int> out;
  double tol = 1e-6 * h_;
  for (int id = 0; id < node_count(); ++id) {
    if (portion.contains(node(id), !open, tol)) out.push_back(id);
  }
  return out;
}

std::vector<int> Mesh::subdomain_node_counts() const {
  std::vector<int> counts(static_cast<std::size_t>(partition_->subdomain_count()), 0);
  for (std::uint64_t mask : touching_) {
    for (std::size_t j = 0; j < counts.size(); ++j) {
      if ((mask >> j) & 1U) ++counts[j];
    }
  }
  return counts;
}

TruncatedRegions truncated_regions(const Mesh& mesh, int k) {
  const DomainPartition& part = mesh.partition();
  if (k < 0 || k > part.chain_length()) {
    fail(ErrorKind::IndexOutOfChain, "k=" + std::to_string(k) + " outside 0.." + std::to_string(part.chain_length()));
  }
  TruncatedRegions out;
  out.peeled = part.peeled(k);
  out.remaining = part.remaining(k);
  out.peeled_nodes = mesh.region_nodes(out.peeled);
  out.remaining_nodes = mesh.region_nodes(out.remaining);
  return out;
}

}  // namespace lipstab
