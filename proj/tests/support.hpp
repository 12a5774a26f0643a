#pragma once

#include <cmath>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "lipstab/recover.hpp"

namespace lipstab::testing {

inline PartitionPtr make_partition(const PartitionConfig& cfg) {
  return std::make_shared<const DomainPartition>(build_partition(cfg));
}

inline Box box2(double x0, double y0, double x1, double y1) { return Box{{x0, y0, 0.0}, {x1, y1, 0.0}}; }

inline PortionSpec portion2(double x, double y, int axis, double extent) {
  return PortionSpec{{x, y, 0.0}, axis, extent};
}

/// [0,1]^2 with the whole bottom edge as the accessible portion.
inline PartitionConfig unit_square_config() {
  PartitionConfig c;
  c.dimension = 2;
  c.boxes = {box2(0, 0, 1, 1)};
  c.chain = {0};
  c.portions = {portion2(0.5, 0, 1, 0.5)};
  return c;
}

/// D_1 = [0,1]^2, D_2 = [0,1] x [1,2], Sigma_1 on y = 0, Sigma_2 on y = 1.
inline PartitionConfig stacked_squares_config() {
  PartitionConfig c;
  c.dimension = 2;
  c.boxes = {box2(0, 0, 1, 1), box2(0, 1, 1, 2)};
  c.chain = {0, 1};
  c.portions = {portion2(0.5, 0, 1, 0.5), portion2(0.5, 1, 1, 0.5)};
  return c;
}

/// D_1 = [0,1] x [0,0.5], D_2 = [0,1] x [0.5,1.5], Sigma_1 on y = 0, Sigma_2 on y = 0.5.
inline PartitionConfig two_layer_config() {
  PartitionConfig c;
  c.dimension = 2;
  c.boxes = {box2(0, 0, 1, 0.5), box2(0, 0.5, 1, 1.5)};
  c.chain = {0, 1};
  c.portions = {portion2(0.5, 0, 1, 0.5), portion2(0.5, 0.5, 1, 0.5)};
  return c;
}

/// Unit cube with the bottom face as the accessible portion.
inline PartitionConfig unit_cube_config() {
  PartitionConfig c;
  c.dimension = 3;
  c.boxes = {Box{{0, 0, 0}, {1, 1, 1}}};
  c.chain = {0};
  c.portions = {PortionSpec{{0.5, 0.5, 0.0}, 2, 0.5}};
  return c;
}

inline AffinePiece piece(double a, double ax, double ay, double az = 0.0) { return AffinePiece{a, {ax, ay, az}}; }

inline PiecewiseAffinePotential constant_potential(const PartitionPtr& p, double c) {
  return PiecewiseAffinePotential(p, std::vector<AffinePiece>(static_cast<std::size_t>(p->subdomain_count()),
                                                               piece(c, 0, 0)));
}

inline Eigen::VectorXd random_vector(std::mt19937_64& rng, Eigen::Index n) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = normal(rng);
  return v;
}

/// Global nodal vector with f evaluated at every node.
template <class F>
Eigen::VectorXd nodal(const Mesh& mesh, F f) {
  Eigen::VectorXd v(mesh.node_count());
  for (int i = 0; i < mesh.node_count(); ++i) v[i] = f(mesh.node(i));
  return v;
}

/// Least-squares slope and coefficient of determination of y against x.
struct Regression {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

inline Regression regress(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i] / n;
    my += y[i] / n;
  }
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  Regression r;
  r.slope = sxy / sxx;
  r.intercept = my - r.slope * mx;
  r.r2 = syy > 0 ? sxy * sxy / (sxx * syy) : 1.0;
  return r;
}

}  // namespace lipstab::testing
