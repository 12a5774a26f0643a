#include <doctest.h>

#include <algorithm>

#include "support.hpp"

using namespace lipstab;
using namespace lipstab::testing;

namespace {

bool contains(const std::vector<int>& v, int x) { return std::find(v.begin(), v.end(), x) != v.end(); }

/// L-shaped chain [0,1]^2 -> [1,2]x[0,1] -> [1,2]x[1,2].
PartitionConfig l_shape_config(double third_extent) {
  PartitionConfig c;
  c.dimension = 2;
  c.boxes = {box2(0, 0, 1, 1), box2(1, 0, 2, 1), box2(1, 1, 2, 2)};
  c.chain = {0, 1, 2};
  c.portions = {portion2(0.5, 0, 1, 0.5), portion2(1, 0.5, 0, 0.5), portion2(1.5, 1, 1, third_extent)};
  c.r0 = 1.5;
  return c;
}

}  // namespace

TEST_SUITE("geometry") {
  TEST_CASE("stacked squares form a valid chain of length two") {
    auto p = make_partition(stacked_squares_config());
    CHECK(p->chain_length() == 2);
    CHECK(p->subdomain_count() == 2);
    CHECK(p->r0() == doctest::Approx(1.5));
    CHECK(p->portion(0).normal_sign == 1);
    CHECK(p->portion(1).normal_sign == 1);
    CHECK(p->portion(1).normal_axis == 1);
    CHECK(p->volume() <= p->volume_bound() * std::pow(p->r0(), 2) * (1 + 1e-12));
  }

  TEST_CASE("portion on the outer boundary is not on an interface") {
    PartitionConfig c = stacked_squares_config();
    c.portions[1] = portion2(0, 1.5, 0, 0.5);
    CHECK_THROWS_WITH_AS(build_partition(c), doctest::Contains("PortionNotOnInterface"), Error);
  }

  TEST_CASE("portion of extent r0/4 is too small") {
    CHECK_NOTHROW(build_partition(l_shape_config(0.5)));
    try {
      build_partition(l_shape_config(0.375));
      FAIL("expected PortionTooSmall");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::PortionTooSmall);
    }
  }

  TEST_CASE("overlapping boxes are rejected") {
    PartitionConfig c = stacked_squares_config();
    c.boxes[1] = box2(0, 0.5, 1, 2);
    try {
      build_partition(c);
      FAIL("expected OverlappingSubdomains");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::OverlappingSubdomains);
    }
  }

  TEST_CASE("a chain that disconnects the remainder is broken") {
    PartitionConfig c;
    c.dimension = 2;
    c.boxes = {box2(0, 0, 1, 1), box2(1, 0, 2, 1), box2(2, 0, 3, 1)};
    c.chain = {1, 0, 2};
    c.portions = {portion2(1.5, 0, 1, 0.5), portion2(1, 0.5, 0, 0.5), portion2(2, 0.5, 0, 0.5)};
    try {
      build_partition(c);
      FAIL("expected BrokenChain");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::BrokenChain);
    }
  }

  TEST_CASE("r0 is inferred from the smallest extent") {
    PartitionConfig c = stacked_squares_config();
    c.portions[1].extent = 0.25;
    auto p = make_partition(c);
    CHECK(p->r0() == doctest::Approx(0.75));
  }

  TEST_CASE("unit square at h = 0.25 has 25 nodes, 9 interior") {
    auto p = make_partition(unit_square_config());
    Mesh mesh(p, 0.25);
    CHECK(mesh.node_count() == 25);
    int interior = 0;
    for (int i = 0; i < mesh.node_count(); ++i) interior += mesh.node_class(i) == NodeClass::Interior;
    CHECK(interior == 9);
    RegionNodes rn = mesh.region_nodes(p->all());
    CHECK(rn.interior.size() == 9);
    CHECK(rn.boundary.size() == 16);
  }

  TEST_CASE("stacked squares at h = 0.5 tag the shared face") {
    auto p = make_partition(stacked_squares_config());
    Mesh mesh(p, 0.5);
    int mid = mesh.node_near({0.5, 1.0, 0.0});
    REQUIRE(mid >= 0);
    CHECK(mesh.node_class(mid) == NodeClass::Interface);
    CHECK(mesh.node_subdomains(mid) == 3u);
    for (double x : {0.0, 1.0}) {
      int id = mesh.node_near({x, 1.0, 0.0});
      CHECK(mesh.node_subdomains(id) == 3u);
      CHECK(mesh.node_class(id) == NodeClass::Boundary);
    }
    CHECK(mesh.subdomain_node_counts() == std::vector<int>{9, 9});
  }

  TEST_CASE("incompatible spacing") {
    auto p = make_partition(unit_square_config());
    try {
      Mesh mesh(p, 0.3);
      FAIL("expected IncompatibleSpacing");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::IncompatibleSpacing);
    }
  }

  TEST_CASE("truncated regions follow the chain") {
    auto p = make_partition(stacked_squares_config());
    Mesh mesh(p, 0.25);
    TruncatedRegions t0 = truncated_regions(mesh, 0);
    CHECK(t0.peeled.empty());
    CHECK(t0.remaining == p->all());
    TruncatedRegions t1 = truncated_regions(mesh, 1);
    CHECK(t1.remaining == Region::single(1));
    CHECK(t1.peeled == Region::single(0));
    for (int id : mesh.portion_nodes(p->portion(1), false)) CHECK(contains(t1.remaining_nodes.boundary, id));
    TruncatedRegions t2 = truncated_regions(mesh, 2);
    CHECK(t2.remaining.empty());
    CHECK(t2.remaining_nodes.all.empty());
    CHECK_THROWS_AS(truncated_regions(mesh, 3), Error);
    CHECK_THROWS_AS(truncated_regions(mesh, -1), Error);
  }

  TEST_CASE("next portion stays off the boundary of the previous remainder") {
    for (const PartitionConfig& c : {stacked_squares_config(), two_layer_config(), l_shape_config(0.5)}) {
      auto p = make_partition(c);
      Mesh mesh(p, 0.125);
      for (int k = 1; k < p->chain_length(); ++k) {
        RegionNodes prev = mesh.region_nodes(p->remaining(k - 1));
        for (int id : mesh.portion_nodes(p->portion(k), true)) CHECK_FALSE(contains(prev.boundary, id));
      }
    }
  }

  TEST_CASE("refinement keeps the classification of coarse nodes") {
    for (const PartitionConfig& c : {stacked_squares_config(), l_shape_config(0.5)}) {
      auto p = make_partition(c);
      Mesh coarse(p, 0.25), fine(p, 0.125);
      for (int i = 0; i < coarse.node_count(); ++i) {
        int j = fine.node_near(coarse.node(i));
        REQUIRE(j >= 0);
        CHECK(fine.node_class(j) == coarse.node_class(i));
        CHECK(fine.node_subdomains(j) == coarse.node_subdomains(i));
      }
    }
  }

  TEST_CASE("build_partition is deterministic") {
    auto a = make_partition(l_shape_config(0.5));
    auto b = make_partition(l_shape_config(0.5));
    CHECK(a->describe() == b->describe());
    CHECK(a->describe() != make_partition(stacked_squares_config())->describe());
  }

  TEST_CASE("locate prefers the lower chain rank on shared faces") {
    PartitionConfig c = stacked_squares_config();
    auto p = make_partition(c);
    CHECK(p->locate({0.5, 1.0, 0.0}) == 0);
    CHECK(p->locate({0.5, 1.5, 0.0}) == 1);
    CHECK(p->locate({0.5, 2.5, 0.0}) == -1);
    c.boxes = {box2(0, 1, 1, 2), box2(0, 0, 1, 1)};
    c.chain = {1, 0};
    auto q = make_partition(c);
    CHECK(q->locate({0.5, 1.0, 0.0}) == 1);
  }

  TEST_CASE("three dimensional cube") {
    auto p = make_partition(unit_cube_config());
    Mesh mesh(p, 0.25);
    CHECK(mesh.node_count() == 125);
    CHECK(mesh.region_nodes(p->all()).interior.size() == 27);
    CHECK(mesh.portion_nodes(p->portion(0), true).size() == 9);
    CHECK(mesh.portion_nodes(p->portion(0), false).size() == 25);
  }
}
