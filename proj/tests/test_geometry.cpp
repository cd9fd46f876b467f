#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "qrvie/geometry.hpp"

using namespace qrvie;
using Catch::Approx;
using Catch::Matchers::ContainsSubstring;

namespace {

// independent enumeration of the voxelized ball: n = floor(2R/h), lattice
// centered on the origin, keep cells whose center lies strictly inside
std::vector<Idx3> brute_sphere_cells(double radius, double voxel) {
  const int n = static_cast<int>(std::floor(2.0 * radius / voxel));
  const Vec3 origin = -0.5 * n * voxel * Vec3::Ones();
  std::vector<Idx3> cells;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) {
        const Vec3 c = origin + voxel * Vec3(i + 0.5, j + 0.5, k + 0.5);
        if (c.norm() < radius) cells.push_back(Idx3{i, j, k});
      }
  return cells;
}

std::set<Idx3> as_set(const std::vector<Idx3>& v) {
  return std::set<Idx3>(v.begin(), v.end());
}

}  // namespace

TEST_CASE("voxel sphere matches brute-force cell enumeration") {
  struct Probe {
    double radius, voxel;
  };
  for (const Probe p : {Probe{1.0, 0.3}, Probe{1.0, 0.45}, Probe{1e-7, 0.9e-7},
                        Probe{2.5, 0.8}}) {
    const Mesh m = build_voxel_sphere(p.radius, p.voxel);
    const auto expect = brute_sphere_cells(p.radius, p.voxel);
    REQUIRE(as_set(m.cells) == as_set(expect));
    REQUIRE(m.voxel == p.voxel);
  }
}

TEST_CASE("sphere two cells across has the full 2x2x2 complex") {
  // radius 100 nm, voxel 90 nm: all eight centers lie 45*sqrt(3) nm < R
  const Mesh m = build_voxel_sphere(100e-9, 90e-9);
  REQUIRE(m.n_cells() == 8);
  REQUIRE(m.n_faces() == 36);
  REQUIRE(m.n_edges() == 54);
  REQUIRE(m.n_vertices == 27);
  REQUIRE(m.n_interior_faces == 12);
  REQUIRE(m.n_boundary_faces() == 24);
  REQUIRE(m.n_boundary_components == 1);
  REQUIRE(m.euler_characteristic() == 1);  // solid ball
}

TEST_CASE("oversized voxel degenerates, just-fitting voxel gives one cell") {
  REQUIRE_THROWS_WITH(build_voxel_sphere(1.0, 2.1),
                      ContainsSubstring("degenerate mesh"));
  const Mesh m = build_voxel_sphere(1.0, 1.9);
  REQUIRE(m.n_cells() == 1);
  REQUIRE(m.n_faces() == 6);
  REQUIRE(m.n_interior_faces == 0);
  REQUIRE(m.n_boundary_components == 1);
  REQUIRE(m.n_vertices == 8);
  REQUIRE(m.n_edges() == 12);
  for (int f = 0; f < 6; ++f) REQUIRE(m.is_boundary_face(f));
  // the single cell is centered on the origin
  REQUIRE(m.cell_center(0).norm() == Approx(0.0).margin(1e-15));
}

TEST_CASE("mesh construction rejects malformed input") {
  REQUIRE_THROWS_WITH(build_voxel_mesh({}, 1.0),
                      ContainsSubstring("degenerate mesh"));
  REQUIRE_THROWS_WITH(build_voxel_mesh({Idx3{0, 0, 0}}, -1.0),
                      ContainsSubstring("voxel size must be positive"));
  REQUIRE_THROWS_WITH(build_voxel_mesh({Idx3{0, 0, 0}, Idx3{0, 0, 0}}, 1.0),
                      ContainsSubstring("duplicate cell"));
  REQUIRE_THROWS_WITH(build_voxel_mesh({Idx3{0, 0, 0}, Idx3{2, 0, 0}}, 1.0),
                      ContainsSubstring("disconnected"));
  REQUIRE_THROWS_WITH(build_voxel_box(0, 1, 1, 1.0),
                      ContainsSubstring("degenerate mesh"));
}

TEST_CASE("face and cell adjacency tables are mutually consistent") {
  for (const Mesh& m :
       {build_voxel_sphere(1.0, 0.45), build_voxel_box(3, 2, 4, 0.5)}) {
    for (int c = 0; c < m.n_cells(); ++c) {
      for (int a = 0; a < 3; ++a) {
        const int f0 = m.cell_faces[c][a][0];
        const int f1 = m.cell_faces[c][a][1];
        REQUIRE(m.faces[f0].axis == a);
        REQUIRE(m.faces[f1].axis == a);
        // minus-side face of the cell carries the cell's own lattice index
        REQUIRE(m.faces[f0].lattice == m.cells[c]);
        REQUIRE(m.faces[f0].plus_cell == c);
        REQUIRE(m.faces[f1].lattice == idx3_add(m.cells[c], unit_idx3(a)));
        REQUIRE(m.faces[f1].minus_cell == c);
        REQUIRE(m.cell_sign(c, f1) == 1);
        REQUIRE(m.cell_sign(c, f0) == -1);
      }
    }
    for (int f = 0; f < m.n_faces(); ++f) {
      if (m.is_boundary_face(f)) {
        REQUIRE(m.faces[f].component == 0);  // single shell
        REQUIRE(m.outward_sign(f) == (m.faces[f].minus_cell >= 0 ? 1 : -1));
      } else {
        REQUIRE(m.faces[f].component == -1);
        REQUIRE_THROWS_WITH(m.outward_sign(f),
                            ContainsSubstring("interior face"));
      }
    }
    REQUIRE(m.euler_characteristic() == 1);
    REQUIRE(m.n_boundary_components == 1);
  }
}

TEST_CASE("geometric point helpers agree with lattice arithmetic") {
  const Mesh m = build_voxel_box(2, 2, 2, 0.5);
  for (int c = 0; c < m.n_cells(); ++c) {
    const Vec3 lc = m.cell_corner(c);
    REQUIRE((m.cell_center(c) - lc - 0.25 * Vec3::Ones()).norm() ==
            Approx(0.0).margin(1e-15));
  }
  for (int f = 0; f < m.n_faces(); ++f) {
    const auto& fc = m.faces[f];
    Vec3 expect = m.origin;
    for (int a = 0; a < 3; ++a)
      expect[a] += 0.5 * (fc.lattice[a] + (a == fc.axis ? 0.0 : 0.5));
    REQUIRE((m.face_center(f) - expect).norm() == Approx(0.0).margin(1e-15));
  }
  for (int e = 0; e < m.n_edges(); ++e) {
    const auto& ed = m.edges[e];
    Vec3 expect = m.origin;
    for (int a = 0; a < 3; ++a)
      expect[a] += 0.5 * (ed.vertex[a] + (a == ed.axis ? 0.5 : 0.0));
    REQUIRE((m.edge_midpoint(e) - expect).norm() == Approx(0.0).margin(1e-15));
  }
}

TEST_CASE("sunflower layout has documented radius and spacing") {
  const double R = 100e-9;
  const Layout small = vogel_spiral(100, R);
  REQUIRE(static_cast<int>(small.centers.size()) == 100);
  // outermost atom sits at scale * sqrt(N) with scale = R*sqrt(3)
  REQUIRE(layout_radius(small) ==
          Approx(std::sqrt(3.0) * R * 10.0).epsilon(1e-12));
  const Layout big = vogel_spiral(2000, R);
  REQUIRE(layout_radius(big) ==
          Approx(std::sqrt(3.0) * R * std::sqrt(2000.0)).epsilon(1e-12));
  // spacing never collapses below one diameter anywhere in the spiral
  REQUIRE(min_center_distance(big) > 2.0 * R);
  // the first two atoms are a known distance apart
  const Layout two = vogel_spiral(2, R);
  const double d01 = (two.centers[0] - two.centers[1]).norm();
  REQUIRE(d01 / R == Approx(3.9063).epsilon(1e-3));
  REQUIRE(min_center_distance(two) == Approx(d01));
  REQUIRE_THROWS_WITH(vogel_spiral(0, R),
                      ContainsSubstring("at least one atom"));
  REQUIRE_THROWS_WITH(vogel_spiral(3, 0.0),
                      ContainsSubstring("atom radius must be positive"));
}

TEST_CASE("grid coordinate assigns boundary points to the lower block") {
  REQUIRE(block_coordinate(1.0, 0.0, 0.5, 4) == 1);   // exact boundary
  REQUIRE(block_coordinate(0.99, 0.0, 0.5, 4) == 1);  // interior
  REQUIRE(block_coordinate(1.01, 0.0, 0.5, 4) == 2);
  REQUIRE(block_coordinate(0.0, 0.0, 0.5, 4) == 0);    // lowest edge
  REQUIRE(block_coordinate(2.0, 0.0, 0.5, 4) == 3);    // highest edge
  REQUIRE(block_coordinate(-5.0, 0.0, 0.5, 4) == 0);   // clamped
  REQUIRE(block_coordinate(50.0, 0.0, 0.5, 4) == 3);   // clamped
}

TEST_CASE("regular 3x3 lattice partitions into one block per atom") {
  Layout lay;
  for (int j = 0; j < 3; ++j)
    for (int i = 0; i < 3; ++i) lay.centers.push_back(Vec3(i, j, 0.0));
  BlockTree tree = build_block_tree(lay, 3);
  REQUIRE(tree.levels.size() == 1);
  REQUIRE(tree.levels[0].blocks.size() == 9);
  for (const auto& b : tree.levels[0].blocks)
    REQUIRE(b.atoms.size() == 1);
  classify_interactions(tree);
  // 9 self pairs + 20 touching neighbour pairs; the rest are far
  REQUIRE(tree.near_pairs[0].size() == 29);
  REQUIRE(tree.far_pairs[0].size() == 16);
  REQUIRE(tree.finest_pairs.size() == 40);  // 20 unordered pairs, both ways
  // the corner block neighbours itself and exactly three blocks
  const int corner = tree.levels[0].index.at({0, 0});
  int touching = 0;
  for (const auto& [a, b] : tree.near_pairs[0])
    if (a == corner || b == corner) ++touching;
  REQUIRE(touching == 4);
}

TEST_CASE("single atom produces one block and no far interactions") {
  Layout lay;
  lay.centers.push_back(Vec3(0.3, -0.2, 0.0));
  BlockTree tree = build_block_tree(lay, 4);
  classify_interactions(tree);
  REQUIRE(tree.levels.size() == 1);
  REQUIRE(tree.levels.back().blocks.size() == 1);
  for (const auto& fp : tree.far_pairs) REQUIRE(fp.empty());
  REQUIRE(tree.finest_pairs.empty());
}

TEST_CASE("two atoms split near or far with the level-1 grid") {
  Layout lay;
  lay.centers.push_back(Vec3(0.0, 0.0, 0.0));
  lay.centers.push_back(Vec3(1.0, 0.0, 0.0));

  // coarse grid: adjacent blocks, interaction handled at the finest level
  BlockTree coarse = build_block_tree(lay, 2);
  classify_interactions(coarse);
  REQUIRE(coarse.levels.size() == 1);
  for (const auto& fp : coarse.far_pairs) REQUIRE(fp.empty());
  const std::vector<std::array<int, 2>> expect{{0, 1}, {1, 0}};
  REQUIRE(coarse.finest_pairs == expect);

  // fine grid: blocks are separated, one grouped far pair, nothing finest
  BlockTree fine = build_block_tree(lay, 4);
  classify_interactions(fine);
  REQUIRE(fine.levels.size() == 1);
  REQUIRE(fine.far_pairs[0].size() == 1);
  REQUIRE(fine.finest_pairs.empty());
}

TEST_CASE("interaction lists cover every atom pair exactly once") {
  const Layout lay = vogel_spiral(20, 1e-7);
  BlockTree tree = build_block_tree(lay, 2);
  classify_interactions(tree);
  const int n = 20;
  std::vector<std::vector<int>> count(n, std::vector<int>(n, 0));
  for (size_t l = 0; l < tree.levels.size(); ++l)
    for (const auto& [bi, bj] : tree.far_pairs[l])
      for (int a : tree.levels[l].blocks[bi].atoms)
        for (int b : tree.levels[l].blocks[bj].atoms) {
          ++count[a][b];
          ++count[b][a];
        }
  for (const auto& [a, b] : tree.finest_pairs) ++count[a][b];
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b)
      REQUIRE(count[a][b] == (a == b ? 0 : 1));
  // every atom appears in exactly one finest-level block
  std::vector<int> seen(n, 0);
  for (const auto& b : tree.levels.back().blocks)
    for (int a : b.atoms) ++seen[a];
  for (int a = 0; a < n; ++a) REQUIRE(seen[a] == 1);
}

TEST_CASE("block tree rejects coincident atoms and empty grids") {
  Layout dup;
  dup.centers.push_back(Vec3(1.0, 2.0, 0.0));
  dup.centers.push_back(Vec3(1.0, 2.0, 0.0));
  REQUIRE_THROWS_WITH(build_block_tree(dup, 4),
                      ContainsSubstring("indistinguishable atoms"));
  Layout one;
  one.centers.push_back(Vec3::Zero());
  REQUIRE_THROWS_WITH(build_block_tree(one, 0),
                      ContainsSubstring("level-1 grid"));
}
