#pragma once

// Divergence-conforming facet functions on voxel meshes and their
// solenoidal/non-solenoidal (loop/star) recombination.
//
// Each facet carries one flux unknown oriented along the global axis normal.
// A candidate column for edge e is the signed fan of facets incident to e
// (the discrete curl of the edge element); its divergence vanishes cell by
// cell and its net boundary flux vanishes per boundary component, both as
// exact integer cancellations. Independence is enforced by a tree-cotree
// split: a spanning forest of the boundary vertex graph is grown first, then
// extended to a spanning tree of the full vertex graph through interior
// edges; cotree edges yield the retained columns. Interior cotree edges give
// loops (zero boundary trace), boundary cotree edges give stars.

#include <Eigen/Dense>
#include <Eigen/QR>
#include <Eigen/SparseCore>

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <utility>
#include <vector>

#include "qrvie/geometry.hpp"

namespace qrvie {

struct BasisSet {
  int n_loops = 0;
  int n_stars = 0;
  bool empty = false;  // mesh had no interior facet; no basis is defined
  Eigen::SparseMatrix<double> C;  // facets x (loops | stars)
  std::vector<int> loop_edges;    // mesh edge behind each loop column
  std::vector<int> star_edges;    // mesh edge behind each star column

  int n_dofs() const { return n_loops + n_stars; }
};

// Rows: one divergence row per cell (signs of the facet normals seen from the
// cell), then one net-flux row per boundary component (outward signs).
inline Eigen::SparseMatrix<double> constraint_matrix(const Mesh& mesh) {
  std::vector<Eigen::Triplet<double>> trip;
  const int nc = mesh.n_cells();
  for (int c = 0; c < nc; ++c)
    for (int ax = 0; ax < 3; ++ax)
      for (int side = 0; side < 2; ++side) {
        const int f = mesh.cell_faces[c][ax][side];
        trip.emplace_back(c, f, static_cast<double>(mesh.cell_sign(c, f)));
      }
  for (int f = 0; f < mesh.n_faces(); ++f)
    if (mesh.is_boundary_face(f))
      trip.emplace_back(nc + mesh.faces[f].component, f,
                        static_cast<double>(mesh.outward_sign(f)));
  Eigen::SparseMatrix<double> A(nc + mesh.n_boundary_components, mesh.n_faces());
  A.setFromTriplets(trip.begin(), trip.end());
  return A;
}

namespace detail {

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(n) {
    for (int i = 0; i < n; ++i) parent[i] = i;
  }
  int find(int x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }
  bool unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    parent[a] = b;
    return true;
  }
};

}  // namespace detail

inline BasisSet build_loop_star(const Mesh& mesh) {
  BasisSet basis;
  if (mesh.n_interior_faces == 0) {
    basis.empty = true;
    basis.C.resize(mesh.n_faces(), 0);
    return basis;
  }

  // Genus guard: voxel scatterers must be handle-free or the recombination
  // cannot span the constrained space.
  const int chi = mesh.euler_characteristic();
  const int cavities = mesh.n_boundary_components - 1;
  const int h1 = 1 + cavities - chi;
  if (h1 != 0)
    throw std::runtime_error("unsupported topology: mesh has handles");

  // Vertex ids.
  std::map<Idx3, int> vid;
  auto vertex_id = [&](const Idx3& v) {
    auto it = vid.find(v);
    if (it == vid.end()) it = vid.emplace(v, static_cast<int>(vid.size())).first;
    return it->second;
  };
  std::vector<std::pair<int, int>> ends(mesh.n_edges());
  for (int e = 0; e < mesh.n_edges(); ++e) {
    const auto& ed = mesh.edges[e];
    ends[e] = {vertex_id(ed.vertex),
               vertex_id(idx3_add(ed.vertex, unit_idx3(ed.axis)))};
  }

  detail::UnionFind uf(static_cast<int>(vid.size()));
  std::vector<int> star_candidates, loop_candidates;
  for (int e = 0; e < mesh.n_edges(); ++e) {
    if (!mesh.edges[e].boundary) continue;
    if (!uf.unite(ends[e].first, ends[e].second)) star_candidates.push_back(e);
  }
  for (int e = 0; e < mesh.n_edges(); ++e) {
    if (mesh.edges[e].boundary) continue;
    if (!uf.unite(ends[e].first, ends[e].second)) loop_candidates.push_back(e);
  }

  basis.n_loops = static_cast<int>(loop_candidates.size());
  basis.n_stars = static_cast<int>(star_candidates.size());
  basis.loop_edges = loop_candidates;
  basis.star_edges = star_candidates;

  const int expected =
      mesh.n_faces() - mesh.n_cells() - cavities;
  if (basis.n_dofs() != expected)
    throw std::runtime_error("unsupported topology: basis count mismatch");

  std::vector<Eigen::Triplet<double>> trip;
  int col = 0;
  for (int e : loop_candidates) {
    for (auto& [f, s] : mesh.edges[e].faces)
      trip.emplace_back(f, col, static_cast<double>(s));
    ++col;
  }
  for (int e : star_candidates) {
    for (auto& [f, s] : mesh.edges[e].faces)
      trip.emplace_back(f, col, static_cast<double>(s));
    ++col;
  }
  basis.C.resize(mesh.n_faces(), basis.n_dofs());
  basis.C.setFromTriplets(trip.begin(), trip.end());
  return basis;
}

struct BasisCheck {
  double max_constraint_residual = 0.0;  // max |constraint * C|
  double max_loop_boundary_coeff = 0.0;  // loops must have zero boundary trace
  int rank_deficiency = 0;               // columns minus numerical rank
  bool ok = false;
};

inline BasisCheck verify_basis(const Mesh& mesh, const BasisSet& basis) {
  BasisCheck r;
  if (basis.empty || basis.n_dofs() == 0) {
    r.ok = false;  // nothing to verify on a flagged-empty basis
    return r;
  }
  Eigen::MatrixXd C = Eigen::MatrixXd(basis.C);
  Eigen::MatrixXd A = Eigen::MatrixXd(constraint_matrix(mesh));
  r.max_constraint_residual = (A * C).cwiseAbs().maxCoeff();
  for (int col = 0; col < basis.n_loops; ++col)
    for (int f = 0; f < mesh.n_faces(); ++f)
      if (mesh.is_boundary_face(f))
        r.max_loop_boundary_coeff =
            std::max(r.max_loop_boundary_coeff, std::abs(C(f, col)));
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(C);
  r.rank_deficiency = basis.n_dofs() - static_cast<int>(qr.rank());
  r.ok = r.max_constraint_residual <= 1e-12 &&
         r.max_loop_boundary_coeff <= 1e-12 && r.rank_deficiency == 0;
  return r;
}

// Gram matrix of the facet functions (same-axis neighbors only): the 1-D
// flux-profile overlaps are 1/(3h^3) for a profile with itself and 1/(6h^3)
// for the two profiles of one cell on a common axis; the transverse axes
// contribute a factor h each, giving 1/(3h) and 1/(6h) per shared cell.
inline Eigen::MatrixXd facet_gram(const Mesh& mesh) {
  const double h = mesh.voxel;
  const double self = 1.0 / (3.0 * h);
  const double cross = 1.0 / (6.0 * h);
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(mesh.n_faces(), mesh.n_faces());
  for (int c = 0; c < mesh.n_cells(); ++c)
    for (int ax = 0; ax < 3; ++ax) {
      const int fm = mesh.cell_faces[c][ax][0];
      const int fp = mesh.cell_faces[c][ax][1];
      G(fm, fm) += self;
      G(fp, fp) += self;
      G(fm, fp) += cross;
      G(fp, fm) += cross;
    }
  return G;
}

}  // namespace qrvie
