#pragma once

// Voxel meshes for single scatterers, planar layouts of identical copies,
// and the quadtree block partition used to group far interactions.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <queue>
#include <stdexcept>
#include <string>
#include <vector>

namespace qrvie {

using Vec3 = Eigen::Vector3d;
using Idx3 = std::array<int, 3>;

inline Idx3 idx3_add(const Idx3& a, const Idx3& b) {
  return {a[0] + b[0], a[1] + b[1], a[2] + b[2]};
}

inline Idx3 unit_idx3(int axis) {
  Idx3 e{0, 0, 0};
  e[axis] = 1;
  return e;
}

// Axis-aligned voxel mesh. Cells are unit lattice cubes scaled by `voxel`;
// cell (i,j,k) spans origin + voxel*[i,i+1]x[j,j+1]x[k,k+1].
//
// A face is keyed by (axis, lattice) where `lattice` is the cell on its
// positive side; its global normal is +e_axis. plus_cell / minus_cell are the
// adjacent cell indices (-1 when absent); boundary faces have exactly one.
//
// An edge is keyed by (axis, base vertex lattice); it runs from vertex v to
// v + e_axis and carries its incident faces with circulation signs (the signed
// face fan is the discrete curl of the edge element).
struct Mesh {
  double voxel = 0.0;
  Vec3 origin = Vec3::Zero();

  std::vector<Idx3> cells;

  struct Face {
    int axis = 0;
    Idx3 lattice{0, 0, 0};
    int plus_cell = -1;
    int minus_cell = -1;
    int component = -1;  // boundary component id, -1 for interior faces
  };
  std::vector<Face> faces;

  // [cell][axis][side], side 0 = minus face, 1 = plus face
  std::vector<std::array<std::array<int, 2>, 3>> cell_faces;

  struct Edge {
    int axis = 0;
    Idx3 vertex{0, 0, 0};
    bool boundary = false;
    std::vector<std::pair<int, int>> faces;  // (face index, circulation sign)
  };
  std::vector<Edge> edges;

  int n_vertices = 0;
  int n_boundary_components = 0;
  int n_interior_faces = 0;

  int n_cells() const { return static_cast<int>(cells.size()); }
  int n_faces() const { return static_cast<int>(faces.size()); }
  int n_edges() const { return static_cast<int>(edges.size()); }
  int n_boundary_faces() const { return n_faces() - n_interior_faces; }

  bool is_boundary_face(int f) const {
    return faces[f].plus_cell < 0 || faces[f].minus_cell < 0;
  }

  // +1 if the global normal +e_axis points out of the mesh through boundary
  // face f, -1 otherwise.
  int outward_sign(int f) const {
    const Face& fc = faces[f];
    if (fc.plus_cell >= 0 && fc.minus_cell >= 0)
      throw std::logic_error("outward_sign: interior face");
    return fc.minus_cell >= 0 ? +1 : -1;
  }

  // Divergence sign of face f seen from cell c: +1 when the global normal
  // points out of c.
  int cell_sign(int c, int f) const {
    const Face& fc = faces[f];
    if (fc.minus_cell == c) return +1;
    if (fc.plus_cell == c) return -1;
    throw std::logic_error("cell_sign: face not on cell");
  }

  Vec3 cell_center(int c) const {
    const Idx3& l = cells[c];
    return origin + voxel * Vec3(l[0] + 0.5, l[1] + 0.5, l[2] + 0.5);
  }

  Vec3 cell_corner(int c) const {
    const Idx3& l = cells[c];
    return origin + voxel * Vec3(l[0], l[1], l[2]);
  }

  Vec3 face_center(int f) const {
    const Face& fc = faces[f];
    Vec3 p(fc.lattice[0], fc.lattice[1], fc.lattice[2]);
    for (int ax = 0; ax < 3; ++ax)
      if (ax != fc.axis) p[ax] += 0.5;
    return origin + voxel * p;
  }

  Vec3 edge_midpoint(int e) const {
    const Edge& ed = edges[e];
    Vec3 p(ed.vertex[0], ed.vertex[1], ed.vertex[2]);
    p[ed.axis] += 0.5;
    return origin + voxel * p;
  }

  int euler_characteristic() const {
    return n_vertices - n_edges() + n_faces() - n_cells();
  }
};

// Build the face/edge/vertex incidence for a set of lattice cells.
inline Mesh build_voxel_mesh(const std::vector<Idx3>& cell_list, double voxel,
                             const Vec3& origin = Vec3::Zero()) {
  if (!(voxel > 0.0)) throw std::invalid_argument("voxel size must be positive");
  if (cell_list.empty()) throw std::invalid_argument("degenerate mesh: no cells");

  Mesh m;
  m.voxel = voxel;
  m.origin = origin;
  m.cells = cell_list;

  std::map<Idx3, int> cell_of;
  for (int c = 0; c < m.n_cells(); ++c) {
    if (!cell_of.emplace(m.cells[c], c).second)
      throw std::invalid_argument("duplicate cell in mesh");
  }

  // Faces, deduplicated by (axis, plus-side lattice).
  std::map<std::pair<int, Idx3>, int> face_of;
  m.cell_faces.resize(m.cells.size());
  for (int c = 0; c < m.n_cells(); ++c) {
    for (int ax = 0; ax < 3; ++ax) {
      const Idx3 minus_key = m.cells[c];
      const Idx3 plus_key = idx3_add(m.cells[c], unit_idx3(ax));
      for (int side = 0; side < 2; ++side) {
        const Idx3& key = side == 0 ? minus_key : plus_key;
        auto it = face_of.find({ax, key});
        int f;
        if (it == face_of.end()) {
          f = m.n_faces();
          face_of.emplace(std::make_pair(ax, key), f);
          Mesh::Face fc;
          fc.axis = ax;
          fc.lattice = key;
          m.faces.push_back(fc);
        } else {
          f = it->second;
        }
        m.cell_faces[c][ax][side] = f;
        if (side == 0)
          m.faces[f].plus_cell = c;  // minus face of c: c sits on the + side
        else
          m.faces[f].minus_cell = c;
      }
    }
  }

  int n_boundary = 0;
  for (auto& fc : m.faces)
    if (fc.plus_cell < 0 || fc.minus_cell < 0) ++n_boundary;
  m.n_interior_faces = m.n_faces() - n_boundary;

  // Edges with signed face fans. For a face with normal axis a and in-plane
  // axes (b,t) forming a right-handed cyclic triple (a,b,t), the positively
  // oriented boundary circulation is: +b at t-low, -b at t-high, +t at b-high,
  // -t at b-low.
  std::map<std::pair<int, Idx3>, int> edge_of;
  auto add_edge_face = [&](int axis, const Idx3& v, int f, int sign) {
    auto it = edge_of.find({axis, v});
    int e;
    if (it == edge_of.end()) {
      e = m.n_edges();
      edge_of.emplace(std::make_pair(axis, v), e);
      Mesh::Edge ed;
      ed.axis = axis;
      ed.vertex = v;
      m.edges.push_back(ed);
    } else {
      e = it->second;
    }
    m.edges[e].faces.emplace_back(f, sign);
  };

  for (int f = 0; f < m.n_faces(); ++f) {
    const Mesh::Face& fc = m.faces[f];
    const int a = fc.axis, b = (a + 1) % 3, t = (a + 2) % 3;
    Idx3 base = fc.lattice;
    // edges along b at t-low / t-high
    add_edge_face(b, base, f, +1);
    add_edge_face(b, idx3_add(base, unit_idx3(t)), f, -1);
    // edges along t at b-high / b-low
    add_edge_face(t, idx3_add(base, unit_idx3(b)), f, +1);
    add_edge_face(t, base, f, -1);
  }

  for (auto& ed : m.edges)
    for (auto& [f, s] : ed.faces)
      if (m.is_boundary_face(f)) {
        ed.boundary = true;
        break;
      }

  // Vertices (unique edge endpoints).
  std::map<Idx3, int> vertex_of;
  for (const auto& ed : m.edges) {
    vertex_of.emplace(ed.vertex, 0);
    vertex_of.emplace(idx3_add(ed.vertex, unit_idx3(ed.axis)), 0);
  }
  m.n_vertices = static_cast<int>(vertex_of.size());

  // Cell connectivity through interior faces.
  {
    std::vector<char> seen(m.cells.size(), 0);
    std::queue<int> q;
    q.push(0);
    seen[0] = 1;
    int reached = 1;
    while (!q.empty()) {
      int c = q.front();
      q.pop();
      for (int ax = 0; ax < 3; ++ax)
        for (int side = 0; side < 2; ++side) {
          const Mesh::Face& fc = m.faces[m.cell_faces[c][ax][side]];
          int o = fc.plus_cell == c ? fc.minus_cell : fc.plus_cell;
          if (o >= 0 && !seen[o]) {
            seen[o] = 1;
            ++reached;
            q.push(o);
          }
        }
    }
    if (reached != m.n_cells())
      throw std::invalid_argument("degenerate mesh: disconnected cells");
  }

  // Boundary components: flood fill over boundary faces sharing an edge.
  {
    std::vector<std::vector<int>> edge_bfaces(m.edges.size());
    for (int e = 0; e < m.n_edges(); ++e)
      for (auto& [f, s] : m.edges[e].faces)
        if (m.is_boundary_face(f)) edge_bfaces[e].push_back(f);

    std::vector<int> comp(m.faces.size(), -1);
    int ncomp = 0;
    for (int f0 = 0; f0 < m.n_faces(); ++f0) {
      if (!m.is_boundary_face(f0) || comp[f0] >= 0) continue;
      std::queue<int> q;
      q.push(f0);
      comp[f0] = ncomp;
      while (!q.empty()) {
        int f = q.front();
        q.pop();
        const Mesh::Face& fc = m.faces[f];
        const int a = fc.axis, b = (a + 1) % 3, t = (a + 2) % 3;
        std::array<std::pair<int, Idx3>, 4> eks = {
            std::make_pair(b, fc.lattice),
            std::make_pair(b, idx3_add(fc.lattice, unit_idx3(t))),
            std::make_pair(t, idx3_add(fc.lattice, unit_idx3(b))),
            std::make_pair(t, fc.lattice)};
        for (auto& ek : eks) {
          int e = edge_of.at(ek);
          for (int g : edge_bfaces[e])
            if (comp[g] < 0) {
              comp[g] = ncomp;
              q.push(g);
            }
        }
      }
      ++ncomp;
    }
    for (int f = 0; f < m.n_faces(); ++f) m.faces[f].component = comp[f];
    m.n_boundary_components = ncomp;
  }

  return m;
}

// Staircase ball: n = floor(2R/h) cells per axis on a grid centered at the
// origin; a cell is kept when its center lies strictly inside the sphere.
inline Mesh build_voxel_sphere(double radius, double voxel) {
  if (!(radius > 0.0)) throw std::invalid_argument("radius must be positive");
  if (!(voxel > 0.0)) throw std::invalid_argument("voxel size must be positive");
  const int n = static_cast<int>(std::floor(2.0 * radius / voxel));
  if (n < 1) throw std::invalid_argument("degenerate mesh: voxel too large for sphere");
  const Vec3 origin = -0.5 * n * voxel * Vec3::Ones();
  std::vector<Idx3> cells;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) {
        Vec3 c = origin + voxel * Vec3(i + 0.5, j + 0.5, k + 0.5);
        if (c.norm() < radius) cells.push_back({i, j, k});
      }
  if (cells.empty())
    throw std::invalid_argument("degenerate mesh: voxel too large for sphere");
  return build_voxel_mesh(cells, voxel, origin);
}

// Rectangular box of nx x ny x nz voxels centered at the origin.
inline Mesh build_voxel_box(int nx, int ny, int nz, double voxel) {
  if (nx < 1 || ny < 1 || nz < 1)
    throw std::invalid_argument("degenerate mesh: empty box");
  std::vector<Idx3> cells;
  for (int i = 0; i < nx; ++i)
    for (int j = 0; j < ny; ++j)
      for (int k = 0; k < nz; ++k) cells.push_back({i, j, k});
  const Vec3 origin = -0.5 * voxel * Vec3(nx, ny, nz);
  return build_voxel_mesh(cells, voxel, origin);
}

// ---------------------------------------------------------------------------
// Planar layouts

struct Layout {
  std::vector<Vec3> centers;
};

// Sunflower (Vogel) spiral in the z = 0 plane: the i-th center sits at radius
// c*sqrt(i) and azimuth i*alpha, alpha = 2*pi/golden_ratio^2, c = R*sqrt(3).
inline Layout vogel_spiral(int n_atoms, double atom_radius) {
  if (n_atoms < 1) throw std::invalid_argument("layout needs at least one atom");
  if (!(atom_radius > 0.0)) throw std::invalid_argument("atom radius must be positive");
  const double golden = 0.5 * (1.0 + std::sqrt(5.0));
  const double alpha = 2.0 * M_PI / (golden * golden);
  const double c = atom_radius * std::sqrt(3.0);
  Layout lay;
  lay.centers.reserve(n_atoms);
  for (int i = 1; i <= n_atoms; ++i) {
    const double r = c * std::sqrt(static_cast<double>(i));
    const double th = i * alpha;
    lay.centers.emplace_back(r * std::cos(th), r * std::sin(th), 0.0);
  }
  return lay;
}

inline double layout_radius(const Layout& lay) {
  double r = 0.0;
  for (const auto& p : lay.centers) r = std::max(r, p.head<2>().norm());
  return r;
}

inline double min_center_distance(const Layout& lay) {
  double d = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < lay.centers.size(); ++i)
    for (size_t j = i + 1; j < lay.centers.size(); ++j)
      d = std::min(d, (lay.centers[i] - lay.centers[j]).norm());
  return d;
}

// ---------------------------------------------------------------------------
// Quadtree block partition of the layout plane.
//
// Level 1 is a regular grid over the bounding square; each level halves the
// block size on the same anchored grid until every nonempty block holds at
// most one atom. Atoms are assigned by center; a center landing exactly on an
// internal grid line belongs to the lower-index block.

struct BlockTree {
  struct Block {
    int ix = 0, iy = 0;
    std::vector<int> atoms;
  };
  struct Level {
    int side = 0;          // blocks per axis
    double block = 0.0;    // block edge length
    std::vector<Block> blocks;
    std::map<std::pair<int, int>, int> index;  // (ix,iy) -> position in blocks
  };

  double square_x0 = 0.0, square_y0 = 0.0, square_w = 0.0;
  std::vector<Level> levels;

  // Filled by classify_interactions: per level, unordered block-index pairs.
  std::vector<std::vector<std::array<int, 2>>> near_pairs;
  std::vector<std::vector<std::array<int, 2>>> far_pairs;
  // Ordered atom pairs surviving adjacency down to the finest level.
  std::vector<std::array<int, 2>> finest_pairs;
};

inline int block_coordinate(double x, double x0, double w, int nside) {
  // Ties on internal grid lines go to the lower block.
  double s = (x - x0) / w;
  int i = static_cast<int>(std::floor(s));
  if (i > 0 && s == std::floor(s)) --i;
  if (i < 0) i = 0;
  if (i >= nside) i = nside - 1;
  return i;
}

inline BlockTree build_block_tree(const Layout& lay, int level1_side = 4,
                                  int max_levels = 64) {
  const int n = static_cast<int>(lay.centers.size());
  if (level1_side < 1) throw std::invalid_argument("level-1 grid must be at least 1x1");
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (lay.centers[i] == lay.centers[j])
        throw std::invalid_argument("indistinguishable atoms: duplicate centers");

  BlockTree tree;
  double xmin = lay.centers[0].x(), xmax = xmin;
  double ymin = lay.centers[0].y(), ymax = ymin;
  for (const auto& p : lay.centers) {
    xmin = std::min(xmin, p.x());
    xmax = std::max(xmax, p.x());
    ymin = std::min(ymin, p.y());
    ymax = std::max(ymax, p.y());
  }
  double w = std::max(xmax - xmin, ymax - ymin);
  if (w <= 0.0) w = 1.0;  // single atom or degenerate extent
  tree.square_x0 = 0.5 * (xmin + xmax) - 0.5 * w;
  tree.square_y0 = 0.5 * (ymin + ymax) - 0.5 * w;
  tree.square_w = w;

  int side = level1_side;
  for (int lvl = 0;; ++lvl) {
    if (lvl >= max_levels)
      throw std::runtime_error("block refinement depth exceeded");
    BlockTree::Level L;
    L.side = side;
    L.block = w / side;
    std::map<std::pair<int, int>, std::vector<int>> occ;
    for (int a = 0; a < n; ++a) {
      int ix = block_coordinate(lay.centers[a].x(), tree.square_x0, L.block, side);
      int iy = block_coordinate(lay.centers[a].y(), tree.square_y0, L.block, side);
      occ[{ix, iy}].push_back(a);
    }
    int maxocc = 0;
    for (auto& [key, atoms] : occ) {
      BlockTree::Block b;
      b.ix = key.first;
      b.iy = key.second;
      b.atoms = atoms;
      maxocc = std::max(maxocc, static_cast<int>(atoms.size()));
      L.index.emplace(key, static_cast<int>(L.blocks.size()));
      L.blocks.push_back(std::move(b));
    }
    tree.levels.push_back(std::move(L));
    if (maxocc <= 1) break;
    side *= 2;
  }
  return tree;
}

// Two blocks are near when their grid indices differ by at most one in each
// direction (touching or overlapping neighborhoods); every other pair is far
// and is recorded at the first level that separates it.
inline void classify_interactions(BlockTree& tree) {
  const int L = static_cast<int>(tree.levels.size());
  tree.near_pairs.assign(L, {});
  tree.far_pairs.assign(L, {});
  tree.finest_pairs.clear();

  auto is_near = [](const BlockTree::Block& a, const BlockTree::Block& b) {
    return std::abs(a.ix - b.ix) <= 1 && std::abs(a.iy - b.iy) <= 1;
  };

  // Level 0 of the vector = level-1 grid: all unordered block pairs.
  {
    const auto& blocks = tree.levels[0].blocks;
    const int nb = static_cast<int>(blocks.size());
    for (int i = 0; i < nb; ++i)
      for (int j = i; j < nb; ++j) {
        if (is_near(blocks[i], blocks[j]))
          tree.near_pairs[0].push_back({i, j});
        else
          tree.far_pairs[0].push_back({i, j});
      }
  }

  // Children of near pairs descend one level.
  for (int l = 0; l + 1 < L; ++l) {
    const auto& cur = tree.levels[l];
    const auto& nxt = tree.levels[l + 1];
    // children (positions in nxt.blocks) of each current block
    std::vector<std::vector<int>> children(cur.blocks.size());
    for (int cb = 0; cb < static_cast<int>(nxt.blocks.size()); ++cb) {
      const auto& blk = nxt.blocks[cb];
      auto it = cur.index.find({blk.ix / 2, blk.iy / 2});
      if (it == cur.index.end())
        throw std::logic_error("block tree: orphan child block");
      children[it->second].push_back(cb);
    }
    for (const auto& [bi, bj] : tree.near_pairs[l]) {
      for (int ci : children[bi]) {
        for (int cj : children[bj]) {
          if (bi == bj && cj < ci) continue;  // unordered within a block
          int a = std::min(ci, cj), b = std::max(ci, cj);
          if (is_near(nxt.blocks[a], nxt.blocks[b]))
            tree.near_pairs[l + 1].push_back({a, b});
          else
            tree.far_pairs[l + 1].push_back({a, b});
        }
      }
    }
  }

  // Finest-level near pairs between distinct blocks (one atom each) stay
  // explicit, ordered both ways.
  const auto& fin = tree.levels[L - 1];
  for (const auto& [bi, bj] : tree.near_pairs[L - 1]) {
    if (bi == bj) continue;
    for (int a : fin.blocks[bi].atoms)
      for (int b : fin.blocks[bj].atoms) {
        tree.finest_pairs.push_back({a, b});
        tree.finest_pairs.push_back({b, a});
      }
  }
  std::sort(tree.finest_pairs.begin(), tree.finest_pairs.end());
}

}  // namespace qrvie
