#pragma once

// Interaction-matrix blocks between identical voxelized scatterers.
//
// The facet-level block between a test atom at p_i and a source atom at p_j
// combines three terms: a local material term (inverse contrast times the
// facet Gram matrix, diagonal blocks only), a volume-current retardation term
// (j*omega*mu0 times kernel-weighted facet overlaps), and a bound-charge term
// (surface-charge kernel integrals scaled by 1/(j*omega*eps0)). Projection by
// the loop/star recombination matrix yields the solved-for block. All blocks
// of one scenario share one mesh, one basis, and one cached self block.

#include <Eigen/Dense>

#include <complex>
#include <map>
#include <stdexcept>
#include <vector>

#include "qrvie/basis.hpp"
#include "qrvie/geometry.hpp"
#include "qrvie/quadrature.hpp"

namespace qrvie {

inline constexpr double vacuum_permittivity = 8.8541878128e-12;
inline constexpr double vacuum_permeability = 1.25663706212e-6;

inline double light_speed() {
  return 1.0 / std::sqrt(vacuum_permittivity * vacuum_permeability);
}

struct Material {
  double sigma = 0.0;       // conductivity, S/m, >= 0
  Complex chi{0.0, 0.0};    // dielectric susceptibility (relative permittivity - 1)
};

struct Excitation {
  double omega = 0.0;   // angular frequency, rad/s
  Vec3 E0 = Vec3::UnitX();
  Vec3 direction = Vec3::UnitZ();

  double wavenumber() const {
    return omega * std::sqrt(vacuum_permittivity * vacuum_permeability);
  }
};

using MatrixXcd = Eigen::MatrixXcd;
using VectorXcd = Eigen::VectorXcd;

class BlockAssembler {
 public:
  BlockAssembler(const Mesh& mesh, const BasisSet& basis, Material material,
                 Excitation excitation, QuadConfig quad = {})
      : mesh_(mesh),
        basis_(basis),
        material_(material),
        exc_(excitation),
        quad_(quad) {
    if (basis_.empty || basis_.n_dofs() == 0)
      throw std::invalid_argument("empty basis: no unknowns to assemble");
    if (!(exc_.omega > 0.0))
      throw std::invalid_argument("excitation frequency must be positive");
    if (!(exc_.direction.norm() > 0.0))
      throw std::invalid_argument("propagation direction must be nonzero");
    exc_.direction.normalize();
    if (std::abs(exc_.E0.dot(exc_.direction)) > 1e-12 * exc_.E0.norm())
      throw std::invalid_argument("excitation not transverse");
    if (material_.sigma < 0.0)
      throw std::invalid_argument("conductivity must be nonnegative");
    const Complex j(0.0, 1.0);
    const Complex contrast =
        material_.sigma + j * exc_.omega * vacuum_permittivity * material_.chi;
    if (std::abs(contrast) == 0.0)
      throw std::invalid_argument("material contrast vanishes");
    inv_contrast_ = 1.0 / contrast;

    C_ = Eigen::MatrixXd(basis_.C).cast<Complex>();
    gram_ = facet_gram(mesh_).cast<Complex>();
    self_block_ = project(facet_matrix(Vec3::Zero(), true));
  }

  int n_dofs_per_atom() const { return basis_.n_dofs(); }
  const Mesh& mesh() const { return mesh_; }
  const BasisSet& basis() const { return basis_; }
  const QuadConfig& quad() const { return quad_; }
  const Excitation& excitation() const { return exc_; }
  const Material& material() const { return material_; }

  // Diagonal block, assembled once and shared by every atom.
  const MatrixXcd& self_block() const { return self_block_; }

  // Block with test atom centered at p_test and source atom at p_source.
  MatrixXcd pair_block(const Vec3& p_test, const Vec3& p_source) const {
    const Vec3 d = p_source - p_test;
    if (d.isZero(0.0)) return self_block_;
    return project(facet_matrix(d, false));
  }

  // Stacked block for lists of test and source atoms.
  MatrixXcd group_block(const Layout& lay, const std::vector<int>& rows,
                        const std::vector<int>& cols) const {
    const int np = n_dofs_per_atom();
    MatrixXcd Z(np * rows.size(), np * cols.size());
    for (size_t i = 0; i < rows.size(); ++i)
      for (size_t j = 0; j < cols.size(); ++j)
        Z.block(np * i, np * j, np, np) =
            pair_block(lay.centers[rows[i]], lay.centers[cols[j]]);
    return Z;
  }

  // Plane-wave right-hand side over the whole layout: per-axis analytic phase
  // moments against the facet flux profiles, projected per atom.
  VectorXcd excitation_vector(const Layout& lay) const {
    const int np = n_dofs_per_atom();
    const double k = exc_.wavenumber();
    const Vec3 kvec = k * exc_.direction;
    const double h = mesh_.voxel;
    const Complex j(0.0, 1.0);

    std::array<LineMoments, 3> mom;
    for (int a = 0; a < 3; ++a) mom[a] = line_phase_moments(kvec[a], h);

    // facet vector for an atom at the origin
    VectorXcd ef = VectorXcd::Zero(mesh_.n_faces());
    for (int c = 0; c < mesh_.n_cells(); ++c) {
      const Vec3 corner = mesh_.cell_corner(c);
      const Complex phase = std::exp(-j * kvec.dot(corner));
      for (int ax = 0; ax < 3; ++ax) {
        const double amp = exc_.E0[ax];
        if (amp == 0.0) continue;
        Complex trans(1.0, 0.0);
        for (int nu = 0; nu < 3; ++nu)
          if (nu != ax) trans *= mom[nu].c0;
        ef[mesh_.cell_faces[c][ax][0]] +=
            amp * phase * trans * mom[ax].lin_minus;
        ef[mesh_.cell_faces[c][ax][1]] +=
            amp * phase * trans * mom[ax].lin_plus;
      }
    }
    const VectorXcd e_atom = C_.transpose() * ef;

    VectorXcd v(np * lay.centers.size());
    for (size_t i = 0; i < lay.centers.size(); ++i)
      v.segment(np * i, np) =
          std::exp(-j * kvec.dot(lay.centers[i])) * e_atom;
    return v;
  }

  // Full matrix for small scenarios; reference factorizations only.
  MatrixXcd dense_matrix(const Layout& lay, int max_unknowns = 5000) const {
    const int np = n_dofs_per_atom();
    const int n = static_cast<int>(lay.centers.size());
    if (static_cast<long long>(np) * n > max_unknowns)
      throw std::runtime_error("dense oracle disabled at this size");
    MatrixXcd Z(np * n, np * n);
    for (int i = 0; i < n; ++i)
      for (int jj = 0; jj < n; ++jj)
        Z.block(np * i, np * jj, np, np) =
            (i == jj) ? self_block_
                      : pair_block(lay.centers[i], lay.centers[jj]);
    return Z;
  }

 private:
  MatrixXcd project(const MatrixXcd& facet) const {
    return C_.transpose() * facet * C_;
  }

  // Facet-level interaction matrix for source-minus-test center offset d.
  MatrixXcd facet_matrix(const Vec3& d, bool self) const {
    const double h = mesh_.voxel;
    const double k = exc_.wavenumber();
    const Complex j(0.0, 1.0);
    const Complex coef_L = j * exc_.omega * vacuum_permeability;
    const Complex coef_D = 1.0 / (j * exc_.omega * vacuum_permittivity);

    MatrixXcd Z = MatrixXcd::Zero(mesh_.n_faces(), mesh_.n_faces());

    // volume-current term: 12 nonzero facet combinations per cell pair
    std::map<Idx3, std::array<Complex, 12>> memo_vol;
    for (int c = 0; c < mesh_.n_cells(); ++c) {
      for (int cc = 0; cc < mesh_.n_cells(); ++cc) {
        Idx3 dl{mesh_.cells[cc][0] - mesh_.cells[c][0],
                mesh_.cells[cc][1] - mesh_.cells[c][1],
                mesh_.cells[cc][2] - mesh_.cells[c][2]};
        auto it = memo_vol.find(dl);
        if (it == memo_vol.end()) {
          const Vec3 delta = d + h * Vec3(dl[0], dl[1], dl[2]);
          it = memo_vol
                   .emplace(dl, volume_pair_integrals(h, delta, k, quad_))
                   .first;
        }
        const auto& vals = it->second;
        for (int ax = 0; ax < 3; ++ax)
          for (int sf = 0; sf < 2; ++sf)
            for (int sg = 0; sg < 2; ++sg)
              Z(mesh_.cell_faces[c][ax][sf], mesh_.cell_faces[cc][ax][sg]) +=
                  coef_L * vals[4 * ax + 2 * sf + sg];
      }
    }

    // bound-charge term on boundary facets
    struct SKey {
      int af, ag;
      Idx3 dl;
      bool operator<(const SKey& o) const {
        if (af != o.af) return af < o.af;
        if (ag != o.ag) return ag < o.ag;
        return dl < o.dl;
      }
    };
    std::map<SKey, Complex> memo_sur;
    const double inv_h4 = 1.0 / (h * h * h * h);
    for (int f = 0; f < mesh_.n_faces(); ++f) {
      if (!mesh_.is_boundary_face(f)) continue;
      for (int g = 0; g < mesh_.n_faces(); ++g) {
        if (!mesh_.is_boundary_face(g)) continue;
        const auto& Ff = mesh_.faces[f];
        const auto& Fg = mesh_.faces[g];
        SKey key{Ff.axis, Fg.axis,
                 {Fg.lattice[0] - Ff.lattice[0], Fg.lattice[1] - Ff.lattice[1],
                  Fg.lattice[2] - Ff.lattice[2]}};
        auto it = memo_sur.find(key);
        if (it == memo_sur.end()) {
          const Vec3 delta =
              d + h * Vec3(key.dl[0], key.dl[1], key.dl[2]);
          it = memo_sur
                   .emplace(key, surface_pair_integral(h, Ff.axis, Fg.axis,
                                                       delta, k, quad_))
                   .first;
        }
        const double sgn = static_cast<double>(mesh_.outward_sign(f) *
                                               mesh_.outward_sign(g));
        Z(f, g) += coef_D * sgn * inv_h4 * it->second;
      }
    }

    if (self) Z += inv_contrast_ * gram_;
    return Z;
  }

  const Mesh& mesh_;
  const BasisSet& basis_;
  Material material_;
  Excitation exc_;
  QuadConfig quad_;
  Complex inv_contrast_;
  MatrixXcd C_;
  MatrixXcd gram_;
  MatrixXcd self_block_;
};

}  // namespace qrvie
