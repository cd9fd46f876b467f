#pragma once

// Pairwise voxel integrals of the Helmholtz kernel.
//
// Translation invariance collapses each 6-D cell-pair integral with
// tensor-product facet weights into a 3-D integral of the kernel against
// per-axis overlap correlations over the difference coordinate u = r' - r:
// linear-linear overlaps for the flux axis and triangular (indicator-
// indicator) overlaps for the transverse axes. Surface-surface face pairs
// reduce the same way to 2-D (parallel faces) or 3-D (perpendicular faces)
// integrals. Correlation kinks sit at the cell-offset coordinates, and the
// kernel singularity - when present - sits at a box vertex for lattice
// offsets, so each kink box is integrated by tensor Gauss rules with
// geometric subdivision toward the near point until the estimated relative
// contribution falls below the requested tolerance.

#include <array>
#include <cmath>
#include <complex>
#include <map>
#include <mutex>
#include <stdexcept>
#include <type_traits>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "qrvie/geometry.hpp"

namespace qrvie {

using Complex = std::complex<double>;

struct QuadConfig {
  int gauss_order = 5;          // tensor Gauss points per axis per box
  double eps_quad = 1e-6;       // target relative accuracy of pair integrals
  double near_threshold = 2.0;  // admissibility: dist >= near_threshold/2 * box size
  int subdivision = 1;          // uniform pre-split of each kink interval per axis
  int max_depth = 48;           // grading depth cap
};

inline Complex green(double r, double k) {
  if (!(r > 0.0)) throw std::domain_error("singular kernel evaluation");
  return std::polar(1.0 / (4.0 * M_PI * r), -k * r);
}

struct GaussRule {
  std::vector<double> x, w;  // nodes/weights on [-1,1]
};

inline const GaussRule& gauss_rule(int q) {
  if (q < 1 || q > 31) throw std::invalid_argument("gauss order out of range");
  static std::mutex mu;
  static std::map<int, GaussRule> cache;
  std::lock_guard<std::mutex> lock(mu);
  GaussRule& rule = cache[q];
  if (!rule.x.empty()) return rule;
  rule.x.resize(q);
  rule.w.resize(q);
  for (int i = 0; i < q; ++i) {
    double x = std::cos(M_PI * (i + 0.75) / (q + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      if (q == 1) p1 = x;
      for (int n = 2; n <= q; ++n) {
        double p2 = ((2.0 * n - 1.0) * x * p1 - (n - 1.0) * p0) / n;
        p0 = p1;
        p1 = p2;
      }
      double pq = (q == 1) ? x : p1;
      double pq1 = (q == 1) ? 1.0 : p0;
      dp = q * (pq1 - x * pq) / (1.0 - x * x);
      double dx = pq / dp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    rule.x[i] = x;
    rule.w[i] = 2.0 / ((1.0 - x * x) * dp * dp);
  }
  return rule;
}

namespace quad_detail {

constexpr int kMaxVals = 12;

// Triangular correlation of two unit indicators on [0,h]: overlap length at
// shift w.
inline double tri_overlap(double w, double h) {
  double t = h - std::abs(w);
  return t > 0.0 ? t : 0.0;
}

// Exact correlation of in-cell flux profiles at shift w: the integrand is a
// quadratic in the overlap variable, so a three-point Simpson rule is exact.
// side 0 = minus-face profile (h - tau)/h^3, side 1 = plus-face tau/h^3.
inline double linlin_overlap(int side_f, int side_g, double w, double h) {
  const double lo = std::max(0.0, -w);
  const double hi = h - std::max(0.0, w);
  if (hi <= lo) return 0.0;
  const double inv_h3 = 1.0 / (h * h * h);
  auto prof = [&](int side, double t) {
    return (side == 0 ? (h - t) : t) * inv_h3;
  };
  auto integrand = [&](double t) {
    return prof(side_f, t) * prof(side_g, t + w);
  };
  const double mid = 0.5 * (lo + hi);
  return (hi - lo) / 6.0 *
         (integrand(lo) + 4.0 * integrand(mid) + integrand(hi));
}

template <int N>
struct Box {
  std::array<double, N> lo, hi;

  double max_side() const {
    double s = 0.0;
    for (int a = 0; a < N; ++a) s = std::max(s, hi[a] - lo[a]);
    return s;
  }
  double dist2_origin() const {
    double d2 = 0.0;
    for (int a = 0; a < N; ++a) {
      double d = 0.0;
      if (lo[a] > 0.0) d = lo[a];
      else if (hi[a] < 0.0) d = -hi[a];
      d2 += d * d;
    }
    return d2;
  }
  bool contains_origin() const {
    for (int a = 0; a < N; ++a)
      if (lo[a] > 0.0 || hi[a] < 0.0) return false;
    return true;
  }
  bool origin_at_vertex() const {
    for (int a = 0; a < N; ++a)
      if (lo[a] != 0.0 && hi[a] != 0.0 && lo[a] < 0.0 && hi[a] > 0.0)
        return false;
    return true;
  }
};

// Adaptive tensor-Gauss integration of sum_v K(|u| + base offset) W_v(u) over
// boxes in the difference coordinate. `weight` fills nvals values per point.
template <int N, class WeightFn>
class BoxIntegrator {
 public:
  BoxIntegrator(double base_offset, double wavenumber, int nvals,
                const WeightFn& weight, const QuadConfig& cfg)
      : base2_(base_offset * base_offset),
        k_(wavenumber),
        nvals_(nvals),
        weight_(weight),
        cfg_(cfg),
        eta_(0.5 * cfg.near_threshold),
        rule_(gauss_rule(cfg.gauss_order)) {
    acc_.fill(Complex(0.0, 0.0));
  }

  void add_box(const Box<N>& b) {
    if (b.contains_origin()) {
      if (!(base2_ > 0.0) && !b.origin_at_vertex())
        throw std::runtime_error(
            "quadrature failure: singular point inside subdomain");
      graded(b);
    } else if (admissible(b)) {
      gauss_into(b, acc_.data());
    } else {
      smooth(b, 0);
    }
  }

  const std::array<Complex, kMaxVals>& values() const { return acc_; }
  double tail() const { return tail_; }
  double scale() const {
    double s = 0.0;
    for (int v = 0; v < nvals_; ++v) s += std::abs(acc_[v]);
    return s;
  }

 private:
  bool admissible(const Box<N>& b) const {
    const double d2 = base2_ + b.dist2_origin();
    const double s = eta_ * b.max_side();
    return d2 >= s * s;
  }

  static double l1(const Complex* v, int n) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += std::abs(v[i]);
    return s;
  }

  void gauss_into(const Box<N>& b, Complex* out) {
    const GaussRule& rule = rule_;
    const int q = cfg_.gauss_order;
    std::array<double, N> mid, half;
    for (int a = 0; a < N; ++a) {
      mid[a] = 0.5 * (b.lo[a] + b.hi[a]);
      half[a] = 0.5 * (b.hi[a] - b.lo[a]);
    }
    int total = 1;
    for (int a = 0; a < N; ++a) total *= q;
    std::array<double, N> u;
    double wbuf[kMaxVals];
    for (int p = 0; p < total; ++p) {
      int rem = p;
      double gw = 1.0;
      double r2 = base2_;
      for (int a = 0; a < N; ++a) {
        const int d = rem % q;
        rem /= q;
        u[a] = mid[a] + half[a] * rule.x[d];
        gw *= half[a] * rule.w[d];
        r2 += u[a] * u[a];
      }
      weight_(u.data(), wbuf);
      const Complex kv = green(std::sqrt(r2), k_) * gw;
      for (int v = 0; v < nvals_; ++v) out[v] += kv * wbuf[v];
    }
  }

  // Recursive splitting for boxes with the origin strictly outside.
  void smooth(const Box<N>& b, int depth) {
    if (admissible(b)) {
      gauss_into(b, acc_.data());
      return;
    }
    if (depth >= cfg_.max_depth) {
      Complex tmp[kMaxVals] = {};
      gauss_into(b, tmp);
      for (int v = 0; v < nvals_; ++v) acc_[v] += tmp[v];
      tail_ += l1(tmp, nvals_);
      return;
    }
    for_each_child(b, [&](const Box<N>& c) { smooth(c, depth + 1); });
  }

  // Geometric descent toward the vertex nearest the singular/near point; the
  // current corner box's own quadrature value estimates the remaining mass.
  void graded(Box<N> b) {
    for (int depth = 0;; ++depth) {
      Complex tmp[kMaxVals] = {};
      gauss_into(b, tmp);
      const double est = l1(tmp, nvals_);
      if (admissible(b)) {
        for (int v = 0; v < nvals_; ++v) acc_[v] += tmp[v];
        return;
      }
      const double scale_now = std::max(l1(acc_.data(), nvals_), peak_);
      if (depth >= cfg_.max_depth ||
          est <= 0.05 * cfg_.eps_quad * std::max(scale_now, est)) {
        for (int v = 0; v < nvals_; ++v) acc_[v] += tmp[v];
        tail_ += est;
        return;
      }
      Box<N> corner;
      std::array<int, N> pick;
      for (int a = 0; a < N; ++a) {
        const double mid = 0.5 * (b.lo[a] + b.hi[a]);
        // keep the half nearer the origin
        const double dlo = std::max({b.lo[a], -mid, 0.0});
        const double dhi = std::max({mid, -b.hi[a], 0.0});
        pick[a] = dlo <= dhi ? 0 : 1;
      }
      for_each_child(b, [&](const Box<N>& c, const std::array<int, N>& which) {
        if (which == pick) {
          corner = c;
        } else {
          if (admissible(c))
            gauss_into(c, acc_.data());
          else
            smooth(c, 0);
        }
      });
      peak_ = std::max(peak_, l1(acc_.data(), nvals_));
      b = corner;
    }
  }

  template <class Fn>
  void for_each_child(const Box<N>& b, Fn&& fn) {
    std::array<double, N> mid;
    for (int a = 0; a < N; ++a) mid[a] = 0.5 * (b.lo[a] + b.hi[a]);
    const int total = 1 << N;
    for (int m = 0; m < total; ++m) {
      Box<N> c;
      std::array<int, N> which;
      for (int a = 0; a < N; ++a) {
        const int bit = (m >> a) & 1;
        which[a] = bit;
        c.lo[a] = bit ? mid[a] : b.lo[a];
        c.hi[a] = bit ? b.hi[a] : mid[a];
      }
      if constexpr (std::is_invocable_v<Fn, const Box<N>&,
                                        const std::array<int, N>&>)
        fn(c, which);
      else
        fn(c);
    }
  }

  double base2_;
  double k_;
  int nvals_;
  const WeightFn& weight_;
  const QuadConfig& cfg_;
  double eta_;
  const GaussRule& rule_;
  std::array<Complex, kMaxVals> acc_{};
  double tail_ = 0.0;
  double peak_ = 0.0;
};

// Split [p0, p1, ..., pm] kink points into subdivided interval list.
inline void kink_intervals(const std::vector<double>& pts, int subdivision,
                           std::vector<std::pair<double, double>>& out) {
  out.clear();
  for (size_t i = 0; i + 1 < pts.size(); ++i) {
    const double lo = pts[i], hi = pts[i + 1];
    for (int s = 0; s < subdivision; ++s) {
      const double a = lo + (hi - lo) * s / subdivision;
      const double b =
          (s + 1 == subdivision) ? hi : lo + (hi - lo) * (s + 1) / subdivision;
      out.emplace_back(a, b);
    }
  }
}

}  // namespace quad_detail

// Value layout of the 12 nonzero facet-pair integrals of a cell pair: index
// = 4*axis + 2*side_f + side_g, sides 0 = minus face, 1 = plus face of the
// respective cell along that axis. `delta` is the corner of the source cell
// minus the corner of the test cell.
inline std::array<Complex, 12> volume_pair_integrals(double h,
                                                     const Vec3& delta,
                                                     double k,
                                                     const QuadConfig& cfg) {
  using quad_detail::Box;
  auto weight = [&](const double* u, double* out) {
    double tri[3], ll[3][4];
    for (int a = 0; a < 3; ++a) {
      const double w = u[a] - delta[a];
      tri[a] = quad_detail::tri_overlap(w, h);
      for (int sf = 0; sf < 2; ++sf)
        for (int sg = 0; sg < 2; ++sg)
          ll[a][2 * sf + sg] = quad_detail::linlin_overlap(sf, sg, w, h);
    }
    for (int a = 0; a < 3; ++a) {
      const double other = tri[(a + 1) % 3] * tri[(a + 2) % 3];
      for (int c = 0; c < 4; ++c) out[4 * a + c] = ll[a][c] * other;
    }
  };
  quad_detail::BoxIntegrator<3, decltype(weight)> integ(0.0, k, 12, weight, cfg);

  std::array<std::vector<std::pair<double, double>>, 3> segs;
  for (int a = 0; a < 3; ++a) {
    std::vector<double> pts = {delta[a] - h, delta[a], delta[a] + h};
    quad_detail::kink_intervals(pts, cfg.subdivision, segs[a]);
  }
  for (const auto& sx : segs[0])
    for (const auto& sy : segs[1])
      for (const auto& sz : segs[2]) {
        Box<3> b;
        b.lo = {sx.first, sy.first, sz.first};
        b.hi = {sx.second, sy.second, sz.second};
        integ.add_box(b);
      }

  if (integ.tail() > cfg.eps_quad * std::max(integ.scale(), 1e-300))
    throw std::runtime_error("quadrature failure to reach tolerance");
  std::array<Complex, 12> out;
  for (int v = 0; v < 12; ++v) out[v] = integ.values()[v];
  return out;
}

// Raw double surface integral of the kernel over two boundary faces (no
// orientation signs, no 1/h^4 profile scaling). `delta_corner` is the lower
// corner of face g minus the lower corner of face f.
inline Complex surface_pair_integral(double h, int axis_f, int axis_g,
                                     const Vec3& delta_corner, double k,
                                     const QuadConfig& cfg) {
  using quad_detail::Box;
  Complex result(0.0, 0.0);
  if (axis_f == axis_g) {
    const int t1 = (axis_f + 1) % 3, t2 = (axis_f + 2) % 3;
    const double base = std::abs(delta_corner[axis_f]);
    const double d1 = delta_corner[t1], d2 = delta_corner[t2];
    auto weight = [&](const double* u, double* out) {
      out[0] = quad_detail::tri_overlap(u[0] - d1, h) *
               quad_detail::tri_overlap(u[1] - d2, h);
    };
    quad_detail::BoxIntegrator<2, decltype(weight)> integ(base, k, 1, weight,
                                                          cfg);
    std::array<std::vector<std::pair<double, double>>, 2> segs;
    {
      std::vector<double> p1 = {d1 - h, d1, d1 + h};
      std::vector<double> p2 = {d2 - h, d2, d2 + h};
      quad_detail::kink_intervals(p1, cfg.subdivision, segs[0]);
      quad_detail::kink_intervals(p2, cfg.subdivision, segs[1]);
    }
    for (const auto& s1 : segs[0])
      for (const auto& s2 : segs[1]) {
        Box<2> b;
        b.lo = {s1.first, s2.first};
        b.hi = {s1.second, s2.second};
        integ.add_box(b);
      }
    if (integ.tail() > cfg.eps_quad * std::max(integ.scale(), 1e-300))
      throw std::runtime_error("quadrature failure to reach tolerance");
    result = integ.values()[0];
  } else {
    // shared in-plane axis
    int t = 3 - axis_f - axis_g;
    const double dt = delta_corner[t];
    // u[0]: along axis_f (the source face extends, the test face is flat)
    // u[1]: along axis_g (test face extends, reversed orientation, |J|=1)
    // u[2]: along t (both extend -> triangular correlation)
    auto weight = [&](const double* u, double* out) {
      out[0] = quad_detail::tri_overlap(u[2] - dt, h);
    };
    quad_detail::BoxIntegrator<3, decltype(weight)> integ(0.0, k, 1, weight,
                                                          cfg);
    std::array<std::vector<std::pair<double, double>>, 3> segs;
    {
      std::vector<double> pf = {delta_corner[axis_f], delta_corner[axis_f] + h};
      std::vector<double> pg = {delta_corner[axis_g] - h, delta_corner[axis_g]};
      std::vector<double> pt = {dt - h, dt, dt + h};
      quad_detail::kink_intervals(pf, cfg.subdivision, segs[0]);
      quad_detail::kink_intervals(pg, cfg.subdivision, segs[1]);
      quad_detail::kink_intervals(pt, cfg.subdivision, segs[2]);
    }
    for (const auto& sf : segs[0])
      for (const auto& sg : segs[1])
        for (const auto& st : segs[2]) {
          Box<3> b;
          b.lo = {sf.first, sg.first, st.first};
          b.hi = {sf.second, sg.second, st.second};
          // remap so u[0] is axis_f, u[1] axis_g, u[2] axis t for the kernel
          integ.add_box(b);
        }
    if (integ.tail() > cfg.eps_quad * std::max(integ.scale(), 1e-300))
      throw std::runtime_error("quadrature failure to reach tolerance");
    result = integ.values()[0];
  }
  return result;
}

// 1-D phase moments over a cell edge [0,h]: integral of e^{-i kappa tau}
// against 1 (c0), the minus-face profile (h-tau)/h^3 (lin_minus), and the
// plus-face profile tau/h^3 (lin_plus).
struct LineMoments {
  Complex c0, lin_minus, lin_plus;
};

inline LineMoments line_phase_moments(double kappa, double h) {
  const Complex j(0.0, 1.0);
  const double z = kappa * h;
  Complex f1, f2;  // f1 = int_0^1 e^{-izs} ds, f2 = int_0^1 s e^{-izs} ds
  if (std::abs(z) < 0.5) {
    Complex term(1.0, 0.0);
    f1 = Complex(0.0, 0.0);
    f2 = Complex(0.0, 0.0);
    for (int n = 0; n < 40; ++n) {
      f1 += term / static_cast<double>(n + 1);
      f2 += term / static_cast<double>(n + 2);
      term *= -j * z / static_cast<double>(n + 1);
      if (std::abs(term) < 1e-18) break;
    }
  } else {
    const Complex e = std::exp(-j * z);
    f1 = (1.0 - e) / (j * z);
    f2 = (f1 - e) / (j * z);
  }
  LineMoments m;
  m.c0 = h * f1;
  const Complex B = h * h * f2;  // int tau e^{-i kappa tau}
  m.lin_plus = B / (h * h * h);
  m.lin_minus = (h * m.c0 - B) / (h * h * h);
  return m;
}

}  // namespace qrvie
