#pragma once

// Left-preconditioned full GMRES (no restarts) with modified Gram-Schmidt
// Arnoldi and Givens-rotation least squares, plus the per-atom block-diagonal
// preconditioner. The recorded history is the relative preconditioned
// residual per iteration, nonincreasing by construction; the true
// (unpreconditioned) residual of the returned iterate is evaluated once at
// exit with one extra operator application.

#include <Eigen/Dense>
#include <Eigen/LU>

#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace qrvie {

using MatrixXcd = Eigen::MatrixXcd;
using VectorXcd = Eigen::VectorXcd;
using Complex = std::complex<double>;

class BlockDiagonalPreconditioner {
 public:
  BlockDiagonalPreconditioner() = default;

  // `blocks` holds the distinct diagonal blocks (identical atoms share one
  // factorization); `atom_index` maps each atom to its block.
  static BlockDiagonalPreconditioner factor(
      const std::vector<MatrixXcd>& blocks, const std::vector<int>& atom_index) {
    BlockDiagonalPreconditioner p;
    if (blocks.empty() || atom_index.empty())
      throw std::invalid_argument("preconditioner needs at least one block");
    p.np_ = static_cast<int>(blocks[0].rows());
    for (size_t bi = 0; bi < blocks.size(); ++bi) {
      const MatrixXcd& B = blocks[bi];
      if (B.rows() != B.cols() || B.rows() != p.np_)
        throw std::invalid_argument("preconditioner blocks must be square and uniform");
      Eigen::PartialPivLU<MatrixXcd> lu(B);
      const Eigen::VectorXcd d = lu.matrixLU().diagonal();
      const double dmax = d.cwiseAbs().maxCoeff();
      const double dmin = d.cwiseAbs().minCoeff();
      if (dmax == 0.0 || dmin < 1e-14 * dmax)
        throw std::runtime_error("preconditioner breakdown at block " +
                                 std::to_string(bi));
      p.lus_.push_back(std::move(lu));
    }
    for (int idx : atom_index)
      if (idx < 0 || idx >= static_cast<int>(p.lus_.size()))
        throw std::invalid_argument("preconditioner atom index out of range");
    p.index_ = atom_index;
    return p;
  }

  int n_dofs() const { return np_ * static_cast<int>(index_.size()); }
  int block_size() const { return np_; }
  int n_factorizations() const { return static_cast<int>(lus_.size()); }

  VectorXcd solve(const VectorXcd& v) const {
    if (v.size() != n_dofs())
      throw std::invalid_argument("preconditioner operand size mismatch");
    VectorXcd y(v.size());
    for (size_t a = 0; a < index_.size(); ++a)
      y.segment(np_ * a, np_) = lus_[index_[a]].solve(v.segment(np_ * a, np_));
    return y;
  }

 private:
  std::vector<Eigen::PartialPivLU<MatrixXcd>> lus_;
  std::vector<int> index_;
  int np_ = 0;
};

struct GmresResult {
  VectorXcd x;
  std::vector<double> history;  // history[0] = 1; relative preconditioned residuals
  int iterations = 0;
  bool converged = false;
  double true_residual = std::numeric_limits<double>::quiet_NaN();
};

using ApplyFn = std::function<VectorXcd(const VectorXcd&)>;

inline GmresResult gmres(const ApplyFn& apply_op,
                         const BlockDiagonalPreconditioner* precond,
                         const VectorXcd& b, double rel_tol = 1e-4,
                         int max_iter = 5000) {
  if (!(rel_tol > 0.0)) throw std::invalid_argument("solver tolerance must be positive");
  if (max_iter < 1) throw std::invalid_argument("iteration cap must be positive");

  GmresResult res;
  const double bnorm = b.norm();
  if (bnorm == 0.0) {
    res.x = VectorXcd::Zero(b.size());
    res.history = {0.0};
    res.converged = true;
    res.true_residual = 0.0;
    return res;
  }

  auto prec = [&](const VectorXcd& v) {
    return precond ? precond->solve(v) : v;
  };

  const VectorXcd r0 = prec(b);
  const double beta = r0.norm();
  if (!std::isfinite(beta) || beta == 0.0)
    throw std::runtime_error("gmres breakdown (non-finite residual) at iteration 0");

  std::vector<VectorXcd> V;
  V.push_back(r0 / beta);
  std::vector<std::vector<Complex>> Rcols;  // rotated Hessenberg columns
  std::vector<double> cs;
  std::vector<Complex> sn;
  std::vector<Complex> g = {Complex(beta, 0.0)};
  res.history = {1.0};

  int it = 0;
  while (it < max_iter) {
    ++it;
    VectorXcd w = prec(apply_op(V.back()));
    std::vector<Complex> h(it + 1);
    for (int i = 0; i < it; ++i) {
      h[i] = V[i].dot(w);  // conjugated inner product
      w -= h[i] * V[i];
    }
    const double hnext = w.norm();
    bool finite = std::isfinite(hnext);
    for (int i = 0; i < it && finite; ++i)
      finite = std::isfinite(h[i].real()) && std::isfinite(h[i].imag());
    if (!finite)
      throw std::runtime_error(
          "gmres breakdown (non-finite residual) at iteration " +
          std::to_string(it));

    for (int i = 0; i + 1 < it; ++i) {
      const Complex t = cs[i] * h[i] + sn[i] * h[i + 1];
      h[i + 1] = -std::conj(sn[i]) * h[i] + cs[i] * h[i + 1];
      h[i] = t;
    }
    // new rotation eliminating the subdiagonal hnext (real, nonnegative)
    const Complex a = h[it - 1];
    const double r = std::sqrt(std::norm(a) + hnext * hnext);
    double c_new;
    Complex s_new;
    if (r == 0.0) {
      c_new = 1.0;
      s_new = Complex(0.0, 0.0);
    } else if (std::abs(a) == 0.0) {
      c_new = 0.0;
      s_new = Complex(1.0, 0.0);
    } else {
      c_new = std::abs(a) / r;
      s_new = (a / std::abs(a)) * (hnext / r);
    }
    cs.push_back(c_new);
    sn.push_back(s_new);
    h[it - 1] = c_new * a + s_new * hnext;
    g.push_back(-std::conj(s_new) * g[it - 1]);
    g[it - 1] = c_new * g[it - 1];

    h.resize(it);
    Rcols.push_back(std::move(h));

    const double rel = std::abs(g[it]) / beta;
    res.history.push_back(rel);
    if (rel <= rel_tol) {
      res.converged = true;
      break;
    }
    if (hnext == 0.0) break;  // Krylov space exhausted without convergence
    V.push_back(w / hnext);
  }

  // back substitution on the rotated upper-triangular system
  const int k = static_cast<int>(Rcols.size());
  VectorXcd y = VectorXcd::Zero(k);
  for (int i = k - 1; i >= 0; --i) {
    Complex s = g[i];
    for (int j = i + 1; j < k; ++j) s -= Rcols[j][i] * y[j];
    const Complex d = Rcols[i][i];
    if (std::abs(d) == 0.0)
      throw std::runtime_error(
          "gmres breakdown (non-finite residual) at iteration " +
          std::to_string(i + 1));
    y[i] = s / d;
  }
  res.x = VectorXcd::Zero(b.size());
  for (int i = 0; i < k; ++i) res.x += y[i] * V[i];
  res.iterations = static_cast<int>(res.history.size()) - 1;
  res.true_residual = (apply_op(res.x) - b).norm() / bnorm;
  return res;
}

// Relative error of a solution against a reference; the score is its negated
// decimal logarithm, saturating to +infinity at exact agreement.
inline double relative_error(const VectorXcd& sol, const VectorXcd& ref) {
  if (sol.size() != ref.size())
    throw std::invalid_argument("solution/reference size mismatch");
  const double rn = ref.norm();
  if (rn == 0.0) throw std::invalid_argument("zero reference norm");
  return (sol - ref).norm() / rn;
}

inline double accuracy_score(double relative_err) {
  if (relative_err == 0.0) return std::numeric_limits<double>::infinity();
  return -std::log10(relative_err);
}

}  // namespace qrvie
