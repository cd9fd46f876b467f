#pragma once

// Rank-revealing compression of far interaction blocks.
//
// Each unordered far block pair is assembled once and factored by truncated
// column-pivoted Householder QR; the mirror block is applied through the
// transposed factors (the operator is complex symmetric). Diagonal atom
// blocks stay dense. One greedy schedule distributes assembly+factorization
// by a-priori dense cost m*n; a second schedule, built once from the realized
// storage costs, is reused verbatim by every matrix-vector product.

#include <Eigen/Dense>

#include <algorithm>
#include <complex>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <thread>
#include <vector>

#include "qrvie/geometry.hpp"
#include "qrvie/parallel.hpp"

namespace qrvie {

using MatrixXcd = Eigen::MatrixXcd;
using VectorXcd = Eigen::VectorXcd;
using Complex = std::complex<double>;

struct LowRankFactor {
  MatrixXcd Q;  // m x r, orthonormal columns
  MatrixXcd R;  // r x n, permutation already folded back
  int rank = 0;
};

// Truncated column-pivoted Householder QR, stopped at the smallest rank r
// with ||A - Q_r R_r||_F <= eps ||A||_F. The trailing-column norms are the
// exact residual by unitary invariance, so the stopping test is not an
// estimate.
inline LowRankFactor lowrank_qr(const MatrixXcd& A, double eps) {
  if (!(eps > 0.0) || !(eps < 1.0))
    throw std::invalid_argument("compression tolerance must be in (0,1)");
  const int m = static_cast<int>(A.rows());
  const int n = static_cast<int>(A.cols());
  const int kmax = std::min(m, n);

  LowRankFactor out;
  MatrixXcd B = A;
  std::vector<int> perm(n);
  for (int j = 0; j < n; ++j) perm[j] = j;
  Eigen::VectorXd colnorm2(n);
  for (int j = 0; j < n; ++j) colnorm2[j] = B.col(j).squaredNorm();
  const double total0 = colnorm2.sum();
  if (total0 == 0.0) {
    out.Q.resize(m, 0);
    out.R.resize(0, n);
    return out;
  }
  const double thresh2 = eps * eps * total0;

  std::vector<VectorXcd> reflectors;
  reflectors.reserve(kmax);
  double remaining = total0;
  int r = 0;
  for (int t = 0; t < kmax; ++t) {
    if (remaining <= thresh2) break;
    int piv = t;
    for (int j = t + 1; j < n; ++j)
      if (colnorm2[j] > colnorm2[piv]) piv = j;
    if (piv != t) {
      B.col(t).swap(B.col(piv));
      std::swap(colnorm2[t], colnorm2[piv]);
      std::swap(perm[t], perm[piv]);
    }

    VectorXcd x = B.col(t).segment(t, m - t);
    const double xnorm = x.norm();
    if (xnorm == 0.0) break;
    const Complex alpha = x[0];
    const Complex phase =
        std::abs(alpha) == 0.0 ? Complex(1.0, 0.0) : alpha / std::abs(alpha);
    const Complex beta = -phase * xnorm;
    VectorXcd v = x;
    v[0] -= beta;
    const double v2 = v.squaredNorm();
    if (v2 > 0.0) {
      const Eigen::RowVectorXcd proj =
          (2.0 / v2) * (v.adjoint() * B.block(t, t, m - t, n - t));
      B.block(t, t, m - t, n - t).noalias() -= v * proj;
    }
    B(t, t) = beta;
    if (t + 1 < m) B.col(t).segment(t + 1, m - t - 1).setZero();
    reflectors.push_back(std::move(v));
    r = t + 1;

    // exact trailing norms (full recompute: immune to downdating drift)
    remaining = 0.0;
    for (int j = t + 1; j < n; ++j) {
      colnorm2[j] = B.col(j).segment(t + 1, m - t - 1).squaredNorm();
      remaining += colnorm2[j];
    }
  }

  out.rank = r;
  out.Q = MatrixXcd::Identity(m, r);
  for (int i = r - 1; i >= 0; --i) {
    const VectorXcd& v = reflectors[i];
    const double v2 = v.squaredNorm();
    if (v2 == 0.0) continue;
    const Eigen::RowVectorXcd proj =
        (2.0 / v2) * (v.adjoint() * out.Q.block(i, 0, m - i, r));
    out.Q.block(i, 0, m - i, r).noalias() -= v * proj;
  }
  out.R.resize(r, n);
  for (int j = 0; j < n; ++j)
    out.R.col(perm[j]) = B.col(j).head(r);
  return out;
}

struct CompressedBlock {
  std::vector<int> row_atoms, col_atoms;
  int level = -1;  // quadtree level of the far pair; -1 for finest pairs
  bool dense = false;
  MatrixXcd Q, R;  // factored form
  MatrixXcd D;     // dense form when kept
  int rank = 0;

  int rows_np(int np) const { return np * static_cast<int>(row_atoms.size()); }
  int cols_np(int np) const { return np * static_cast<int>(col_atoms.size()); }
  long long stored(int np) const {
    const long long m = rows_np(np), n = cols_np(np);
    return dense ? m * n : (m + n) * rank;
  }
};

struct CompressedOperator {
  int n_atoms = 0;
  int np = 0;  // unknowns per atom
  std::vector<MatrixXcd> diag_blocks;
  std::vector<int> diag_index;  // atom -> entry in diag_blocks
  std::vector<CompressedBlock> blocks;
  int full_rank_blocks = 0;  // truncation never engaged (r = min(m,n))
  Schedule product_schedule;  // item i < n_atoms: diagonal; else block i-n_atoms
  int n_workers = 1;
  bool deterministic = true;

  int n_dofs() const { return n_atoms * np; }

  long long stored_near() const {
    return static_cast<long long>(n_atoms) * np * np;
  }
  long long stored_far() const {
    long long s = 0;
    for (const auto& b : blocks) s += b.stored(np);
    return s;
  }

  VectorXcd apply(const VectorXcd& x) const {
    if (x.size() != n_dofs())
      throw std::invalid_argument("operand size mismatch");
    const int nw = std::max(1, product_schedule.n_workers);

    auto gather = [&](const std::vector<int>& atoms) {
      VectorXcd g(np * atoms.size());
      for (size_t a = 0; a < atoms.size(); ++a)
        g.segment(np * a, np) = x.segment(np * atoms[a], np);
      return g;
    };
    auto scatter = [&](VectorXcd& y, const std::vector<int>& atoms,
                       const VectorXcd& v) {
      for (size_t a = 0; a < atoms.size(); ++a)
        y.segment(np * atoms[a], np) += v.segment(np * a, np);
    };

    auto run_item = [&](VectorXcd& y, int item) {
      if (item < n_atoms) {
        y.segment(np * item, np).noalias() +=
            diag_blocks[diag_index[item]] * x.segment(np * item, np);
        return;
      }
      const CompressedBlock& b = blocks[item - n_atoms];
      const VectorXcd xc = gather(b.col_atoms);
      const VectorXcd xr = gather(b.row_atoms);
      if (b.dense) {
        scatter(y, b.row_atoms, b.D * xc);
        scatter(y, b.col_atoms, b.D.transpose() * xr);
      } else {
        // forward block, then its mirror through the transposed factors
        scatter(y, b.row_atoms, b.Q * (b.R * xc));
        scatter(y, b.col_atoms, b.R.transpose() * (b.Q.transpose() * xr));
      }
    };

    if (deterministic || nw == 1) {
      // per-worker partials, merged in fixed worker order
      std::vector<VectorXcd> partial(nw, VectorXcd::Zero(n_dofs()));
      auto work = [&](int w) {
        for (int item : product_schedule.items[w]) run_item(partial[w], item);
      };
      if (nw == 1) {
        work(0);
      } else {
        std::vector<std::thread> pool;
        for (int w = 1; w < nw; ++w) pool.emplace_back(work, w);
        work(0);
        for (auto& t : pool) t.join();
      }
      VectorXcd y = VectorXcd::Zero(n_dofs());
      for (int w = 0; w < nw; ++w) y += partial[w];
      return y;
    }

    // merge-on-completion mode
    VectorXcd y = VectorXcd::Zero(n_dofs());
    std::mutex merge_mu;
    std::vector<std::thread> pool;
    auto work = [&](int w) {
      VectorXcd p = VectorXcd::Zero(n_dofs());
      for (int item : product_schedule.items[w]) run_item(p, item);
      std::lock_guard<std::mutex> lock(merge_mu);
      y += p;
    };
    for (int w = 1; w < nw; ++w) pool.emplace_back(work, w);
    work(0);
    for (auto& t : pool) t.join();
    return y;
  }
};

using BlockProvider = std::function<MatrixXcd(const std::vector<int>&,
                                              const std::vector<int>&)>;

struct CompressOptions {
  double eps = 1e-4;       // truncation tolerance; ignored when keep_dense
  bool keep_dense = false; // retain every far block dense (exact mode)
  int n_workers = 1;
  bool deterministic = true;
};

inline CompressedOperator build_compressed_operator(
    const BlockTree& tree, const Layout& lay, const BlockProvider& provider,
    const MatrixXcd& diag_block, const CompressOptions& opts) {
  CompressedOperator op;
  op.n_atoms = static_cast<int>(lay.centers.size());
  op.np = static_cast<int>(diag_block.rows());
  if (diag_block.rows() != diag_block.cols())
    throw std::invalid_argument("diagonal block must be square");
  op.diag_blocks = {diag_block};
  op.diag_index.assign(op.n_atoms, 0);
  op.n_workers = opts.n_workers;
  op.deterministic = opts.deterministic;

  // interaction list: far pairs level by level, then finest pairs (unordered)
  for (size_t lvl = 0; lvl < tree.far_pairs.size(); ++lvl) {
    for (const auto& [bi, bj] : tree.far_pairs[lvl]) {
      CompressedBlock blk;
      blk.level = static_cast<int>(lvl);
      blk.row_atoms = tree.levels[lvl].blocks[bi].atoms;
      blk.col_atoms = tree.levels[lvl].blocks[bj].atoms;
      op.blocks.push_back(std::move(blk));
    }
  }
  for (const auto& [a, b] : tree.finest_pairs) {
    if (a >= b) continue;  // ordered list covers both directions
    CompressedBlock blk;
    blk.level = -1;
    blk.row_atoms = {a};
    blk.col_atoms = {b};
    op.blocks.push_back(std::move(blk));
  }

  // parallel assembly + factorization, scheduled by a-priori dense cost
  std::vector<double> asm_weights(op.blocks.size());
  for (size_t i = 0; i < op.blocks.size(); ++i)
    asm_weights[i] = static_cast<double>(op.blocks[i].rows_np(op.np)) *
                     op.blocks[i].cols_np(op.np);
  Schedule asm_schedule = make_schedule(asm_weights, opts.n_workers);
  std::vector<int> full_rank(op.blocks.size(), 0);
  run_on_schedule(asm_schedule, [&](int i) {
    CompressedBlock& blk = op.blocks[i];
    MatrixXcd Z = provider(blk.row_atoms, blk.col_atoms);
    if (Z.rows() != blk.rows_np(op.np) || Z.cols() != blk.cols_np(op.np))
      throw std::runtime_error("block provider returned wrong shape");
    if (opts.keep_dense) {
      blk.dense = true;
      blk.D = std::move(Z);
      blk.rank = std::min(blk.D.rows(), blk.D.cols());
      return;
    }
    LowRankFactor f = lowrank_qr(Z, opts.eps);
    blk.rank = f.rank;
    if (f.rank == std::min(Z.rows(), Z.cols())) full_rank[i] = 1;
    const long long m = Z.rows(), n = Z.cols();
    if (static_cast<long long>(f.rank) * (m + n) >= m * n) {
      blk.dense = true;  // factored form would not pay off
      blk.D = std::move(Z);
    } else {
      blk.Q = std::move(f.Q);
      blk.R = std::move(f.R);
    }
  });
  for (int fr : full_rank) op.full_rank_blocks += fr;

  // product schedule from realized storage costs, built once, reused per apply
  std::vector<double> prod_weights;
  prod_weights.reserve(op.n_atoms + op.blocks.size());
  for (int a = 0; a < op.n_atoms; ++a)
    prod_weights.push_back(static_cast<double>(op.np) * op.np);
  for (const auto& b : op.blocks)
    prod_weights.push_back(static_cast<double>(b.stored(op.np)));
  op.product_schedule = make_schedule(prod_weights, opts.n_workers);
  return op;
}

struct CompressionGain {
  long long stored_far = 0;
  long long stored_near = 0;
  long long dense_total = 0;
  double gain = 1.0;
};

inline CompressionGain compression_gain(const CompressedOperator& op) {
  CompressionGain g;
  g.stored_far = op.stored_far();
  g.stored_near = op.stored_near();
  const long long nd = op.n_dofs();
  g.dense_total = nd * nd;
  g.gain = static_cast<double>(g.dense_total) /
           static_cast<double>(g.stored_far + g.stored_near);
  return g;
}

// Materialize the compressed operator as a dense matrix: diagonal blocks,
// every stored off-diagonal block, and its transpose mirror. Used to check
// that the block partition covers the full matrix exactly once.
inline MatrixXcd reconstruct_dense(const CompressedOperator& op) {
  const int nd = op.n_dofs();
  MatrixXcd Z = MatrixXcd::Zero(nd, nd);
  for (int a = 0; a < op.n_atoms; ++a)
    Z.block(a * op.np, a * op.np, op.np, op.np) =
        op.diag_blocks[op.diag_index[a]];
  for (const auto& b : op.blocks) {
    const MatrixXcd M = b.dense ? b.D : MatrixXcd(b.Q * b.R);
    for (size_t i = 0; i < b.row_atoms.size(); ++i)
      for (size_t j = 0; j < b.col_atoms.size(); ++j) {
        const auto blk =
            M.block(i * op.np, j * op.np, op.np, op.np);
        Z.block(b.row_atoms[i] * op.np, b.col_atoms[j] * op.np, op.np,
                op.np) += blk;
        Z.block(b.col_atoms[j] * op.np, b.row_atoms[i] * op.np, op.np,
                op.np) += blk.transpose();
      }
  }
  return Z;
}

// Relative blockwise-product error against a dense oracle for the probe
// vector (1+i) * ones.
inline double product_precision(const CompressedOperator& op,
                                const MatrixXcd& dense) {
  if (dense.rows() == 0 || dense.rows() != dense.cols() ||
      dense.rows() != op.n_dofs())
    throw std::invalid_argument("oracle required for product precision");
  VectorXcd u = VectorXcd::Constant(op.n_dofs(), Complex(1.0, 1.0));
  const VectorXcd ref = dense * u;
  const double refn = ref.norm();
  if (refn == 0.0) throw std::runtime_error("zero reference product");
  return (op.apply(u) - ref).norm() / refn;
}

}  // namespace qrvie
