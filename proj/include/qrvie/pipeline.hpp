#pragma once

// Scenario configuration, end-to-end solves, experiments, and deterministic
// text reports. Every emitted number is formatted with %.17g so reruns of an
// identical configuration produce byte-identical files; reports carry no
// timestamps, paths, or machine identifiers.

#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "qrvie/assembly.hpp"
#include "qrvie/basis.hpp"
#include "qrvie/compression.hpp"
#include "qrvie/geometry.hpp"
#include "qrvie/parallel.hpp"
#include "qrvie/quadrature.hpp"
#include "qrvie/solver.hpp"

namespace qrvie {

struct Scenario {
  // geometry
  int n_atoms = 1;
  double atom_radius = 100e-9;  // meters
  double voxel = 90e-9;         // meters
  // material
  double sigma = 0.0;
  Complex chi{-10.428, 1.513};
  // excitation (plane wave)
  double frequency = 5e14;  // Hz
  Vec3 E0 = Vec3::UnitX();
  Vec3 direction = Vec3::UnitZ();
  // block tree
  int level1_blocks = 4;
  // compression
  double eps = 1e-4;
  bool keep_dense = false;
  // solver
  double rel_tol = 1e-4;
  int max_iter = 5000;
  bool precondition = true;
  // quadrature
  QuadConfig quad{};
  // execution
  int n_workers = 1;
  bool deterministic = true;
  // reference oracle
  int dense_cap = 5000;

  double omega() const { return 2.0 * M_PI * frequency; }
  Material material() const { return Material{sigma, chi}; }
  Excitation excitation() const { return Excitation{omega(), E0, direction}; }
};

inline void validate_scenario(const Scenario& sc) {
  if (sc.n_atoms < 1) throw std::invalid_argument("scenario: need at least one atom");
  if (!(sc.atom_radius > 0.0)) throw std::invalid_argument("scenario: atom radius must be positive");
  if (!(sc.voxel > 0.0)) throw std::invalid_argument("scenario: voxel size must be positive");
  if (!(sc.frequency > 0.0)) throw std::invalid_argument("scenario: frequency must be positive");
  if (sc.sigma < 0.0) throw std::invalid_argument("scenario: conductivity must be nonnegative");
  const Complex contrast = sc.sigma + Complex(0.0, 1.0) * sc.omega() *
                                          vacuum_permittivity * sc.chi;
  if (std::abs(contrast) == 0.0)
    throw std::invalid_argument("scenario: material contrast vanishes");
  if (!sc.keep_dense && !(sc.eps > 0.0 && sc.eps < 1.0))
    throw std::invalid_argument("scenario: compression tolerance must be in (0,1)");
  if (!(sc.rel_tol > 0.0)) throw std::invalid_argument("scenario: solver tolerance must be positive");
  if (sc.max_iter < 1) throw std::invalid_argument("scenario: iteration cap must be positive");
  if (sc.level1_blocks < 1) throw std::invalid_argument("scenario: level-1 grid must be at least 1");
  if (sc.n_workers < 1) throw std::invalid_argument("scenario: worker count must be positive");
  if (sc.quad.gauss_order < 1 || sc.quad.gauss_order > 31)
    throw std::invalid_argument("scenario: gauss order out of range");
  if (!(sc.quad.eps_quad > 0.0)) throw std::invalid_argument("scenario: quadrature tolerance must be positive");
  if (sc.quad.subdivision < 1) throw std::invalid_argument("scenario: subdivision must be positive");
  if (sc.dense_cap < 1) throw std::invalid_argument("scenario: dense cap must be positive");
}

// Geometry, basis, layout, interaction tree, and the assembler bound to them.
// Heap-only: the assembler keeps references into this object.
struct Problem {
  Scenario sc;
  Mesh mesh;
  BasisSet basis;
  Layout layout;
  BlockTree tree;
  std::optional<BlockAssembler> assembler;

  Problem(const Problem&) = delete;
  Problem& operator=(const Problem&) = delete;

  static std::unique_ptr<Problem> build(const Scenario& sc) {
    validate_scenario(sc);
    auto p = std::unique_ptr<Problem>(new Problem());
    p->sc = sc;
    p->mesh = build_voxel_sphere(sc.atom_radius, sc.voxel);
    p->basis = build_loop_star(p->mesh);
    if (p->basis.empty)
      throw std::runtime_error("empty basis: mesh has no interior facet");
    p->layout = vogel_spiral(sc.n_atoms, sc.atom_radius);

    // identical copies must not overlap: compare per-axis center separation
    // against the mesh bounding-cube extent
    double extent = 0.0;
    for (int c = 0; c < p->mesh.n_cells(); ++c)
      for (int ax = 0; ax < 3; ++ax) {
        extent = std::max(extent, std::abs(p->mesh.cell_corner(c)[ax]));
        extent = std::max(extent,
                          std::abs(p->mesh.cell_corner(c)[ax] + p->mesh.voxel));
      }
    for (size_t i = 0; i < p->layout.centers.size(); ++i)
      for (size_t j = i + 1; j < p->layout.centers.size(); ++j) {
        const Vec3 d = p->layout.centers[j] - p->layout.centers[i];
        if (d.cwiseAbs().maxCoeff() < 2.0 * extent)
          throw std::runtime_error("overlapping atoms in layout");
      }

    p->tree = build_block_tree(p->layout, sc.level1_blocks);
    classify_interactions(p->tree);
    p->assembler.emplace(p->mesh, p->basis, sc.material(), sc.excitation(),
                         sc.quad);
    return p;
  }

 private:
  Problem() = default;
};

// Thread-safe memo for assembled blocks, reused across compression
// tolerances within one experiment.
class CachingProvider {
 public:
  CachingProvider(const BlockAssembler& assembler, const Layout& layout)
      : assembler_(assembler), layout_(layout) {}

  MatrixXcd operator()(const std::vector<int>& rows,
                       const std::vector<int>& cols) {
    const Key key{rows, cols};
    {
      std::lock_guard<std::mutex> lock(mu_);
      auto it = cache_.find(key);
      if (it != cache_.end()) return it->second;
    }
    MatrixXcd Z = assembler_.group_block(layout_, rows, cols);
    std::lock_guard<std::mutex> lock(mu_);
    return cache_.emplace(key, std::move(Z)).first->second;
  }

 private:
  using Key = std::pair<std::vector<int>, std::vector<int>>;
  const BlockAssembler& assembler_;
  const Layout& layout_;
  std::map<Key, MatrixXcd> cache_;
  std::mutex mu_;
};

struct LedgerRow {
  int level = -1;  // -1: finest pair
  int m = 0, n = 0, rank = 0;
  long long stored = 0;
  bool dense = false;
  std::vector<int> row_atoms, col_atoms;
};

struct SolveRun {
  int n_atoms = 0, np = 0, unknowns = 0;
  int n_loops = 0;  // leading loop columns within each atom's unknown block
  double eps = 0.0;
  bool keep_dense = false;
  CompressionGain gain;
  int full_rank_blocks = 0;
  std::vector<LedgerRow> ledger;
  GmresResult iteration;
  VectorXcd rhs, currents;
  BalanceStats count_stats, memory_stats;
  int n_workers = 1;
  bool deterministic = true;
  // oracle metrics (NaN when no dense reference was computed)
  bool oracle = false;
  double product_error = std::numeric_limits<double>::quiet_NaN();
  double solution_error = std::numeric_limits<double>::quiet_NaN();
};

inline CompressedOperator build_operator(Problem& p, double eps,
                                         bool keep_dense,
                                         const BlockProvider& provider) {
  CompressOptions opts;
  opts.eps = eps;
  opts.keep_dense = keep_dense;
  opts.n_workers = p.sc.n_workers;
  opts.deterministic = p.sc.deterministic;
  return build_compressed_operator(p.tree, p.layout, provider,
                                   p.assembler->self_block(), opts);
}

inline std::vector<LedgerRow> operator_ledger(const CompressedOperator& op) {
  std::vector<LedgerRow> rows;
  rows.reserve(op.blocks.size());
  for (const auto& b : op.blocks) {
    LedgerRow r;
    r.level = b.level;
    r.m = b.rows_np(op.np);
    r.n = b.cols_np(op.np);
    r.rank = b.rank;
    r.stored = b.stored(op.np);
    r.dense = b.dense;
    r.row_atoms = b.row_atoms;
    r.col_atoms = b.col_atoms;
    rows.push_back(std::move(r));
  }
  return rows;
}

inline SolveRun run_solve(Problem& p, bool with_oracle,
                          const BlockProvider* provider_override = nullptr) {
  const Scenario& sc = p.sc;
  BlockProvider provider =
      provider_override
          ? *provider_override
          : BlockProvider([&](const std::vector<int>& r,
                              const std::vector<int>& c) {
              return p.assembler->group_block(p.layout, r, c);
            });

  CompressedOperator op = build_operator(p, sc.eps, sc.keep_dense, provider);

  SolveRun run;
  run.n_atoms = op.n_atoms;
  run.np = op.np;
  run.n_loops = p.basis.n_loops;
  run.unknowns = op.n_dofs();
  run.eps = sc.eps;
  run.keep_dense = sc.keep_dense;
  run.gain = compression_gain(op);
  run.full_rank_blocks = op.full_rank_blocks;
  run.ledger = operator_ledger(op);
  run.n_workers = sc.n_workers;
  run.deterministic = sc.deterministic;

  std::vector<double> counts(op.product_schedule.n_workers);
  for (int w = 0; w < op.product_schedule.n_workers; ++w)
    counts[w] = static_cast<double>(op.product_schedule.items[w].size());
  run.count_stats = balance_stats(counts);
  run.memory_stats = balance_stats(op.product_schedule.loads);

  run.rhs = p.assembler->excitation_vector(p.layout);

  std::optional<BlockDiagonalPreconditioner> precond;
  if (sc.precondition)
    precond = BlockDiagonalPreconditioner::factor(
        {p.assembler->self_block()}, std::vector<int>(op.n_atoms, 0));

  run.iteration = gmres([&](const VectorXcd& x) { return op.apply(x); },
                        precond ? &*precond : nullptr, run.rhs, sc.rel_tol,
                        sc.max_iter);
  run.currents = run.iteration.x;

  if (with_oracle) {
    const MatrixXcd Z = p.assembler->dense_matrix(p.layout, sc.dense_cap);
    run.oracle = true;
    run.product_error = product_precision(op, Z);
    const VectorXcd ref = Z.partialPivLu().solve(run.rhs);
    run.solution_error = relative_error(run.currents, ref);
  }
  return run;
}

// ---------------------------------------------------------------------------
// Experiments

struct ConsistencyRow {
  double eps = 0.0;
  double product_error = 0.0, product_score = 0.0;
  double solution_error = 0.0, solution_score = 0.0;
  double gain = 0.0;
  int iterations = 0;
};

// Sweep the compression tolerance on a fixed scenario; assembly is shared
// across tolerances through the block cache, and the dense reference is
// factored once.
inline std::vector<ConsistencyRow> run_experiment_consistency(
    Problem& p, const std::vector<double>& eps_list) {
  if (eps_list.empty())
    throw std::invalid_argument("consistency experiment: empty tolerance list");
  CachingProvider cache(*p.assembler, p.layout);
  BlockProvider provider = [&](const std::vector<int>& r,
                               const std::vector<int>& c) { return cache(r, c); };

  const MatrixXcd Z = p.assembler->dense_matrix(p.layout, p.sc.dense_cap);
  const VectorXcd rhs = p.assembler->excitation_vector(p.layout);
  const VectorXcd ref = Z.partialPivLu().solve(rhs);

  std::optional<BlockDiagonalPreconditioner> precond;
  if (p.sc.precondition)
    precond = BlockDiagonalPreconditioner::factor(
        {p.assembler->self_block()},
        std::vector<int>(p.layout.centers.size(), 0));

  std::vector<ConsistencyRow> rows;
  for (double eps : eps_list) {
    if (!(eps > 0.0 && eps < 1.0))
      throw std::invalid_argument("consistency experiment: tolerance must be in (0,1)");
    CompressedOperator op = build_operator(p, eps, false, provider);
    ConsistencyRow row;
    row.eps = eps;
    row.product_error = product_precision(op, Z);
    row.product_score = accuracy_score(row.product_error);
    GmresResult g = gmres([&](const VectorXcd& x) { return op.apply(x); },
                          precond ? &*precond : nullptr, rhs, p.sc.rel_tol,
                          p.sc.max_iter);
    row.solution_error = relative_error(g.x, ref);
    row.solution_score = accuracy_score(row.solution_error);
    row.gain = compression_gain(op).gain;
    row.iterations = g.iterations;
    rows.push_back(row);
  }
  return rows;
}

struct ScalingRow {
  int n_atoms = 0;
  int unknowns = 0;
  double eps = 0.0;
  double gain = 0.0;
  int iterations = 0;
  bool converged = false;
};

// One row per (atom count, tolerance) combination. Assembled blocks are
// cached per atom count and reused across tolerances.
inline std::vector<ScalingRow> run_experiment_scaling(
    const Scenario& base, const std::vector<int>& atom_counts,
    const std::vector<double>& eps_list) {
  if (atom_counts.empty())
    throw std::invalid_argument("scaling experiment: empty atom-count list");
  if (eps_list.empty())
    throw std::invalid_argument("scaling experiment: empty tolerance list");
  std::vector<ScalingRow> rows;
  for (int n : atom_counts) {
    Scenario sc = base;
    sc.n_atoms = n;
    auto p = Problem::build(sc);
    CachingProvider cache(*p->assembler, p->layout);
    BlockProvider provider = [&](const std::vector<int>& r,
                                 const std::vector<int>& c) {
      return cache(r, c);
    };
    for (double eps : eps_list) {
      sc.eps = eps;
      p->sc.eps = eps;
      SolveRun run = run_solve(*p, false, &provider);
      ScalingRow row;
      row.n_atoms = n;
      row.unknowns = run.unknowns;
      row.eps = eps;
      row.gain = run.gain.gain;
      row.iterations = run.iteration.iterations;
      row.converged = run.iteration.converged;
      rows.push_back(row);
    }
  }
  return rows;
}

struct SplitRow {
  double eps = 0.0;
  double err_whole = 0.0, err_split = 0.0;
  double gain_whole = 0.0, gain_split = 0.0;
  int rank_whole = 0, rank_a = 0, rank_b = 0;
};

// Factor the coupling block of a two-atom scenario once whole and once with
// the source unknowns split into two spatial half-blocks.
inline std::vector<SplitRow> run_experiment_split(
    Problem& p, const std::vector<double>& eps_list) {
  if (p.layout.centers.size() != 2)
    throw std::invalid_argument("split experiment requires exactly two atoms");
  if (eps_list.empty())
    throw std::invalid_argument("split experiment: empty tolerance list");

  const MatrixXcd Z =
      p.assembler->pair_block(p.layout.centers[0], p.layout.centers[1]);
  const double zn = Z.norm();

  // split the source atom's unknowns by edge midpoint along the dominant
  // center-offset axis
  const Vec3 d = p.layout.centers[1] - p.layout.centers[0];
  int axis = 0;
  for (int a = 1; a < 3; ++a)
    if (std::abs(d[a]) > std::abs(d[axis])) axis = a;
  std::vector<int> half_a, half_b;
  const BasisSet& basis = p.basis;
  for (int kcol = 0; kcol < basis.n_dofs(); ++kcol) {
    const int edge = kcol < basis.n_loops
                         ? basis.loop_edges[kcol]
                         : basis.star_edges[kcol - basis.n_loops];
    if (p.mesh.edge_midpoint(edge)[axis] <= 0.0)
      half_a.push_back(kcol);
    else
      half_b.push_back(kcol);
  }
  if (half_a.empty() || half_b.empty())
    throw std::runtime_error("split experiment: degenerate half-blocks");

  MatrixXcd Za(Z.rows(), half_a.size()), Zb(Z.rows(), half_b.size());
  for (size_t i = 0; i < half_a.size(); ++i) Za.col(i) = Z.col(half_a[i]);
  for (size_t i = 0; i < half_b.size(); ++i) Zb.col(i) = Z.col(half_b[i]);

  const double m = static_cast<double>(Z.rows());
  const double n = static_cast<double>(Z.cols());
  std::vector<SplitRow> rows;
  for (double eps : eps_list) {
    if (!(eps > 0.0 && eps < 1.0))
      throw std::invalid_argument("split experiment: tolerance must be in (0,1)");
    LowRankFactor w = lowrank_qr(Z, eps);
    LowRankFactor a = lowrank_qr(Za, eps);
    LowRankFactor b = lowrank_qr(Zb, eps);
    SplitRow row;
    row.eps = eps;
    row.rank_whole = w.rank;
    row.rank_a = a.rank;
    row.rank_b = b.rank;
    row.err_whole = (Z - w.Q * w.R).norm() / zn;
    const double ea = (Za - a.Q * a.R).squaredNorm();
    const double eb = (Zb - b.Q * b.R).squaredNorm();
    row.err_split = std::sqrt(ea + eb) / zn;
    const double na = static_cast<double>(half_a.size());
    const double nb = static_cast<double>(half_b.size());
    const double stored_whole = (m + n) * w.rank;
    const double stored_split = (m + na) * a.rank + (m + nb) * b.rank;
    row.gain_whole = stored_whole > 0.0
                         ? m * n / stored_whole
                         : std::numeric_limits<double>::infinity();
    row.gain_split = stored_split > 0.0
                         ? m * n / stored_split
                         : std::numeric_limits<double>::infinity();
    rows.push_back(row);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Deterministic text output

inline std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}
inline std::string fmt(long long x) { return std::to_string(x); }
inline std::string fmt(int x) { return std::to_string(x); }

inline void write_text(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << body;
}

inline std::string render_report(const Scenario& sc, const SolveRun& run) {
  std::ostringstream os;
  auto kv = [&](const std::string& key, const std::string& val) {
    os << key << " " << val << "\n";
  };
  kv("n_atoms", fmt(run.n_atoms));
  kv("unknowns_per_atom", fmt(run.np));
  kv("unknowns", fmt(run.unknowns));
  kv("frequency", fmt(sc.frequency));
  kv("atom_radius", fmt(sc.atom_radius));
  kv("voxel", fmt(sc.voxel));
  kv("eps", fmt(run.eps));
  kv("keep_dense", fmt(static_cast<int>(run.keep_dense)));
  kv("stored_far", fmt(run.gain.stored_far));
  kv("stored_near", fmt(run.gain.stored_near));
  kv("dense_coeffs", fmt(run.gain.dense_total));
  kv("compression_gain", fmt(run.gain.gain));
  kv("full_rank_blocks", fmt(run.full_rank_blocks));
  kv("workers", fmt(run.n_workers));
  kv("deterministic", fmt(static_cast<int>(run.deterministic)));
  kv("schedule_count_mean", fmt(run.count_stats.mean));
  kv("schedule_count_std", fmt(run.count_stats.stddev));
  kv("schedule_count_ratio", run.count_stats.applicable
                                 ? fmt(run.count_stats.ratio)
                                 : std::string("not-applicable"));
  kv("schedule_mem_mean", fmt(run.memory_stats.mean));
  kv("schedule_mem_std", fmt(run.memory_stats.stddev));
  kv("schedule_mem_ratio", run.memory_stats.applicable
                               ? fmt(run.memory_stats.ratio)
                               : std::string("not-applicable"));
  kv("iterations", fmt(run.iteration.iterations));
  kv("converged", fmt(static_cast<int>(run.iteration.converged)));
  kv("final_residual", fmt(run.iteration.history.empty()
                               ? 0.0
                               : run.iteration.history.back()));
  kv("true_residual", fmt(run.iteration.true_residual));
  if (run.oracle) {
    kv("product_error", fmt(run.product_error));
    kv("product_score", fmt(accuracy_score(run.product_error)));
    kv("solution_error", fmt(run.solution_error));
    kv("solution_score", fmt(accuracy_score(run.solution_error)));
  }
  return os.str();
}

inline std::string render_residuals(const GmresResult& g) {
  std::ostringstream os;
  for (size_t i = 0; i < g.history.size(); ++i)
    os << i << " " << fmt(g.history[i]) << "\n";
  return os.str();
}

// One row per unknown: global index, owning atom, kind (the leading n_loops
// unknowns of each atom block are loops, the rest stars), complex value.
inline std::string render_currents(const VectorXcd& I, int np, int n_loops) {
  if (np < 1) throw std::invalid_argument("currents table: block size must be positive");
  std::ostringstream os;
  for (Eigen::Index i = 0; i < I.size(); ++i) {
    const int atom = static_cast<int>(i) / np;
    const int local = static_cast<int>(i) % np;
    os << i << " " << atom << " " << (local < n_loops ? "loop" : "star") << " "
       << fmt(I[i].real()) << " " << fmt(I[i].imag()) << "\n";
  }
  return os.str();
}

inline std::string render_ledger(const std::vector<LedgerRow>& rows) {
  std::ostringstream os;
  os << "# level m n rank stored dense row_atoms|col_atoms\n";
  for (const auto& r : rows) {
    os << r.level << " " << r.m << " " << r.n << " " << r.rank << " "
       << r.stored << " " << static_cast<int>(r.dense) << " ";
    for (size_t i = 0; i < r.row_atoms.size(); ++i)
      os << (i ? "," : "") << r.row_atoms[i];
    os << "|";
    for (size_t i = 0; i < r.col_atoms.size(); ++i)
      os << (i ? "," : "") << r.col_atoms[i];
    os << "\n";
  }
  return os.str();
}

inline std::string render_layout(const Layout& lay) {
  std::ostringstream os;
  for (size_t i = 0; i < lay.centers.size(); ++i)
    os << i << " " << fmt(lay.centers[i].x()) << " " << fmt(lay.centers[i].y())
       << " " << fmt(lay.centers[i].z()) << "\n";
  return os.str();
}

inline std::string render_tree(const BlockTree& tree) {
  std::ostringstream os;
  for (size_t l = 0; l < tree.levels.size(); ++l) {
    const auto& L = tree.levels[l];
    os << "level " << (l + 1) << " side " << L.side << " block "
       << fmt(L.block) << "\n";
    for (size_t b = 0; b < L.blocks.size(); ++b) {
      os << "  block " << b << " ix " << L.blocks[b].ix << " iy "
         << L.blocks[b].iy << " atoms";
      for (int a : L.blocks[b].atoms) os << " " << a;
      os << "\n";
    }
    if (l < tree.near_pairs.size()) {
      os << "  near";
      for (const auto& pr : tree.near_pairs[l]) os << " " << pr[0] << ":" << pr[1];
      os << "\n  far";
      for (const auto& pr : tree.far_pairs[l]) os << " " << pr[0] << ":" << pr[1];
      os << "\n";
    }
  }
  os << "finest";
  for (const auto& pr : tree.finest_pairs) os << " " << pr[0] << ":" << pr[1];
  os << "\n";
  return os.str();
}

inline std::string render_consistency(const std::vector<ConsistencyRow>& rows) {
  std::ostringstream os;
  os << "# eps product_error product_score solution_error solution_score gain iterations\n";
  for (const auto& r : rows)
    os << fmt(r.eps) << " " << fmt(r.product_error) << " "
       << fmt(r.product_score) << " " << fmt(r.solution_error) << " "
       << fmt(r.solution_score) << " " << fmt(r.gain) << " " << r.iterations
       << "\n";
  return os.str();
}

inline std::string render_scaling(const std::vector<ScalingRow>& rows) {
  std::ostringstream os;
  os << "# n_atoms unknowns eps gain iterations converged\n";
  for (const auto& r : rows)
    os << r.n_atoms << " " << r.unknowns << " " << fmt(r.eps) << " "
       << fmt(r.gain) << " " << r.iterations << " "
       << static_cast<int>(r.converged) << "\n";
  return os.str();
}

inline std::string render_split(const std::vector<SplitRow>& rows) {
  std::ostringstream os;
  os << "# eps error gain_no_split gain_split\n";
  for (const auto& r : rows)
    os << fmt(r.eps) << " " << fmt(std::max(r.err_whole, r.err_split)) << " "
       << fmt(r.gain_whole) << " " << fmt(r.gain_split) << "\n";
  return os.str();
}

}  // namespace qrvie
