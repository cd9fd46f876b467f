#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <string>
#include <vector>

#include "qrvie/pipeline.hpp"

using namespace qrvie;
using Catch::Approx;
using Catch::Matchers::ContainsSubstring;

namespace {

Scenario small(int n_atoms) {
  Scenario sc;
  sc.n_atoms = n_atoms;
  sc.rel_tol = 1e-8;
  return sc;
}

}  // namespace

TEST_CASE("scenario validation rejects bad inputs") {
  auto expect = [](Scenario sc, const char* needle) {
    REQUIRE_THROWS_WITH(validate_scenario(sc), ContainsSubstring(needle));
  };
  Scenario sc;
  REQUIRE_NOTHROW(validate_scenario(sc));
  {
    Scenario s = sc;
    s.n_atoms = 0;
    expect(s, "at least one atom");
  }
  {
    Scenario s = sc;
    s.atom_radius = 0.0;
    expect(s, "atom radius");
  }
  {
    Scenario s = sc;
    s.voxel = -1.0;
    expect(s, "voxel size");
  }
  {
    Scenario s = sc;
    s.frequency = 0.0;
    expect(s, "frequency");
  }
  {
    Scenario s = sc;
    s.sigma = -2.0;
    expect(s, "conductivity");
  }
  {
    Scenario s = sc;
    s.sigma = 0.0;
    s.chi = Complex(0.0, 0.0);
    expect(s, "contrast vanishes");
  }
  {
    Scenario s = sc;
    s.eps = 1.0;
    expect(s, "compression tolerance");
  }
  {
    Scenario s = sc;
    s.eps = 0.0;
    expect(s, "compression tolerance");
  }
  {
    // a dense run never truncates, so the tolerance is not consulted
    Scenario s = sc;
    s.eps = 0.0;
    s.keep_dense = true;
    REQUIRE_NOTHROW(validate_scenario(s));
  }
  {
    Scenario s = sc;
    s.rel_tol = 0.0;
    expect(s, "solver tolerance");
  }
  {
    Scenario s = sc;
    s.max_iter = 0;
    expect(s, "iteration cap");
  }
  {
    Scenario s = sc;
    s.level1_blocks = 0;
    expect(s, "level-1 grid");
  }
  {
    Scenario s = sc;
    s.n_workers = 0;
    expect(s, "worker count");
  }
  {
    Scenario s = sc;
    s.quad.gauss_order = 0;
    expect(s, "gauss order");
  }
  {
    Scenario s = sc;
    s.quad.eps_quad = 0.0;
    expect(s, "quadrature tolerance");
  }
  {
    Scenario s = sc;
    s.quad.subdivision = 0;
    expect(s, "subdivision");
  }
  {
    Scenario s = sc;
    s.dense_cap = 0;
    expect(s, "dense cap");
  }
}

TEST_CASE("problem build wires geometry, basis, layout, and tree together") {
  auto p = Problem::build(small(4));
  REQUIRE(p->mesh.n_cells() == 8);
  REQUIRE(p->basis.n_dofs() == 28);
  REQUIRE(p->basis.n_loops == 5);
  REQUIRE(p->layout.centers.size() == 4);
  REQUIRE_FALSE(p->tree.levels.empty());
  REQUIRE(p->assembler.has_value());
  REQUIRE(p->assembler->n_dofs_per_atom() == 28);

  Scenario coarse = small(2);
  coarse.voxel = 1.9 * coarse.atom_radius;
  REQUIRE_THROWS_WITH(Problem::build(coarse),
                      ContainsSubstring("no interior facet"));
}

TEST_CASE("solve against the dense reference on a two-atom scenario") {
  auto p = Problem::build(small(2));
  const SolveRun run = run_solve(*p, /*with_oracle=*/true);
  REQUIRE(run.unknowns == 56);
  REQUIRE(run.np == 28);
  REQUIRE(run.n_loops == 5);
  REQUIRE(run.iteration.converged);
  REQUIRE(run.iteration.history.back() <= 1e-8);
  REQUIRE(run.oracle);
  REQUIRE(run.solution_error <= 1e-6);
  REQUIRE(run.product_error <= 10.0 * p->sc.eps);
  REQUIRE(run.gain.gain > 1.0);
  REQUIRE(run.currents.norm() > 0.0);
  REQUIRE(run.rhs.size() == 56);
  REQUIRE_FALSE(run.ledger.empty());
  // ledger storage is consistent with the gain accounting
  long long far = 0;
  for (const auto& r : run.ledger) far += r.stored;
  REQUIRE(far == run.gain.stored_far);
  REQUIRE(run.gain.stored_near == 2LL * 28 * 28);
}

TEST_CASE("uncompressed run is limited only by the solver tolerance") {
  Scenario sc = small(2);
  sc.keep_dense = true;
  sc.rel_tol = 1e-10;
  auto p = Problem::build(sc);
  const SolveRun run = run_solve(*p, true);
  REQUIRE(run.keep_dense);
  REQUIRE(run.product_error <= 1e-13);
  REQUIRE(run.solution_error <= 1e-8);
  REQUIRE(run.iteration.converged);
}

TEST_CASE("repeated solves render byte-identical artifacts") {
  const Scenario sc = small(2);
  auto pa = Problem::build(sc);
  auto pb = Problem::build(sc);
  const SolveRun a = run_solve(*pa, false);
  const SolveRun b = run_solve(*pb, false);
  REQUIRE(render_report(sc, a) == render_report(sc, b));
  REQUIRE(render_currents(a.currents, a.np, a.n_loops) ==
          render_currents(b.currents, b.np, b.n_loops));
  REQUIRE(render_residuals(a.iteration) == render_residuals(b.iteration));
  REQUIRE(render_ledger(a.ledger) == render_ledger(b.ledger));
  REQUIRE(render_layout(pa->layout) == render_layout(pb->layout));
  REQUIRE(render_tree(pa->tree) == render_tree(pb->tree));
}

TEST_CASE("report text carries the solve vitals") {
  const Scenario sc = small(2);
  auto p = Problem::build(sc);
  const SolveRun run = run_solve(*p, true);
  const std::string report = render_report(sc, run);
  REQUIRE_THAT(report, ContainsSubstring("unknowns 56\n"));
  REQUIRE_THAT(report, ContainsSubstring("n_atoms 2\n"));
  REQUIRE_THAT(report, ContainsSubstring("converged 1\n"));
  REQUIRE_THAT(report, ContainsSubstring("solution_error "));
  REQUIRE_THAT(report, ContainsSubstring("product_error "));
  REQUIRE_THAT(report, ContainsSubstring("compression_gain "));
  // without a reference no error lines appear
  const std::string plain = render_report(sc, run_solve(*p, false));
  REQUIRE_THAT(plain, !ContainsSubstring("solution_error"));

  // the residual table ends at the reported final residual
  const std::string res = render_residuals(run.iteration);
  REQUIRE_THAT(res, ContainsSubstring("0 1\n"));  // relative history starts at 1

  // the currents table labels circulating and radial components
  const std::string cur = render_currents(run.currents, run.np, run.n_loops);
  REQUIRE_THAT(cur, ContainsSubstring("0 0 loop "));
  REQUIRE_THAT(cur, ContainsSubstring("5 0 star "));
  REQUIRE_THAT(cur, ContainsSubstring("28 1 loop "));
}

TEST_CASE("consistency experiment sweeps the tolerance on shared assembly") {
  auto p = Problem::build(small(2));
  const std::vector<double> eps{1e-2, 1e-4};
  const auto rows = run_experiment_consistency(*p, eps);
  REQUIRE(rows.size() == 2);
  for (size_t i = 0; i < rows.size(); ++i) {
    REQUIRE(rows[i].eps == eps[i]);
    REQUIRE(rows[i].product_error <= 10.0 * eps[i]);
    REQUIRE(rows[i].solution_error > 0.0);
    REQUIRE(rows[i].gain > 0.0);
    REQUIRE(rows[i].iterations >= 1);
  }
  REQUIRE(rows[1].solution_error <= rows[0].solution_error);
  REQUIRE(rows[1].product_error <= rows[0].product_error);
  // deterministic rendering
  auto p2 = Problem::build(small(2));
  REQUIRE(render_consistency(run_experiment_consistency(*p2, eps)) ==
          render_consistency(rows));
  REQUIRE_THROWS_WITH(run_experiment_consistency(*p, {}),
                      ContainsSubstring("empty tolerance list"));
  REQUIRE_THROWS_WITH(run_experiment_consistency(*p, {2.0}),
                      ContainsSubstring("must be in (0,1)"));
}

TEST_CASE("scaling experiment spans the atom-count grid") {
  const Scenario base = small(1);
  const auto rows = run_experiment_scaling(base, {2, 4}, {1e-2, 1e-3});
  REQUIRE(rows.size() == 4);
  REQUIRE(rows[0].n_atoms == 2);
  REQUIRE(rows[1].n_atoms == 2);
  REQUIRE(rows[2].n_atoms == 4);
  REQUIRE(rows[3].n_atoms == 4);
  REQUIRE(rows[0].eps == 1e-2);
  REQUIRE(rows[1].eps == 1e-3);
  for (const auto& r : rows) {
    REQUIRE(r.unknowns == 28 * r.n_atoms);
    REQUIRE(r.converged);
    REQUIRE(r.gain > 0.0);
  }
  REQUIRE_THROWS_WITH(run_experiment_scaling(base, {}, {1e-2}),
                      ContainsSubstring("empty atom-count list"));
  REQUIRE_THROWS_WITH(run_experiment_scaling(base, {2}, {}),
                      ContainsSubstring("empty tolerance list"));
}

TEST_CASE("split experiment demands a two-atom scenario") {
  auto p3 = Problem::build(small(3));
  REQUIRE_THROWS_WITH(run_experiment_split(*p3, {1e-2}),
                      ContainsSubstring("exactly two atoms"));
  auto p = Problem::build(small(2));
  const std::vector<double> eps{1e-1, 1e-2};
  const auto rows = run_experiment_split(*p, eps);
  REQUIRE(rows.size() == 2);
  for (size_t i = 0; i < rows.size(); ++i) {
    REQUIRE(rows[i].eps == eps[i]);
    // truncation is bounded by construction
    REQUIRE(rows[i].err_whole <= eps[i]);
    REQUIRE(rows[i].err_split <= eps[i]);
    REQUIRE(rows[i].gain_whole > 0.0);
    REQUIRE(rows[i].gain_split > 0.0);
    REQUIRE(rows[i].rank_whole >= 1);
    REQUIRE(rows[i].rank_a >= 1);
    REQUIRE(rows[i].rank_b >= 1);
  }
  // tighter tolerance can only raise the kept rank
  REQUIRE(rows[1].rank_whole >= rows[0].rank_whole);
  REQUIRE_THROWS_WITH(run_experiment_split(*p, {}),
                      ContainsSubstring("empty tolerance list"));
}

TEST_CASE("fixed-format numbers survive a text round trip") {
  for (double x : {0.0, 1.0, -1.5, 3.9063e-7, 1.0478e7, 1e-300}) {
    const std::string s = fmt(x);
    REQUIRE(std::stod(s) == x);
  }
  REQUIRE(fmt(42) == "42");
  REQUIRE(fmt(static_cast<long long>(1) << 40) == "1099511627776");
}
