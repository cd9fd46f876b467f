// Command-line front end: scenario configuration, end-to-end solves, oracle
// verification, experiments, and report re-validation.
//
// Exit codes: 0 success (and solver converged where applicable),
//             2 configuration / usage error,
//             3 solver did not converge,
//             4 verification or report-consistency failure,
//             1 any other runtime failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "qrvie/pipeline.hpp"

namespace fs = std::filesystem;
using namespace qrvie;

namespace {

struct CliState {
  Scenario sc;
  std::string out = "out";
};

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw std::invalid_argument("config: boolean expected for " + key);
}

// Flat "key value" config file; '#' starts a comment.
void load_config(const std::string& path, CliState& st) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file: " + path);
  Scenario& sc = st.sc;
  bool saw_chi = false, saw_epsr = false;
  Complex eps_r{0.0, 0.0};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string key, value;
    if (!(ls >> key)) continue;
    if (!(ls >> value))
      throw std::invalid_argument("config: missing value for " + key);
    std::string extra;
    if (ls >> extra)
      throw std::invalid_argument("config: trailing token after " + key);
    try {
      if (key == "n_atoms") sc.n_atoms = std::stoi(value);
      else if (key == "atom_radius") sc.atom_radius = std::stod(value);
      else if (key == "voxel") sc.voxel = std::stod(value);
      else if (key == "sigma") sc.sigma = std::stod(value);
      else if (key == "chi_re") { sc.chi.real(std::stod(value)); saw_chi = true; }
      else if (key == "chi_im") { sc.chi.imag(std::stod(value)); saw_chi = true; }
      else if (key == "eps_r_re") { eps_r.real(std::stod(value)); saw_epsr = true; }
      else if (key == "eps_r_im") { eps_r.imag(std::stod(value)); saw_epsr = true; }
      else if (key == "frequency") sc.frequency = std::stod(value);
      else if (key == "e0_x") sc.E0.x() = std::stod(value);
      else if (key == "e0_y") sc.E0.y() = std::stod(value);
      else if (key == "e0_z") sc.E0.z() = std::stod(value);
      else if (key == "dir_x") sc.direction.x() = std::stod(value);
      else if (key == "dir_y") sc.direction.y() = std::stod(value);
      else if (key == "dir_z") sc.direction.z() = std::stod(value);
      else if (key == "level1") sc.level1_blocks = std::stoi(value);
      else if (key == "eps") sc.eps = std::stod(value);
      else if (key == "keep_dense") sc.keep_dense = parse_bool(value, key);
      else if (key == "rel_tol") sc.rel_tol = std::stod(value);
      else if (key == "max_iter") sc.max_iter = std::stoi(value);
      else if (key == "precondition") sc.precondition = parse_bool(value, key);
      else if (key == "gauss_order") sc.quad.gauss_order = std::stoi(value);
      else if (key == "eps_quad") sc.quad.eps_quad = std::stod(value);
      else if (key == "near_threshold") sc.quad.near_threshold = std::stod(value);
      else if (key == "subdivision") sc.quad.subdivision = std::stoi(value);
      else if (key == "workers") sc.n_workers = std::stoi(value);
      else if (key == "deterministic") sc.deterministic = parse_bool(value, key);
      else if (key == "dense_cap") sc.dense_cap = std::stoi(value);
      else if (key == "out") st.out = value;
      else throw std::invalid_argument("unknown config key: " + key);
    } catch (const std::invalid_argument&) {
      throw;
    } catch (const std::exception&) {
      throw std::invalid_argument("config: bad value for " + key + " at line " +
                                  std::to_string(lineno));
    }
  }
  if (saw_chi && saw_epsr)
    throw std::invalid_argument(
        "config conflict: give either chi_re/chi_im or eps_r_re/eps_r_im");
  if (saw_epsr) sc.chi = eps_r - 1.0;  // susceptibility from relative permittivity
}

std::string render_scenario(const CliState& st) {
  const Scenario& sc = st.sc;
  std::ostringstream os;
  auto kv = [&](const char* k, const std::string& v) { os << k << " " << v << "\n"; };
  kv("n_atoms", fmt(sc.n_atoms));
  kv("atom_radius", fmt(sc.atom_radius));
  kv("voxel", fmt(sc.voxel));
  kv("sigma", fmt(sc.sigma));
  kv("chi_re", fmt(sc.chi.real()));
  kv("chi_im", fmt(sc.chi.imag()));
  kv("frequency", fmt(sc.frequency));
  kv("e0_x", fmt(sc.E0.x()));
  kv("e0_y", fmt(sc.E0.y()));
  kv("e0_z", fmt(sc.E0.z()));
  kv("dir_x", fmt(sc.direction.x()));
  kv("dir_y", fmt(sc.direction.y()));
  kv("dir_z", fmt(sc.direction.z()));
  kv("level1", fmt(sc.level1_blocks));
  kv("eps", fmt(sc.eps));
  kv("keep_dense", fmt(static_cast<int>(sc.keep_dense)));
  kv("rel_tol", fmt(sc.rel_tol));
  kv("max_iter", fmt(sc.max_iter));
  kv("precondition", fmt(static_cast<int>(sc.precondition)));
  kv("gauss_order", fmt(sc.quad.gauss_order));
  kv("eps_quad", fmt(sc.quad.eps_quad));
  kv("near_threshold", fmt(sc.quad.near_threshold));
  kv("subdivision", fmt(sc.quad.subdivision));
  kv("workers", fmt(sc.n_workers));
  kv("deterministic", fmt(static_cast<int>(sc.deterministic)));
  kv("dense_cap", fmt(sc.dense_cap));
  return os.str();
}

std::string render_basis_summary(const Problem& p) {
  const BasisCheck chk = verify_basis(p.mesh, p.basis);
  std::ostringstream os;
  os << "cells " << p.mesh.n_cells() << "\n";
  os << "faces " << p.mesh.n_faces() << "\n";
  os << "edges " << p.mesh.n_edges() << "\n";
  os << "boundary_components " << p.mesh.n_boundary_components << "\n";
  os << "loops " << p.basis.n_loops << "\n";
  os << "stars " << p.basis.n_stars << "\n";
  os << "unknowns_per_atom " << p.basis.n_dofs() << "\n";
  os << "constraint_residual " << fmt(chk.max_constraint_residual) << "\n";
  os << "loop_boundary_coeff " << fmt(chk.max_loop_boundary_coeff) << "\n";
  os << "rank_deficiency " << chk.rank_deficiency << "\n";
  os << "basis_ok " << static_cast<int>(chk.ok) << "\n";
  return os.str();
}

void write_common(const fs::path& dir, const CliState& st, const Problem& p) {
  fs::create_directories(dir);
  write_text((dir / "scenario.txt").string(), render_scenario(st));
  write_text((dir / "layout.txt").string(), render_layout(p.layout));
  write_text((dir / "tree.txt").string(), render_tree(p.tree));
}

int cmd_generate(const CliState& st) {
  auto p = Problem::build(st.sc);
  const fs::path dir(st.out);
  write_common(dir, st, *p);
  write_text((dir / "basis.txt").string(), render_basis_summary(*p));
  std::cout << "generated " << st.sc.n_atoms << " atoms, "
            << p->basis.n_dofs() << " unknowns per atom, "
            << p->layout.centers.size() * p->basis.n_dofs()
            << " total unknowns -> " << dir.string() << "\n";
  return 0;
}

int cmd_solve(const CliState& st, int oracle_mode,
              const std::vector<int>& dump_block) {
  auto p = Problem::build(st.sc);
  const int unknowns =
      static_cast<int>(p->layout.centers.size()) * p->basis.n_dofs();
  const bool with_oracle =
      oracle_mode > 0 || (oracle_mode == 0 && unknowns <= st.sc.dense_cap);

  SolveRun run = run_solve(*p, with_oracle);

  const fs::path dir(st.out);
  write_common(dir, st, *p);
  write_text((dir / "report.txt").string(), render_report(st.sc, run));
  write_text((dir / "currents.txt").string(),
             render_currents(run.currents, run.np, run.n_loops));
  write_text((dir / "residuals.txt").string(), render_residuals(run.iteration));
  write_text((dir / "ledger.txt").string(), render_ledger(run.ledger));

  if (!dump_block.empty()) {
    const int i = dump_block[0], j = dump_block[1];
    const int n = static_cast<int>(p->layout.centers.size());
    if (i < 0 || j < 0 || i >= n || j >= n)
      throw std::invalid_argument("dump-block: atom index out of range");
    const MatrixXcd B =
        p->assembler->pair_block(p->layout.centers[i], p->layout.centers[j]);
    std::ostringstream os;
    for (Eigen::Index r = 0; r < B.rows(); ++r)
      for (Eigen::Index c = 0; c < B.cols(); ++c)
        os << r << " " << c << " " << fmt(B(r, c).real()) << " "
           << fmt(B(r, c).imag()) << "\n";
    write_text((dir / ("block_" + std::to_string(i) + "_" +
                       std::to_string(j) + ".txt")).string(),
               os.str());
  }

  std::cout << "unknowns " << run.unknowns << ", gain " << fmt(run.gain.gain)
            << ", iterations " << run.iteration.iterations << ", converged "
            << (run.iteration.converged ? "yes" : "no");
  if (run.oracle)
    std::cout << ", solution_error " << fmt(run.solution_error);
  std::cout << " -> " << dir.string() << "\n";
  if (!run.iteration.converged) {
    std::cerr << "solver did not converge within " << st.sc.max_iter
              << " iterations (final residual "
              << fmt(run.iteration.history.back()) << ")\n";
    return 3;
  }
  return 0;
}

int cmd_verify(const CliState& st) {
  auto p = Problem::build(st.sc);
  const int unknowns =
      static_cast<int>(p->layout.centers.size()) * p->basis.n_dofs();
  if (unknowns > st.sc.dense_cap)
    throw std::invalid_argument(
        "verify needs the dense oracle: unknowns exceed dense_cap");

  std::ostringstream os;
  int failures = 0;
  auto check = [&](const std::string& name, bool pass, const std::string& val) {
    os << "check " << name << " " << (pass ? "pass" : "fail") << " " << val
       << "\n";
    if (!pass) ++failures;
  };

  const BasisCheck chk = verify_basis(p->mesh, p->basis);
  check("basis_constraints", chk.ok && chk.max_constraint_residual <= 1e-12,
        fmt(chk.max_constraint_residual));
  check("loop_boundary", chk.max_loop_boundary_coeff <= 1e-12,
        fmt(chk.max_loop_boundary_coeff));
  check("basis_rank", chk.rank_deficiency == 0, fmt(chk.rank_deficiency));

  SolveRun run = run_solve(*p, true);
  const MatrixXcd Z = p->assembler->dense_matrix(p->layout, st.sc.dense_cap);
  const double sym = (Z - Z.transpose()).norm() / Z.norm();
  check("matrix_symmetry", sym <= 1e-8, fmt(sym));

  BlockProvider provider = [&](const std::vector<int>& r,
                               const std::vector<int>& c) {
    return p->assembler->group_block(p->layout, r, c);
  };
  CompressedOperator op = build_operator(*p, st.sc.eps, st.sc.keep_dense, provider);
  const double part = (reconstruct_dense(op) - Z).norm() / Z.norm();
  check("partition_completeness", part <= 2.0 * st.sc.eps, fmt(part));
  check("product_precision", run.product_error <= 10.0 * st.sc.eps,
        fmt(run.product_error));
  check("converged", run.iteration.converged,
        fmt(run.iteration.history.back()));
  os << "solution_error " << fmt(run.solution_error) << "\n";
  os << "failures " << failures << "\n";

  const fs::path dir(st.out);
  write_common(dir, st, *p);
  write_text((dir / "verify.txt").string(), os.str());
  std::cout << os.str();
  return failures == 0 ? 0 : 4;
}

int cmd_experiment(const CliState& st, const std::string& which,
                   std::vector<double> eps_list, std::vector<int> n_list) {
  const fs::path dir(st.out);
  if (which == "consistency") {
    if (eps_list.empty()) eps_list = {1e-2, 1e-3, 1e-4, 1e-5};
    auto p = Problem::build(st.sc);
    auto rows = run_experiment_consistency(*p, eps_list);
    fs::create_directories(dir);
    write_text((dir / "scenario.txt").string(), render_scenario(st));
    write_text((dir / "consistency.txt").string(), render_consistency(rows));
    std::cout << render_consistency(rows);
    return 0;
  }
  if (which == "scaling") {
    if (eps_list.empty()) eps_list = {st.sc.eps};
    if (n_list.empty()) n_list = {4, 8, 16};
    auto rows = run_experiment_scaling(st.sc, n_list, eps_list);
    fs::create_directories(dir);
    write_text((dir / "scenario.txt").string(), render_scenario(st));
    write_text((dir / "scaling.txt").string(), render_scaling(rows));
    std::cout << render_scaling(rows);
    for (const auto& r : rows)
      if (!r.converged) return 3;
    return 0;
  }
  if (which == "split") {
    if (eps_list.empty()) eps_list = {3e-1, 1e-1, 3e-2, 1e-2, 3e-3};
    if (st.sc.n_atoms != 2)
      throw std::invalid_argument("split experiment requires exactly two atoms");
    auto p = Problem::build(st.sc);
    auto rows = run_experiment_split(*p, eps_list);
    fs::create_directories(dir);
    write_text((dir / "scenario.txt").string(), render_scenario(st));
    write_text((dir / "split.txt").string(), render_split(rows));
    std::cout << render_split(rows);
    return 0;
  }
  throw std::invalid_argument("unknown experiment: " + which);
}

// Re-derive every recomputable metric from the dumped tables and compare
// against report.txt, using the same %.17g formatting for exact comparison.
int cmd_report(const std::string& dir_in) {
  const fs::path dir(dir_in);
  auto read_lines = [](const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line))
      if (!line.empty() && line[0] != '#') lines.push_back(line);
    return lines;
  };

  std::map<std::string, std::string> rep;
  for (const auto& line : read_lines(dir / "report.txt")) {
    std::istringstream ls(line);
    std::string k, v;
    ls >> k >> v;
    rep[k] = v;
  }
  auto need = [&](const std::string& k) -> const std::string& {
    auto it = rep.find(k);
    if (it == rep.end())
      throw std::runtime_error("report.txt: missing key " + k);
    return it->second;
  };

  std::vector<std::string> mismatches;
  auto expect = [&](const std::string& key, const std::string& recomputed) {
    if (need(key) != recomputed)
      mismatches.push_back(key + ": report=" + need(key) +
                           " recomputed=" + recomputed);
  };

  // residual history -> iterations, final residual
  const auto resid = read_lines(dir / "residuals.txt");
  if (resid.empty()) throw std::runtime_error("residuals.txt is empty");
  expect("iterations", fmt(static_cast<int>(resid.size()) - 1));
  {
    std::istringstream ls(resid.back());
    std::string idx, val;
    ls >> idx >> val;
    expect("final_residual", val);
  }

  // currents table -> unknown count
  const auto curr = read_lines(dir / "currents.txt");
  expect("unknowns", fmt(static_cast<int>(curr.size())));

  // block ledger -> storage and gain
  const long long n_atoms = std::stoll(need("n_atoms"));
  const long long np = std::stoll(need("unknowns_per_atom"));
  const long long unknowns = std::stoll(need("unknowns"));
  if (n_atoms * np != unknowns)
    mismatches.push_back("unknowns: not n_atoms * unknowns_per_atom");
  long long stored_far = 0;
  for (const auto& line : read_lines(dir / "ledger.txt")) {
    std::istringstream ls(line);
    long long level, m, n, rank, stored, dense;
    if (!(ls >> level >> m >> n >> rank >> stored >> dense))
      throw std::runtime_error("ledger.txt: malformed row: " + line);
    const long long expected = dense ? m * n : (m + n) * rank;
    if (stored != expected)
      mismatches.push_back("ledger row storage: " + line);
    stored_far += stored;
  }
  expect("stored_far", fmt(stored_far));
  const long long stored_near = n_atoms * np * np;
  expect("stored_near", fmt(stored_near));
  expect("dense_coeffs", fmt(unknowns * unknowns));
  expect("compression_gain",
         fmt(static_cast<double>(unknowns * unknowns) /
             static_cast<double>(stored_far + stored_near)));

  if (mismatches.empty()) {
    std::cout << "report consistent: " << resid.size() - 1 << " iterations, "
              << curr.size() << " unknowns, gain " << need("compression_gain")
              << "\n";
    return 0;
  }
  std::cerr << "report inconsistent:\n";
  for (const auto& m : mismatches) std::cerr << "  " << m << "\n";
  return 4;
}

}  // namespace

int main(int argc, char** argv) {
  CliState st;
  // config file first, so explicit flags override its values
  try {
    for (int i = 1; i < argc; ++i) {
      const std::string arg = argv[i];
      if (arg == "--config" && i + 1 < argc) load_config(argv[i + 1], st);
      else if (arg.rfind("--config=", 0) == 0) load_config(arg.substr(9), st);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  CLI::App app{
      "Compressed volume-integral-equation solver for meta-atom arrays"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "flat key-value config file");

  Scenario& sc = st.sc;
  std::vector<double> e0v, dirv;
  double chi_re = sc.chi.real(), chi_im = sc.chi.imag();
  double eps_r_re = sc.chi.real() + 1.0, eps_r_im = sc.chi.imag();
  app.add_option("-n,--n-atoms", sc.n_atoms, "number of meta-atoms");
  app.add_option("--atom-radius", sc.atom_radius, "sphere radius [m]");
  app.add_option("--voxel", sc.voxel, "voxel edge length [m]");
  app.add_option("--sigma", sc.sigma, "conductivity [S/m]");
  auto* ocr = app.add_option("--chi-re", chi_re, "susceptibility, real part");
  auto* oci = app.add_option("--chi-im", chi_im, "susceptibility, imaginary part");
  auto* oer = app.add_option("--eps-r-re", eps_r_re,
                             "relative permittivity, real part");
  auto* oei = app.add_option("--eps-r-im", eps_r_im,
                             "relative permittivity, imaginary part");
  app.add_option("-f,--frequency", sc.frequency, "frequency [Hz]");
  app.add_option("--e0", e0v, "incident field amplitude (3 components)")
      ->expected(3);
  app.add_option("--direction", dirv, "propagation direction (3 components)")
      ->expected(3);
  app.add_option("--level1", sc.level1_blocks, "level-1 grid blocks per axis");
  app.add_option("--eps", sc.eps, "compression tolerance");
  app.add_flag("--keep-dense,!--no-keep-dense", sc.keep_dense,
               "store all blocks dense");
  app.add_option("--rel-tol", sc.rel_tol, "solver relative tolerance");
  app.add_option("--max-iter", sc.max_iter, "solver iteration cap");
  app.add_flag("--precondition,!--no-precondition", sc.precondition,
               "block-diagonal preconditioner");
  app.add_option("--gauss-order", sc.quad.gauss_order, "quadrature points per axis");
  app.add_option("--eps-quad", sc.quad.eps_quad, "quadrature tolerance");
  app.add_option("--near-threshold", sc.quad.near_threshold,
                 "quadrature admissibility threshold");
  app.add_option("--subdivision", sc.quad.subdivision,
                 "quadrature interval pre-split");
  app.add_option("-j,--workers", sc.n_workers, "worker thread count");
  app.add_flag("--deterministic,!--no-deterministic", sc.deterministic,
               "deterministic parallel reduction");
  app.add_option("--dense-cap", sc.dense_cap, "dense-oracle size cap");
  app.add_option("-o,--out", st.out, "output directory");

  auto* cmd_gen = app.add_subcommand("generate", "build and export geometry, tree, basis");
  auto* cmd_slv = app.add_subcommand("solve", "assemble, compress, and solve");
  std::vector<int> dump_block;
  cmd_slv->add_option("--dump-block", dump_block,
                      "write one atom-pair interaction block (two atom indices)")
      ->expected(2);
  bool force_oracle = false, no_oracle = false;
  auto* oo = cmd_slv->add_flag("--oracle", force_oracle,
                               "force dense-oracle comparison");
  cmd_slv->add_flag("--no-oracle", no_oracle, "skip dense-oracle comparison")
      ->excludes(oo);
  auto* cmd_ver = app.add_subcommand("verify", "dense-oracle verification checks");
  auto* cmd_exp = app.add_subcommand("experiment", "run a study");
  cmd_exp->require_subcommand(1);
  std::vector<double> eps_list;
  std::vector<int> n_list;
  auto* exp_con = cmd_exp->add_subcommand("consistency",
                                          "accuracy/gain vs tolerance");
  exp_con->add_option("--eps-list", eps_list, "compression tolerances");
  auto* exp_scl = cmd_exp->add_subcommand("scaling", "gain vs atom count");
  exp_scl->add_option("--eps-list", eps_list, "compression tolerances");
  exp_scl->add_option("--n-list", n_list, "atom counts");
  auto* exp_spl = cmd_exp->add_subcommand("split",
                                          "whole vs split coupling block");
  exp_spl->add_option("--eps-list", eps_list, "compression tolerances");
  auto* cmd_rep = app.add_subcommand("report", "re-validate a dumped run");
  std::string report_dir;
  cmd_rep->add_option("dir", report_dir, "directory with dumped tables")
      ->required();

  CLI11_PARSE(app, argc, argv);

  if ((*ocr || *oci) && (*oer || *oei)) {
    std::cerr << "error: give either --chi-re/--chi-im or --eps-r-re/--eps-r-im\n";
    return 2;
  }
  if (*ocr) sc.chi.real(chi_re);
  if (*oci) sc.chi.imag(chi_im);
  if (*oer || *oei) sc.chi = Complex(eps_r_re, eps_r_im) - 1.0;
  if (!e0v.empty()) sc.E0 = Vec3(e0v[0], e0v[1], e0v[2]);
  if (!dirv.empty()) sc.direction = Vec3(dirv[0], dirv[1], dirv[2]);

  try {
    if (*cmd_gen) return cmd_generate(st);
    if (*cmd_slv)
      return cmd_solve(st, force_oracle ? 1 : (no_oracle ? -1 : 0), dump_block);
    if (*cmd_ver) return cmd_verify(st);
    if (*cmd_exp) {
      const std::string which = exp_con->parsed()   ? "consistency"
                                : exp_scl->parsed() ? "scaling"
                                                    : "split";
      return cmd_experiment(st, which, eps_list, n_list);
    }
    if (*cmd_rep) return cmd_report(report_dir);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
