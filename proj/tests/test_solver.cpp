#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <random>

#include "qrvie/solver.hpp"

using namespace qrvie;

namespace {

MatrixXcd random_matrix(int m, int n, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  MatrixXcd A(m, n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) A(i, j) = Complex(g(rng), g(rng));
  return A;
}

VectorXcd random_vector(int n, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  VectorXcd v(n);
  for (int i = 0; i < n; ++i) v[i] = Complex(g(rng), g(rng));
  return v;
}

// well-conditioned random block: random + diagonal shift
MatrixXcd random_block(int n, unsigned seed) {
  MatrixXcd A = random_matrix(n, n, seed);
  A += 4.0 * std::sqrt(static_cast<double>(n)) *
       MatrixXcd::Identity(n, n);
  return A;
}

}  // namespace

TEST_CASE("identical atoms share one factorization, distinct get their own") {
  const MatrixXcd B = random_block(5, 11u);
  auto shared = BlockDiagonalPreconditioner::factor({B}, {0, 0, 0});
  REQUIRE(shared.n_factorizations() == 1);
  REQUIRE(shared.n_dofs() == 15);

  const MatrixXcd B2 = random_block(5, 12u);
  auto two = BlockDiagonalPreconditioner::factor({B, B2}, {0, 1});
  REQUIRE(two.n_factorizations() == 2);
}

TEST_CASE("preconditioner composed with its block matrix is the identity") {
  const MatrixXcd B = random_block(6, 21u);
  auto p = BlockDiagonalPreconditioner::factor({B}, {0, 0, 0, 0});
  // block-diagonal operator with B in each slot
  const VectorXcd x = random_vector(24, 22u);
  VectorXcd bx(24);
  for (int a = 0; a < 4; ++a)
    bx.segment(6 * a, 6) = B * x.segment(6 * a, 6);
  REQUIRE((p.solve(bx) - x).norm() / x.norm() <= 1e-10);
}

TEST_CASE("singular diagonal block is reported by index") {
  const MatrixXcd good = random_block(4, 31u);
  MatrixXcd bad = MatrixXcd::Zero(4, 4);
  bad(0, 0) = 1.0;  // rank deficient
  REQUIRE_THROWS_WITH(
      BlockDiagonalPreconditioner::factor({good, bad}, {0, 1}),
      Catch::Matchers::ContainsSubstring("preconditioner breakdown at block 1"));
  REQUIRE_THROWS_WITH(
      BlockDiagonalPreconditioner::factor({}, {}),
      Catch::Matchers::ContainsSubstring("at least one block"));
  REQUIRE_THROWS_WITH(
      BlockDiagonalPreconditioner::factor({good}, {0, 1}),
      Catch::Matchers::ContainsSubstring("out of range"));
}

TEST_CASE("identity operator converges in one iteration") {
  const VectorXcd b = random_vector(12, 41u);
  GmresResult r = gmres([](const VectorXcd& x) { return x; }, nullptr, b,
                        1e-10, 50);
  REQUIRE(r.converged);
  REQUIRE(r.iterations == 1);
  REQUIRE((r.x - b).norm() / b.norm() <= 1e-12);
  REQUIRE(r.history.front() == 1.0);
}

TEST_CASE("block-diagonal operator with its exact preconditioner needs one iteration") {
  const MatrixXcd B = random_block(7, 51u);
  auto p = BlockDiagonalPreconditioner::factor({B}, {0, 0, 0});
  auto apply = [&](const VectorXcd& x) {
    VectorXcd y(x.size());
    for (int a = 0; a < 3; ++a)
      y.segment(7 * a, 7) = B * x.segment(7 * a, 7);
    return y;
  };
  const VectorXcd b = random_vector(21, 52u);
  GmresResult r = gmres(apply, &p, b, 1e-10, 50);
  REQUIRE(r.converged);
  REQUIRE(r.iterations == 1);
  REQUIRE((apply(r.x) - b).norm() / b.norm() <= 1e-9);
}

TEST_CASE("history starts at one, never increases, and ends under tolerance") {
  const MatrixXcd A = random_block(40, 61u);
  const VectorXcd b = random_vector(40, 62u);
  GmresResult r = gmres([&](const VectorXcd& x) { return VectorXcd(A * x); },
                        nullptr, b, 1e-8, 200);
  REQUIRE(r.converged);
  REQUIRE(r.history.front() == 1.0);
  for (size_t i = 1; i < r.history.size(); ++i)
    REQUIRE(r.history[i] <= r.history[i - 1] + 1e-15);
  REQUIRE(r.history.back() <= 1e-8);
  REQUIRE(static_cast<int>(r.history.size()) == r.iterations + 1);
  // unpreconditioned true residual agrees with the recursion estimate
  const double true_rel = (A * r.x - b).norm() / b.norm();
  REQUIRE(r.true_residual == Catch::Approx(true_rel).margin(1e-12));
  REQUIRE(true_rel <= 10.0 * 1e-8);
}

TEST_CASE("solution matches a dense LU oracle on a generic system") {
  const MatrixXcd A = random_block(30, 71u);
  const VectorXcd b = random_vector(30, 72u);
  GmresResult r = gmres([&](const VectorXcd& x) { return VectorXcd(A * x); },
                        nullptr, b, 1e-12, 100);
  const VectorXcd ref = A.partialPivLu().solve(b);
  REQUIRE(r.converged);
  REQUIRE(relative_error(r.x, ref) <= 1e-9);
}

TEST_CASE("zero right-hand side returns the zero solution immediately") {
  GmresResult r = gmres([](const VectorXcd& x) { return x; }, nullptr,
                        VectorXcd::Zero(9), 1e-10, 10);
  REQUIRE(r.converged);
  REQUIRE(r.iterations == 0);
  REQUIRE(r.x.norm() == 0.0);
}

TEST_CASE("non-finite operator output raises a breakdown error") {
  auto apply = [](const VectorXcd& x) {
    VectorXcd y = x;
    y[0] = Complex(std::numeric_limits<double>::quiet_NaN(), 0.0);
    return y;
  };
  REQUIRE_THROWS_WITH(
      gmres(apply, nullptr, VectorXcd::Ones(4), 1e-8, 10),
      Catch::Matchers::ContainsSubstring("gmres breakdown"));
}

TEST_CASE("iteration cap leaves converged false with the residual recorded") {
  const MatrixXcd A = random_block(40, 81u);
  const VectorXcd b = random_vector(40, 82u);
  GmresResult r = gmres([&](const VectorXcd& x) { return VectorXcd(A * x); },
                        nullptr, b, 1e-14, 3);
  REQUIRE_FALSE(r.converged);
  REQUIRE(r.iterations == 3);
  REQUIRE(r.history.size() == 4);
  REQUIRE(std::isfinite(r.true_residual));
}

TEST_CASE("accuracy metrics follow the definitions") {
  const VectorXcd ref = random_vector(10, 91u);
  REQUIRE(relative_error(ref, ref) == 0.0);
  REQUIRE(accuracy_score(0.0) == std::numeric_limits<double>::infinity());

  const VectorXcd off = 1.001 * ref;
  const double err = relative_error(off, ref);
  REQUIRE(err == Catch::Approx(1e-3).epsilon(1e-9));
  REQUIRE(accuracy_score(err) == Catch::Approx(3.0).margin(1e-6));

  REQUIRE_THROWS_WITH(relative_error(VectorXcd::Ones(3), VectorXcd::Ones(4)),
                      Catch::Matchers::ContainsSubstring("size mismatch"));
  REQUIRE_THROWS_WITH(relative_error(VectorXcd::Ones(3), VectorXcd::Zero(3)),
                      Catch::Matchers::ContainsSubstring("zero reference"));
}
