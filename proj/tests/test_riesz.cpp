#include <cmath>

#include "doctest.h"
#include "helpers.hpp"

#include "autodml/error.hpp"
#include "autodml/riesz.hpp"
#include "autodml/rng.hpp"
#include "autodml/sim.hpp"
#include "autodml/simplex.hpp"

using namespace autodml;

namespace {

// Fixed instance shared with the cvxpy / HiGHS reference script.
Eigen::MatrixXd ref_G() {
  Eigen::MatrixXd G(4, 4);
  G << 2.0, 0.3, -0.2, 0.1,
       0.3, 1.5, 0.4, 0.0,
       -0.2, 0.4, 1.2, 0.25,
       0.1, 0.0, 0.25, 0.9;
  return G;
}
Eigen::VectorXd ref_M() { return Eigen::Vector4d(1.0, -0.7, 0.05, 0.6); }

Eigen::MatrixXd random_spd(std::size_t p, CounterRng& rng) {
  Eigen::MatrixXd A(p + 3, p);
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index j = 0; j < A.cols(); ++j) A(i, j) = rng.normal();
  return A.transpose() * A / static_cast<double>(A.rows()) + 0.05 * Eigen::MatrixXd::Identity(p, p);
}

}  // namespace

TEST_CASE("theoretical penalty level") {
  CHECK(std::abs(theoretical_r_L(100, 24, 1.0, 0.1) - 0.28652602385321343) < 1e-12);
  CHECK(theoretical_r_L(100, 24, 2.0, 0.1) == 2.0 * theoretical_r_L(100, 24, 1.0, 0.1));
  double last = 0.0;
  for (std::size_t p : {1, 2, 10, 100, 10000, 1000000}) {
    const double r = theoretical_r_L(500, p, 1.0, 0.1);
    CHECK(r > last);
    last = r;
  }
  CHECK_THROWS_AS(theoretical_r_L(0, 5, 1.0, 0.1), ValidationError);
  CHECK_THROWS_AS(theoretical_r_L(10, 5, 1.0, 0.0), ValidationError);
}

TEST_CASE("soft threshold cases") {
  CHECK(soft_threshold_update(0.5, 1.0, 1.0) == 0.0);
  CHECK(soft_threshold_update(2.0, 1.0, 1.0) == 1.0);
  CHECK(soft_threshold_update(-3.0, 2.0, 1.0) == -1.0);
  CHECK_THROWS_WITH(soft_threshold_update(1.0, 0.0, 1.0), doctest::Contains("degenerate diagonal"));
}

TEST_CASE("one-dimensional lasso") {
  const Eigen::MatrixXd G = Eigen::MatrixXd::Ones(1, 1);
  const Eigen::VectorXd M = Eigen::VectorXd::Constant(1, 2.0);
  const Eigen::VectorXd t = Eigen::VectorXd::Constant(1, 0.5);
  const auto cd = coordinate_descent(G, M, t, Eigen::VectorXd::Zero(1), 1e-12, 100);
  CHECK(cd.converged);
  CHECK(std::abs(cd.rho(0) - 1.5) < 1e-10);
}

TEST_CASE("unpenalized limit solves the normal equations") {
  CounterRng rng(5);
  const auto G = random_spd(6, rng);
  Eigen::VectorXd M(6);
  for (int j = 0; j < 6; ++j) M(j) = rng.normal();
  const auto cd = coordinate_descent(G, M, Eigen::VectorXd::Zero(6), Eigen::VectorXd::Zero(6), 1e-13, 100000);
  CHECK(testing::max_abs_diff(cd.rho, G.ldlt().solve(M)) < 1e-8);
}

TEST_CASE("full shrinkage") {
  const auto G = ref_G();
  const auto M = ref_M();
  const Eigen::VectorXd t = Eigen::VectorXd::Constant(4, M.cwiseAbs().maxCoeff());
  const auto cd = coordinate_descent(G, M, t, Eigen::VectorXd::Zero(4), 1e-12, 1000);
  CHECK(cd.rho.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("weighted lasso against a conic solver") {
  const Eigen::Vector4d t(0.1, 0.2, 0.3, 0.15);
  const Eigen::Vector4d expect(0.49251152073733423, -0.4318356374808118, 0.0, 0.44527649769584193);
  std::vector<double> trace;
  const auto cd = coordinate_descent(ref_G(), ref_M(), t, Eigen::VectorXd::Zero(4), 1e-13, 100000, &trace);
  CHECK(testing::max_abs_diff(cd.rho, expect) < 1e-8);
  CHECK(cd.rho(2) == 0.0);
  CHECK(kkt_residual(ref_G(), ref_M(), t, cd.rho) < 1e-10);
  for (std::size_t k = 1; k < trace.size(); ++k) CHECK(trace[k] <= trace[k - 1] + 1e-14);
  CHECK(lasso_md_objective(ref_G(), ref_M(), t, cd.rho) <= lasso_md_objective(ref_G(), ref_M(), t, expect) + 1e-12);
}

TEST_CASE("zero diagonal columns stay at zero") {
  Eigen::MatrixXd G = ref_G();
  G.row(1).setZero();
  G.col(1).setZero();
  Eigen::VectorXd M = ref_M();
  M(1) = 0.05;
  const auto cd = coordinate_descent(G, M, Eigen::Vector4d::Constant(0.1), Eigen::VectorXd::Zero(4), 1e-12, 1000);
  CHECK(cd.rho(1) == 0.0);
  // Beyond the threshold the objective has no minimum along that term.
  M(1) = 0.7;
  CHECK_THROWS(coordinate_descent(G, M, Eigen::Vector4d::Constant(0.1), Eigen::VectorXd::Zero(4), 1e-12, 1000));
}

TEST_CASE("normalization entries") {
  RieszProblem prob;
  prob.basis.resize(2, 2);
  prob.basis << 1.0, 2.0, 1.0, -1.0;
  prob.moments.resize(2, 2);
  prob.moments << 0.0, 1.0, 0.0, 1.0;
  const Eigen::Vector2d rho(1.0, 0.5);
  // b'rho = 2, 0.5; entries sqrt(mean((b_j b'rho - m_j)^2)).
  const auto D = md_normalization(prob, rho);
  CHECK(D(0) == doctest::Approx(std::sqrt((4.0 + 0.25) / 2)));
  CHECK(D(1) == doctest::Approx(std::sqrt((9.0 + 2.25) / 2)));
  CHECK(prob.gram()(0, 1) == doctest::Approx(0.5));
  CHECK(prob.moment_vector()(1) == 1.0);
}

TEST_CASE("tuned fit with a zero target") {
  CounterRng rng(8);
  RieszProblem prob;
  prob.basis.resize(60, 5);
  for (Eigen::Index i = 0; i < 60; ++i) {
    prob.basis(i, 0) = 1.0;
    for (Eigen::Index j = 1; j < 5; ++j) prob.basis(i, j) = rng.normal();
  }
  prob.moments = Eigen::MatrixXd::Zero(60, 5);
  prob.intercepts = {0};
  const auto fit = fit_lasso_md(prob, LassoMDConfig{});
  CHECK(fit.coefficients.cwiseAbs().maxCoeff() == 0.0);
  CHECK(fit.converged);
}

TEST_CASE("tuned fit satisfies its own KKT bound") {
  CounterRng rng(21);
  RieszProblem prob;
  const int n = 200, p = 12;
  prob.basis.resize(n, p);
  prob.moments.resize(n, p);
  for (int i = 0; i < n; ++i) {
    const double d = rng.bernoulli(0.5) ? 1.0 : 0.0;
    for (int j = 0; j < p / 2; ++j) {
      const double q = j == 0 ? 1.0 : rng.normal();
      prob.basis(i, j) = d * q;
      prob.basis(i, j + p / 2) = (1 - d) * q;
      prob.moments(i, j) = q;
      prob.moments(i, j + p / 2) = -q;
    }
  }
  const auto fit = fit_lasso_md(prob, LassoMDConfig{});
  CHECK(fit.converged);
  CHECK(fit.outer_iters <= 10);
  CHECK(fit.r_L == doctest::Approx(theoretical_r_L(n, p, 1.0, 0.1)));
  CHECK(kkt_residual(prob.gram(), prob.moment_vector(), fit.thresholds, fit.coefficients) < 1e-6);
  // Balance: |M - G rho|_j never exceeds the effective threshold.
  const Eigen::VectorXd gap = (prob.moment_vector() - prob.gram() * fit.coefficients).cwiseAbs();
  for (int j = 0; j < p; ++j) CHECK(gap(j) <= fit.thresholds(j) + 1e-6);
}

TEST_CASE("config validation") {
  LassoMDConfig c;
  c.c2 = 2.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  DantzigConfig d;
  d.lambda = -1.0;
  CHECK_THROWS_AS(d.validate(), ValidationError);
}

TEST_CASE("dantzig trivial and one-dimensional cases") {
  const auto zero = fit_dantzig_md(ref_G(), ref_M(), DantzigConfig{1.0});
  CHECK(zero.coefficients.cwiseAbs().maxCoeff() == 0.0);
  const auto one = fit_dantzig_md(Eigen::MatrixXd::Ones(1, 1), Eigen::VectorXd::Constant(1, 2.0), DantzigConfig{0.5});
  CHECK(std::abs(one.coefficients(0) - 1.5) < 1e-10);
}

TEST_CASE("dantzig against an external LP solver") {
  const auto fit = fit_dantzig_md(ref_G(), ref_M(), DantzigConfig{0.25});
  const Eigen::Vector4d expect(0.41532258064516125, -0.3830645161290322, 0.0, 0.34274193548387094);
  CHECK(std::abs(fit.coefficients.lpNorm<1>() - 1.1411290322580645) < 1e-9);
  CHECK(testing::max_abs_diff(fit.coefficients, expect) < 1e-9);
  CHECK((ref_M() - ref_G() * fit.coefficients).cwiseAbs().maxCoeff() <= 0.25 + 1e-8);
}

TEST_CASE("dantzig against vertex enumeration") {
  CounterRng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t p = 1 + rng.below(5);
    const auto G = random_spd(p, rng);
    Eigen::VectorXd M(static_cast<Eigen::Index>(p));
    for (auto& m : M) m = rng.normal();
    const double lambda = 0.05 + 0.3 * rng.uniform();
    const auto oracle = oracle_dantzig_small(G, M, lambda);
    const auto fit = fit_dantzig_md(G, M, DantzigConfig{lambda});
    CHECK(std::abs(fit.coefficients.lpNorm<1>() - oracle.objective) < 1e-6);
  }
}

TEST_CASE("simplex on small programs") {
  // max x + y  s.t. x + 2y <= 4, 3x + y <= 6.
  LinearProgram lp;
  lp.A.resize(2, 2);
  lp.A << 1, 2, 3, 1;
  lp.b = Eigen::Vector2d(4, 6);
  lp.c = Eigen::Vector2d(-1, -1);
  const auto r = solve_lp(lp);
  REQUIRE(r.status == LpStatus::optimal);
  CHECK(r.x(0) == doctest::Approx(1.6));
  CHECK(r.x(1) == doctest::Approx(1.2));
  CHECK(r.objective == doctest::Approx(-2.8));

  // x >= 1 written as -x <= -1 needs phase one.
  LinearProgram need;
  need.A = -Eigen::MatrixXd::Ones(1, 1);
  need.b = Eigen::VectorXd::Constant(1, -1.0);
  need.c = Eigen::VectorXd::Ones(1);
  const auto n1 = solve_lp(need);
  REQUIRE(n1.status == LpStatus::optimal);
  CHECK(n1.x(0) == doctest::Approx(1.0));

  LinearProgram infeasible;
  infeasible.A.resize(2, 1);
  infeasible.A << 1, -1;
  infeasible.b = Eigen::Vector2d(1, -2);
  infeasible.c = Eigen::VectorXd::Ones(1);
  CHECK(solve_lp(infeasible).status == LpStatus::infeasible);

  LinearProgram unbounded;
  unbounded.A = Eigen::MatrixXd::Ones(1, 2);
  unbounded.A(0, 1) = -1;
  unbounded.b = Eigen::VectorXd::Ones(1);
  unbounded.c = Eigen::Vector2d(0, -1);
  CHECK(solve_lp(unbounded).status == LpStatus::unbounded);
}
