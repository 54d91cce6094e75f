#include "doctest.h"
#include "helpers.hpp"

#include "autodml/error.hpp"
#include "autodml/regression.hpp"
#include "autodml/rng.hpp"
#include "autodml/sim.hpp"

using namespace autodml;

namespace {

std::shared_ptr<const Dictionary> dict_for(const std::string& spec, const Dataset& data) {
  return std::make_shared<const Dictionary>(parse_dictionary(spec, data.names()));
}

Dataset noisy_x(std::size_t n, std::uint64_t seed, double (*f)(double), double noise) {
  CounterRng rng(seed);
  std::vector<double> v;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = rng.normal(), z = rng.normal();
    v.insert(v.end(), {f(x) + noise * rng.normal(), x, z});
  }
  return Dataset({"y", "x", "z"}, v, {}, {"y", "", ""});
}

}  // namespace

TEST_CASE("ols through two points") {
  const Dataset data({"y", "x"}, {0.0, 0.0, 1.0, 1.0}, {}, {"y", "", ""});
  const auto fit = fit_ols(data, all_rows(2), dict_for("const; x", data));
  CHECK(fit.coefficients(0) == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(fit.coefficients(1) == doctest::Approx(1.0));
  CHECK_FALSE(fit.pseudo_inverse);
}

TEST_CASE("rank deficient ols is flagged") {
  const Dataset data({"y", "x", "w"}, {1.0, 1.0, 2.0, 2.0, 2.0, 4.0, 2.5, 3.0, 6.0}, {}, {"y", "", ""});
  const auto fit = fit_ols(data, all_rows(3), dict_for("const; x; w", data));
  CHECK(fit.pseudo_inverse);
  const Eigen::MatrixXd B = fit.dictionary->eval_rows(data, all_rows(3));
  const Eigen::VectorXd resid = Eigen::Vector3d(1.0, 2.0, 2.5) - B * fit.coefficients;
  // Least squares still holds: residuals orthogonal to the basis.
  CHECK((B.transpose() * resid).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("noiseless recovery with a vanishing penalty") {
  const auto data = noisy_x(200, 4, [](double x) { return x; }, 0.0);
  LassoMDConfig cfg;
  cfg.fixed_r_L = 0.0;
  const auto fit = fit_regression_lasso(data, all_rows(200), dict_for("x; z; x^2", data), cfg);
  CHECK(testing::max_abs_diff(fit.coefficients, Eigen::Vector3d(1, 0, 0)) < 1e-6);
  REQUIRE(fit.lasso);
  CHECK(fit.lasso->r_L == 0.0);
}

TEST_CASE("constant outcome keeps the intercept") {
  const auto data = noisy_x(300, 9, [](double) { return 3.0; }, 0.0);
  const auto fit = fit_regression_lasso(data, all_rows(300), dict_for("const; poly(x,z,2)", data), LassoMDConfig{});
  CHECK(fit.coefficients(0) == doctest::Approx(3.0).epsilon(0.02));
  CHECK(fit.coefficients.tail(5).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(fit.lasso);
  const Eigen::MatrixXd B = fit.dictionary->eval_rows(data, all_rows(300));
  const Eigen::MatrixXd G = B.transpose() * B / 300.0;
  const Eigen::VectorXd M = B.transpose() * Eigen::VectorXd::Constant(300, 3.0) / 300.0;
  CHECK(kkt_residual(G, M, fit.lasso->thresholds, fit.coefficients) < 1e-6);
}

TEST_CASE("tuned regression lands near the truth") {
  const auto data = noisy_x(2000, 12, [](double x) { return 1.0 + 2.0 * x; }, 1.0);
  const auto fit = fit_regression_lasso(data, all_rows(2000), dict_for("const; poly(x,z,2)", data), LassoMDConfig{});
  CHECK(fit.coefficients(0) == doctest::Approx(1.0).epsilon(0.1));
  CHECK(fit.coefficients(1) == doctest::Approx(2.0).epsilon(0.1));
}

TEST_CASE("shooting lasso against scikit-learn") {
  Eigen::MatrixXd X(8, 3);
  X << 1.0, 0.5, -1.2, 0.3, -0.7, 0.8, -1.1, 1.4, 0.2, 0.9, 0.1, -0.4,
       -0.2, -1.3, 1.1, 1.6, 0.6, 0.3, -0.8, 0.2, -1.5, 0.4, -0.9, 0.7;
  Eigen::VectorXd y(8);
  y << 1.2, -0.4, 0.9, 0.7, -1.0, 2.1, -0.6, -0.3;
  const auto r = lasso_shooting(X, y, Eigen::Vector3d::Constant(0.1), 1e-14);
  CHECK(r.converged);
  CHECK(testing::max_abs_diff(r.beta, Eigen::Vector3d(0.6454949806524463, 0.7873311392335339, 0.0)) < 1e-9);
}

TEST_CASE("counterfactual predictions") {
  const Dataset data({"y", "d"}, {0.0, 0.0, 0.0, 1.0});
  const auto fit = RegressionFit::from_coefficients(dict_for("d", data), Eigen::VectorXd::Ones(1));
  Override one, zero;
  one.set(1, 1.0);
  zero.set(1, 0.0);
  CHECK(predict(fit, data, 0, one) == 1.0);
  CHECK(predict(fit, data, 0, zero) == 0.0);
  CHECK(predict(fit, data, 1) == 1.0);
  CHECK(predict(fit, data, 0, {}, std::size_t{1}) == 1.0);
}

TEST_CASE("external prediction table") {
  testing::TempDir dir;
  const auto p = dir.write("pred.csv", "row_id,point_tag,value\n0,plain,2.0\n0,d1,3.0\n");
  const auto table = std::make_shared<const PredictionTable>(load_prediction_table(p));
  CHECK(table->size() == 2);
  const auto fit = RegressionFit::from_table(table);
  const Dataset data({"y", "d"}, {0.0, 1.0});
  CHECK(predict(fit, data, 0, {}, std::nullopt, "d1") == 3.0);
  CHECK(predict(fit, data, 0) == 2.0);
  CHECK_THROWS_AS(predict(fit, data, 0, {}, std::nullopt, "d0"), ValidationError);
  CHECK_THROWS_AS(load_prediction_table(dir.write("bad.csv", "row,tag\n1,2\n")), ValidationError);
}

TEST_CASE("function fits") {
  const auto fit = RegressionFit::from_function([](std::span<const double> r) { return r[0] * r[0]; },
                                                [](std::span<const double> r, std::size_t) { return 2 * r[0]; });
  const Dataset data({"x"}, {3.0});
  CHECK(predict(fit, data, 0) == 9.0);
  CHECK(predict(fit, data, 0, {}, std::size_t{0}) == 6.0);
  Override o;
  o.set(0, 2.0);
  CHECK(predict(fit, data.row(0), o) == 4.0);
}
