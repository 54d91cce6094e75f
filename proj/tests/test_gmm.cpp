#include <cmath>

#include "doctest.h"
#include "helpers.hpp"

#include "autodml/error.hpp"
#include "autodml/gmm.hpp"
#include "autodml/rng.hpp"
#include "autodml/sim.hpp"

using namespace autodml;

namespace {

SimData binary_sample(std::size_t n, std::uint64_t seed) {
  BinaryChoiceDesign d;
  d.n = n;
  d.seed = seed;
  return generate(d);
}

const char* kBinaryDict = "const; poly(z,3); split(d)";

BinaryChoiceModel probit() { return BinaryChoiceModel("d", {"one", "v1"}, {"one", "v1", "z"}); }

RegressionSpec ols_on(const Dictionary& dict) {
  RegressionSpec r;
  r.method = RegressionMethod::ols;
  r.dictionary = std::make_shared<const Dictionary>(dict);
  return r;
}

}  // namespace

TEST_CASE("double split needs three folds") {
  const auto sim = binary_sample(300, 1);
  const auto dict = parse_dictionary(kBinaryDict, sim.data.names());
  CHECK_THROWS_WITH_AS(initial_estimators(probit(), sim.data, make_folds(sim.data, 2, 1), ols_on(dict), GmmConfig{}),
                       "need L >= 3 for double split", ValidationError);
}

TEST_CASE("linear model gateaux rows are the plain moments") {
  const auto data = load_csv(testing::data_file("ate200.csv"), {{"y", "d", ""}, {}});
  const auto dict = parse_dictionary(ate_logistic_dictionary(3), data.names());
  const auto folds = make_folds(data, 5, 2);
  const LinearGmmModel model(MomentFunctional::ate("d"));
  for (std::size_t l = 0; l < 5; ++l) {
    const auto M = gateaux_M(model, l, dict, data, folds, {});
    const auto ref = moment_of_dictionary(MomentFunctional::ate("d"), dict, data, folds.rows_not_in(l));
    CHECK(testing::max_abs_diff(M.col(0), ref.values) < 1e-12);
  }
}

TEST_CASE("linear model reproduces the estimator") {
  const auto data = load_csv(testing::data_file("ate200.csv"), {{"y", "d", ""}, {}});
  const auto dict = parse_dictionary(ate_logistic_dictionary(3), data.names());
  const auto folds = make_folds(data, 5, 9);
  const auto est = estimate(MomentFunctional::ate("d"), dict, data, folds, RieszSpec{}, RegressionSpec{});
  const LinearGmmModel model(MomentFunctional::ate("d"));
  const auto g = fit_gmm(model, dict, data, folds, GmmConfig{});
  CHECK(std::abs(g.theta(0) - est.theta) < 1e-10);
  CHECK(std::abs(g.covariance(0, 0) - est.variance) < 1e-10);
  CHECK(g.converged);

  GmmConfig scaled;
  scaled.weight = Eigen::MatrixXd::Constant(1, 1, 7.5);
  CHECK(std::abs(fit_gmm(model, dict, data, folds, scaled).theta(0) - est.theta) < 1e-10);
}

TEST_CASE("binary choice gateaux vanishes when delta is zero") {
  const auto sim = binary_sample(400, 3);
  const auto dict = parse_dictionary(kBinaryDict, sim.data.names());
  const auto folds = make_folds(sim.data, 4, 3);
  auto initial = initial_estimators(probit(), sim.data, folds, ols_on(dict), GmmConfig{});
  for (auto& e : initial) e.theta(2) = 0.0;
  const auto M = gateaux_M(probit(), 0, dict, sim.data, folds, initial);
  CHECK(M.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("exactly identified initial estimators zero the sample moment") {
  const auto sim = binary_sample(600, 4);
  const auto dict = parse_dictionary(kBinaryDict, sim.data.names());
  const auto folds = make_folds(sim.data, 3, 4);
  const auto model = probit();
  const auto initial = initial_estimators(model, sim.data, folds, ols_on(dict), GmmConfig{});
  REQUIRE(initial.size() == 3);
  for (const auto& e : initial) {
    CHECK(e.converged);
    const auto rows = folds.rows_not_in(e.a, e.b);
    const Eigen::MatrixXd cache = model.cache(sim.data, rows, e.gamma);
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(3), g(3);
    Eigen::MatrixXd jac(3, 3);
    for (std::size_t s = 0; s < rows.size(); ++s) {
      model.evaluate(sim.data, rows[s], cache.row(static_cast<Eigen::Index>(s)), e.theta, g, jac);
      mean += g / static_cast<double>(rows.size());
    }
    CHECK(mean.cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("binary choice gateaux and jacobian against central differences") {
  const auto sim = binary_sample(50, 5);
  const auto& data = sim.data;
  const auto dict = parse_dictionary(kBinaryDict, data.names());
  const auto rows = all_rows(data.n_rows());
  CounterRng rng(12);
  const auto gamma = RegressionFit::from_coefficients(
      std::make_shared<const Dictionary>(dict),
      Eigen::VectorXd::NullaryExpr(static_cast<Eigen::Index>(dict.size()), [&] { return 0.3 * rng.normal(); }));
  for (const auto link : {Link::probit, Link::logit}) {
    const BinaryChoiceModel model("d", {"one", "v1"}, {"one", "v1", "z"}, link);
    const Eigen::Vector3d theta(-0.2, 0.4, 0.9);
    std::vector<Eigen::MatrixXd> G;
    model.gateaux(data, rows, model.cache(data, rows, gamma), theta, dict, G);
    const double h = 1e-6;
    double worst = 0.0;
    for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(dict.size()); ++j) {
      auto shifted = [&](double tau) {
        return RegressionFit::from_function([&, tau, j](std::span<const double> r) {
          return predict(gamma, r) + tau * dict.eval_row(r)(j);
        });
      };
      const Eigen::MatrixXd up = model.cache(data, rows, shifted(h));
      const Eigen::MatrixXd down = model.cache(data, rows, shifted(-h));
      Eigen::VectorXd gu(3), gd(3);
      Eigen::MatrixXd jac(3, 3);
      for (std::size_t i = 0; i < rows.size(); ++i) {
        model.evaluate(data, i, up.row(static_cast<Eigen::Index>(i)), theta, gu, jac);
        model.evaluate(data, i, down.row(static_cast<Eigen::Index>(i)), theta, gd, jac);
        for (Eigen::Index k = 0; k < 3; ++k)
          worst = std::max(worst, std::abs((gu(k) - gd(k)) / (2 * h) - G[static_cast<std::size_t>(k)](static_cast<Eigen::Index>(i), j)));
      }
    }
    CHECK(worst < 1e-6);

    const Eigen::MatrixXd cache = model.cache(data, rows, gamma);
    Eigen::VectorXd g0(3), gp(3), gm(3);
    Eigen::MatrixXd jac(3, 3), dummy(3, 3);
    double jworst = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      model.evaluate(data, i, cache.row(static_cast<Eigen::Index>(i)), theta, g0, jac);
      for (Eigen::Index c = 0; c < 3; ++c) {
        Eigen::VectorXd tp = theta, tm = theta;
        tp(c) += h;
        tm(c) -= h;
        model.evaluate(data, i, cache.row(static_cast<Eigen::Index>(i)), tp, gp, dummy);
        model.evaluate(data, i, cache.row(static_cast<Eigen::Index>(i)), tm, gm, dummy);
        jworst = std::max(jworst, ((gp - gm) / (2 * h) - jac.col(c)).cwiseAbs().maxCoeff());
      }
    }
    CHECK(jworst < 1e-6);
  }
}

TEST_CASE("binary choice fit recovers the planted parameters") {
  const auto sim = binary_sample(4000, 8);
  const auto dict = parse_dictionary(kBinaryDict, sim.data.names());
  const auto model = probit();
  const auto rep = fit_gmm(model, dict, sim.data, make_folds(sim.data, 5, 8), GmmConfig{});
  CHECK(rep.converged);
  CHECK(rep.names == std::vector<std::string>{"beta[one]", "beta[v1]", "delta"});
  for (Eigen::Index k = 0; k < 3; ++k) CHECK(std::abs(rep.theta(k) - sim.truth.theta_vector(k)) < 4 * rep.std_error(k));
  CHECK(rep.influence.rows() == 4000);
  CHECK(rep.influence.cols() == 3);

  GmmConfig scaled;
  scaled.weight = 3.0 * Eigen::MatrixXd::Identity(3, 3);
  const auto again = fit_gmm(model, dict, sim.data, make_folds(sim.data, 5, 8), scaled);
  CHECK(testing::max_abs_diff(again.theta, rep.theta) < 1e-8);
}

TEST_CASE("gmm validation") {
  const auto sim = binary_sample(200, 2);
  const auto dict = parse_dictionary(kBinaryDict, sim.data.names());
  CHECK_THROWS_AS(BinaryChoiceModel("d", {"one", "v1"}, {"one"}), ValidationError);
  CHECK_THROWS_AS(parse_link("cauchit"), ValidationError);
  GmmConfig asym;
  asym.weight = Eigen::MatrixXd::Identity(3, 3);
  asym.weight(0, 1) = 0.5;
  CHECK_THROWS_AS(fit_gmm(probit(), dict, sim.data, make_folds(sim.data, 5, 1), asym), ValidationError);
  GmmConfig box;
  box.lower = Eigen::VectorXd::Zero(2);
  CHECK_THROWS_AS(fit_gmm(probit(), dict, sim.data, make_folds(sim.data, 5, 1), box), ValidationError);
}
