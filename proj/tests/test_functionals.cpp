#include <cmath>

#include "doctest.h"
#include "helpers.hpp"

#include "autodml/error.hpp"
#include "autodml/functionals.hpp"
#include "autodml/rng.hpp"

using namespace autodml;

namespace {

std::vector<std::size_t> rows_of(const Dataset& d) { return all_rows(d.n_rows()); }

Dataset aev_data(double income) {
  return Dataset({"y", "p1", "z1"}, {0.0, 1.5, income, 1.0, 1.2, income});
}

}  // namespace

TEST_CASE("ate moment vector on arm-split terms") {
  const Dataset data({"y", "d", "q1"}, {0.0, 1.0, 2.0, 0.0, 0.0, 4.0}, {}, {"y", "d", ""});
  const auto dict = parse_dictionary("q1; split(d)", data.names());
  const auto m = moment_of_dictionary(MomentFunctional::ate("d"), dict, data, rows_of(data));
  CHECK(m.n_used == 2);
  CHECK(m.values(0) == 3.0);
  CHECK(m.values(1) == -3.0);
}

TEST_CASE("treatment without variation") {
  const Dataset data({"y", "d"}, {0.0, 1.0, 2.0, 1.0});
  CHECK_THROWS_WITH_AS(MomentFunctional::ate("d").validate(data), doctest::Contains("no variation in treatment"),
                       ValidationError);
  const Dataset bad({"y", "d"}, {0.0, 1.0, 2.0, 0.5});
  CHECK_THROWS_AS(MomentFunctional::cross_average("d").validate(bad), ValidationError);
}

TEST_CASE("average derivative of (1, d)") {
  const Dataset data({"y", "d"}, {0.0, 0.3, 1.0, 2.7, 5.0, -1.0});
  const auto dict = parse_dictionary("const; d", data.names());
  const auto m = moment_of_dictionary(MomentFunctional::avg_derivative("d"), dict, data, rows_of(data));
  CHECK(m.values(0) == 0.0);
  CHECK(m.values(1) == 1.0);
}

TEST_CASE("weighted average derivative") {
  const Dataset data({"y", "x", "w"}, {0.0, 1.0, 2.0, 0.0, 3.0, 4.0});
  const auto dict = parse_dictionary("x^2", data.names());
  const auto m = moment_of_dictionary(MomentFunctional::avg_derivative("x", "w"), dict, data, rows_of(data));
  CHECK(m.values(0) == doctest::Approx((2 * 2 * 1 + 4 * 2 * 3) / 2.0));
}

TEST_CASE("identity transport has zero moments") {
  const Dataset data({"y", "x", "z"}, {0.0, 1.0, 2.0, 1.0, -2.0, 0.5});
  const auto dict = parse_dictionary("const; poly(x,z,2)", data.names());
  const auto m = moment_of_dictionary(MomentFunctional::transport({{"x", 1.0, 0.0}}), dict, data, rows_of(data));
  CHECK(m.values.cwiseAbs().maxCoeff() == 0.0);
  const auto shifted = moment_of_dictionary(MomentFunctional::transport({{"x", 1.0, 1.0}}), dict, data, rows_of(data));
  // x -> x + 1 moves E[x] by 1 and E[x^2] by 2 E[x] + 1.
  CHECK(shifted.values(1) == doctest::Approx(1.0));
}

TEST_CASE("policy effect with point masses") {
  const Dataset data({"y", "x", "z"}, {0.0, 1.0, 2.0, 0.0, 3.0, 4.0});
  const auto dict = parse_dictionary("x; z", data.names());
  const auto f = MomentFunctional::policy_effect({{{{"x", 2.0}}, 1.0}, {{{"x", 0.0}}, -1.0}});
  const auto m = moment_of_dictionary(f, dict, data, rows_of(data));
  CHECK(m.values(0) == doctest::Approx(2.0));
  CHECK(m.values(1) == doctest::Approx(0.0));
}

TEST_CASE("aev bound quadrature gives ln 2") {
  const auto data = aev_data(1.0);
  const auto dict = parse_dictionary("const", data.names());
  AevBoundParams a{"p1", "z1", "", 1.0, 2.0, 0.0, 32};
  const auto m = moment_of_dictionary(MomentFunctional::aev_bound(a), dict, data, rows_of(data));
  CHECK(std::abs(m.values(0) - 0.6931471805599453) < 1e-10);
}

TEST_CASE("aev bound with discounting against frozen quadrature") {
  const auto data = aev_data(2.0);
  AevBoundParams a{"p1", "z1", "", 1.0, 2.0, 1.0, 32};
  const auto m1 = moment_of_dictionary(MomentFunctional::aev_bound(a), parse_dictionary("p1", data.names()), data,
                                       rows_of(data));
  CHECK(std::abs(m1.values(0) - 1.2642411176571154) < 1e-10);

  const auto data3 = aev_data(3.0);
  a.kappa = 0.5;
  const auto m2 = moment_of_dictionary(MomentFunctional::aev_bound(a), parse_dictionary("p1^2", data3.names()), data3,
                                       rows_of(data3));
  CHECK(std::abs(m2.values(0) - 3.4432641668967978) < 1e-10);
}

TEST_CASE("aev bound is stable under doubling the order") {
  const Dataset data({"y", "p1", "z1", "x"}, {0.0, 1.5, 2.0, 0.3, 1.0, 1.2, 3.5, -1.0});
  const auto dict = parse_dictionary("const; poly(p1,x,3)", data.names());
  AevBoundParams a{"p1", "z1", "", 0.5, 2.5, 0.7, 16};
  const auto lo = moment_of_dictionary(MomentFunctional::aev_bound(a), dict, data, rows_of(data));
  a.order = 32;
  const auto hi = moment_of_dictionary(MomentFunctional::aev_bound(a), dict, data, rows_of(data));
  CHECK(testing::max_abs_diff(lo.values, hi.values) < 1e-8);
  a.lower = 3.0;
  CHECK_THROWS_AS(MomentFunctional::aev_bound(a).validate(data), ValidationError);
}

TEST_CASE("gauss legendre integrates polynomials") {
  const auto [x, w] = gauss_legendre(5, -1.0, 3.0);
  double s = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) s += w[k] * std::pow(x[k], 9);
  CHECK(s == doctest::Approx((std::pow(3.0, 10) - 1.0) / 10.0).epsilon(1e-13));
}

TEST_CASE("plug-in rows") {
  const Dataset data({"y", "d", "z"}, {1.0, 1.0, 0.5, 2.0, 0.0, -0.5, 0.0, 1.0, 2.0}, {}, {"y", "d", ""});
  const auto rows = rows_of(data);
  const auto unit = RegressionFit::from_function([](std::span<const double> r) { return r[1]; });
  for (double v : moment_of_regression(MomentFunctional::ate("d"), unit, data, rows)) CHECK(v == 1.0);

  const auto constant = RegressionFit::from_function([](std::span<const double>) { return 2.5; });
  const auto cross = moment_of_regression(MomentFunctional::cross_average("d"), constant, data, rows);
  CHECK(cross == std::vector<double>{2.5, 0.0, 2.5});

  const auto dict = std::make_shared<const Dictionary>(parse_dictionary("const; d", data.names()));
  const auto linear = RegressionFit::from_coefficients(dict, Eigen::Vector2d(0.7, -1.25));
  for (double v : moment_of_regression(MomentFunctional::avg_derivative("d"), linear, data, rows))
    CHECK(v == -1.25);
}

TEST_CASE("gram matrices") {
  const Dataset data({"x"}, {-1.0, 1.0});
  const auto one = gram(parse_dictionary("const", data.names()), data, rows_of(data));
  CHECK(one.values.rows() == 1);
  CHECK(one.values(0, 0) == 1.0);
  const auto two = gram(parse_dictionary("const; x", data.names()), data, rows_of(data));
  CHECK(two.values == Eigen::Matrix2d::Identity());
  CHECK(two.n_used == 2);
}

TEST_CASE("gram and moments match brute force on a random subset") {
  CounterRng rng(3);
  std::vector<double> v;
  for (int i = 0; i < 40; ++i) {
    v.push_back(rng.normal());
    v.push_back(rng.bernoulli(0.5) ? 1.0 : 0.0);
    v.push_back(rng.normal());
  }
  const Dataset data({"y", "d", "z"}, v, {}, {"y", "d", ""});
  const auto dict = parse_dictionary("const; poly(z,2); split(d)", data.names());
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < 40; i += 3) rows.push_back(i);
  const auto G = gram(dict, data, rows);
  const auto M = moment_of_dictionary(MomentFunctional::ate("d"), dict, data, rows);
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(6, 6);
  Eigen::VectorXd m = Eigen::VectorXd::Zero(6);
  for (auto i : rows) {
    const double z = data(i, 2), d = data(i, 1);
    const double q[3] = {1.0, z, z * z};
    Eigen::VectorXd b(6);
    for (int k = 0; k < 3; ++k) {
      b(k) = d * q[k];
      b(k + 3) = (1 - d) * q[k];
      m(k) += q[k];
      m(k + 3) -= q[k];
    }
    g += b * b.transpose();
  }
  g /= static_cast<double>(rows.size());
  m /= static_cast<double>(rows.size());
  CHECK(testing::max_abs_diff(G.values, g) < 1e-14);
  CHECK(testing::max_abs_diff(M.values, m) < 1e-14);
  CHECK(moment_rows(MomentFunctional::ate("d"), dict, data, rows).rows() == static_cast<Eigen::Index>(rows.size()));
}
