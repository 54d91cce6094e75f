#include <cmath>

#include "doctest.h"
#include "helpers.hpp"

#include "autodml/error.hpp"
#include "autodml/functionals.hpp"
#include "autodml/sim.hpp"

using namespace autodml;

TEST_CASE("sparse linear design is reproducible") {
  const auto a = generate(AppendixA3Design{100, 101, 1});
  const auto b = generate(AppendixA3Design{100, 101, 1});
  REQUIRE(a.data.n_cols() == 101);
  for (std::size_t j = 0; j < 101; ++j) CHECK(a.data(0, j) == b.data(0, j));
  CHECK(a.data(0, 0) == -0x1.83f8f8057f11ep-1);
  CHECK(a.data(0, 1) == -0x1.ced805e687295p-6);
  CHECK(a.data(99, 100) == 0x1.5dbed9f44b61bp-2);
  const auto rho0 = appendix_a3_rho0(101);
  CHECK(rho0.head(3) == Eigen::Vector3d::Ones());
  CHECK(rho0.tail(98).cwiseAbs().maxCoeff() == 0.0);
  CHECK(parse_dictionary(appendix_a3_dictionary(101), a.data.names()).size() == 101);
}

TEST_CASE("null effect design") {
  AteLogisticDesign d;
  d.tau = 0.0;
  d.tau_z = {0.0, 0.0, 0.0};
  d.n = 50;
  const auto sim = generate(d);
  CHECK(*sim.truth.theta == 0.0);
  for (std::size_t i = 0; i < 50; ++i) {
    auto row = std::vector<double>(sim.data.row(i).begin(), sim.data.row(i).end());
    row[1] = 1.0;
    const double g1 = sim.truth.gamma(row);
    row[1] = 0.0;
    CHECK(g1 == sim.truth.gamma(row));
  }
}

TEST_CASE("riesz representer of the sparse design") {
  RieszSparseDesign d;
  d.n = 20000;
  d.seed = 5;
  const auto sim = generate(d);
  // E[alpha0 b] equals E[d b / d x1] for b in the dictionary.
  const auto dict = parse_dictionary(riesz_sparse_dictionary(5), sim.data.names());
  const auto rows = all_rows(d.n);
  const auto M = moment_of_dictionary(MomentFunctional::avg_derivative("x1"), dict, sim.data, rows);
  Eigen::VectorXd ab = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dict.size()));
  for (auto i : rows) ab += sim.truth.alpha(sim.data.row(i)) * dict.eval_row(sim.data.row(i)) / static_cast<double>(d.n);
  CHECK(testing::max_abs_diff(M.values, ab) < 0.1);
  CHECK(*sim.truth.theta == 1.0);
}

TEST_CASE("panel design") {
  PanelSlopesDesign d;
  d.clusters = 3000;
  d.seed = 2;
  const auto sim = generate(d);
  CHECK(sim.data.cluster_count() == 3000);
  const auto y = sim.data.column("y");
  double mean = 0.0;
  for (double v : y) mean += v / static_cast<double>(y.size());
  CHECK(mean == doctest::Approx(panel_slopes_mean_outcome(d)).epsilon(0.02));
  CHECK(*sim.truth.theta == d.beta);
}

TEST_CASE("binary choice design") {
  const auto sim = generate(BinaryChoiceDesign{});
  CHECK(sim.data.n_rows() == 4000);
  CHECK(sim.truth.theta_vector.size() == 3);
  CHECK(sim.data.names() == std::vector<std::string>{"y", "d", "one", "v1", "z"});
}

TEST_CASE("replications do not depend on the thread count") {
  auto fn = [](std::size_t r, std::uint64_t seed) {
    AteLogisticDesign d;
    d.n = 30;
    d.seed = seed;
    return Eigen::Vector2d(static_cast<double>(r), generate(d).data(0, 0));
  };
  const auto one = run_replications(12, 4, fn, 1);
  const auto many = run_replications(12, 4, fn, 4);
  CHECK(one == many);
  CHECK(one(7, 0) == 7.0);
}

TEST_CASE("bootstrap of a mean") {
  AteLogisticDesign d;
  d.n = 2000;
  d.seed = 9;
  const auto data = generate(d).data;
  auto mean_y = [](const Dataset& s) {
    const auto y = s.column("y");
    double m = 0.0;
    for (double v : y) m += v / static_cast<double>(y.size());
    return Eigen::VectorXd::Constant(1, m);
  };
  const auto boot = oracle_bootstrap(mean_y, data, 1000, 3);
  const auto y = data.column("y");
  const double m = mean_y(data)(0);
  double s2 = 0.0;
  for (double v : y) s2 += (v - m) * (v - m) / static_cast<double>(y.size() - 1);
  const double analytic = std::sqrt(s2 / static_cast<double>(y.size()));
  CHECK(std::abs(boot.std_error(0) / analytic - 1.0) < 0.10);
  CHECK(boot.draws.rows() == 1000);

  const auto flat = oracle_bootstrap([](const Dataset&) { return Eigen::VectorXd::Constant(1, 2.0); }, data, 50, 3);
  CHECK(flat.std_error(0) == 0.0);
}

TEST_CASE("singleton clusters resample like rows") {
  AteLogisticDesign d;
  d.n = 80;
  const auto data = generate(d).data;
  std::vector<std::int64_t> ids(80);
  for (std::size_t i = 0; i < 80; ++i) ids[i] = static_cast<std::int64_t>(i);
  auto stat = [](const Dataset& s) {
    double t = 0.0;
    for (std::size_t i = 0; i < s.n_rows(); ++i) t += s(i, 0) * (1.0 + static_cast<double>(i % 3));
    return Eigen::VectorXd::Constant(1, t);
  };
  const auto rows = oracle_bootstrap(stat, data, 40, 6);
  const auto clusters = oracle_bootstrap(stat, data.with_cluster_ids(ids), 40, 6);
  CHECK(rows.draws == clusters.draws);
}

TEST_CASE("dantzig vertex oracle") {
  const auto o = oracle_dantzig_small(Eigen::MatrixXd::Ones(1, 1), Eigen::VectorXd::Constant(1, 2.0), 0.5);
  CHECK(o.rho(0) == doctest::Approx(1.5));
  CHECK(o.objective == doctest::Approx(1.5));
  CHECK(o.vertices > 0);
  CHECK_THROWS_AS(oracle_dantzig_small(Eigen::MatrixXd::Identity(7, 7), Eigen::VectorXd::Zero(7), 0.1),
                  ValidationError);
}

TEST_CASE("comparison table runs") {
  const auto names = appendix_a3_variants();
  CHECK(names.front() == "lasso");
  CHECK(names.back() == "final");
  const auto one = run_appendix_a3({"lasso", "final"}, 1, 100, 4);
  REQUIRE(one.size() == 2);
  CHECK(one[0].mse.size() == 1);
  CHECK(one[0].mse_median == one[0].mse_mean);
  CHECK(one[1].sse_median == doctest::Approx(101 * one[1].mse_median));
  CHECK_THROWS_AS(run_appendix_a3({"elastic_net"}, 1, 100, 4), ValidationError);

  const auto data = generate(AppendixA3Design{100, 101, 8}).data;
  const auto lasso = fit_appendix_a3_variant(data, "lasso");
  CHECK(lasso.size() == 101);
}
