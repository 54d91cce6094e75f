#include "doctest.h"
#include "helpers.hpp"

#include "autodml/dictionary.hpp"
#include "autodml/error.hpp"
#include "autodml/rng.hpp"

using namespace autodml;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index k = 0;
  for (double x : v) out(k++) = x;
  return out;
}

}  // namespace

TEST_CASE("polynomial row") {
  const auto dict = parse_dictionary("const; poly(z,2)", {"y", "z"});
  const std::vector<double> row{0.0, 2.0};
  CHECK(dict.eval_row(row) == vec({1, 2, 4}));
  CHECK(dict.has_intercept());
}

TEST_CASE("arm split") {
  const auto dict = parse_dictionary("q1; split(d)", {"d", "q1"});
  CHECK(dict.size() == 2);
  const std::vector<double> row{1.0, 3.0};
  CHECK(dict.eval_row(row) == vec({3, 0}));
  const std::vector<double> other{0.0, 3.0};
  CHECK(dict.eval_row(other) == vec({0, 3}));
}

TEST_CASE("constant only") {
  const auto dict = parse_dictionary("const", {"a", "b"});
  const std::vector<double> row{5.0, -1.0};
  CHECK(dict.eval_row(row) == vec({1}));
}

TEST_CASE("constant moves to the front") {
  const auto dict = parse_dictionary("x; const; x^2", {"x"});
  CHECK(dict.labels().front() == TermSpec::constant().label());
  CHECK(dict.has_intercept());
}

TEST_CASE("exact partials") {
  const auto dict = parse_dictionary("const; d; d^2*z", {"d", "z"});
  const std::vector<double> row{3.0, 2.0};
  CHECK(dict.eval_partial(row, 0) == vec({0, 1, 12}));
  const auto zonly = parse_dictionary("z", {"d", "z"});
  CHECK(zonly.eval_partial(row, 0) == vec({0}));
}

TEST_CASE("treatment block cannot be differentiated in its treatment") {
  const auto dict = parse_dictionary("z; split(d)", {"d", "z"});
  const std::vector<double> row{1.0, 2.0};
  CHECK_THROWS_AS(dict.eval_partial(row, 0), ValidationError);
  CHECK(dict.eval_partial(row, 1) == vec({1, 0}));
}

TEST_CASE("counterfactual substitution") {
  const auto dict = parse_dictionary("d*z", {"d", "z"});
  const std::vector<double> row{0.0, 5.0};
  Override to_one;
  to_one.set(0, 1.0);
  CHECK(dict.eval_counterfactual(row, to_one) == vec({5}));
  CHECK(row[0] == 0.0);
  CHECK(dict.eval_counterfactual(row, Override{}) == dict.eval_row(row));

  const auto x = parse_dictionary("x", {"x"});
  const std::vector<double> xr{2.0};
  Override shift;
  shift.set(0, xr[0] + 1.0);
  CHECK(x.eval_counterfactual(xr, shift) == vec({3}));
}

TEST_CASE("unknown override column") {
  const Dataset data({"d", "z"}, {0.0, 1.0});
  CHECK_THROWS_AS(make_override(data, {{"w", 1.0}}), ValidationError);
}

TEST_CASE("grammar") {
  const std::vector<std::string> cols{"d", "x", "z"};
  CHECK(parse_dictionary("poly(x,z,2)", cols).size() == 5);
  CHECK(parse_dictionary("const; x; z; interact(d,*)", cols).size() == 5);
  CHECK(parse_dictionary("const; poly(x,z,2); split(d)", cols).size() == 12);
  CHECK_THROWS_AS(parse_dictionary("w", cols), ValidationError);
  CHECK_THROWS_AS(parse_dictionary("", cols), ValidationError);
  CHECK_THROWS_AS(parse_dictionary("x; x", cols), ValidationError);
  CHECK_THROWS_AS(parse_dictionary("spline(x,3)", cols), ValidationError);
  CHECK_THROWS_AS(parse_dictionary("poly(x,0)", cols), ValidationError);
  CHECK_THROWS_AS(parse_dictionary("x; split(d); split(d)", cols), ValidationError);

  const auto inter = parse_dictionary("const; x; interact(d,*)", cols);
  const std::vector<double> row{2.0, 3.0, 0.0};
  CHECK(inter.eval_row(row) == vec({1, 3, 6}));
}

TEST_CASE("fully interacted and split helpers") {
  const Dictionary full(fully_interacted_terms("d", {"z1", "z2"}), {"d", "z1", "z2"});
  CHECK(full.size() == 6);
  const std::vector<double> row{1.0, 2.0, 3.0};
  CHECK(full.eval_row(row) == vec({1, 1, 2, 3, 2, 3}));
  const Dictionary sp(split_terms("d", {TermSpec::constant(), TermSpec::monomial("z1")}), {"d", "z1", "z2"});
  CHECK(sp.eval_row(row) == vec({1, 2, 0, 0}));
}

TEST_CASE("panel dictionary hand example") {
  // Cluster A: x in {1, 3}; cluster B: x in {2, 4}.
  const Dataset data({"x"}, {1.0, 3.0, 2.0, 4.0}, {10, 10, 20, 20});
  const auto base = parse_dictionary("x", data.names());
  const auto panel = build_panel_dictionary(data, base);
  CHECK(panel.base_size == 1);
  CHECK(panel.dictionary.size() == 2);
  CHECK(panel.h_mean(0) == doctest::Approx(2.5));
  CHECK(panel.evaluations(0, 0) == 1.0);
  CHECK(panel.evaluations(0, 1) == doctest::Approx(-0.5).epsilon(1e-15));
  CHECK(panel.evaluations(3, 1) == doctest::Approx(4.0 * 0.5).epsilon(1e-15));
  const auto direct = panel.dictionary.eval_row(panel.data.row(1));
  CHECK(direct(1) == doctest::Approx(3.0 * -0.5));
}

TEST_CASE("panel dictionary with one cluster centers to zero") {
  const Dataset data({"x"}, {1.0, 3.0, 7.0}, {5, 5, 5});
  const auto panel = build_panel_dictionary(data, parse_dictionary("const; x", data.names()));
  CHECK(panel.dictionary.size() == 6);
  for (Eigen::Index i = 0; i < 3; ++i)
    for (Eigen::Index j = 2; j < 6; ++j) CHECK(panel.evaluations(i, j) == 0.0);
  CHECK_THROWS_AS(build_panel_dictionary(Dataset({"x"}, {1.0}), parse_dictionary("x", {"x"})), ValidationError);
}

TEST_CASE("partials agree with central differences") {
  const std::vector<std::string> cols{"d", "x", "z"};
  const auto dict = parse_dictionary("const; poly(x,z,3); d^2*z; interact(d,*)", cols);
  CounterRng rng(17);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> row{rng.normal(), rng.normal(), rng.normal()};
    for (std::size_t wrt = 0; wrt < 3; ++wrt) {
      const double h = 1e-5;
      auto up = row, down = row;
      up[wrt] += h;
      down[wrt] -= h;
      const Eigen::VectorXd fd = (dict.eval_row(up) - dict.eval_row(down)) / (2 * h);
      worst = std::max(worst, testing::max_abs_diff(fd, dict.eval_partial(row, wrt)));
    }
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("eval_rows and sup norm") {
  const Dataset data({"x"}, {-3.0, 1.0, 2.0});
  const auto dict = parse_dictionary("const; x^2", data.names());
  const std::vector<std::size_t> rows{2, 0};
  const Eigen::MatrixXd B = dict.eval_rows(data, rows);
  CHECK(B(0, 1) == 4.0);
  CHECK(B(1, 1) == 9.0);
  CHECK(dict.sup_norm(data) == 9.0);
}
