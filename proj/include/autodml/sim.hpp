#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "autodml/dataset.hpp"
#include "autodml/dictionary.hpp"
#include "autodml/regression.hpp"

namespace autodml {

// Closed forms a design admits. Empty members mean "not available".
struct DesignTruth {
  std::optional<double> theta;
  Eigen::VectorXd theta_vector;  // multi-parameter designs
  RowFunction gamma;
  RowPartial gamma_partial;
  RowFunction alpha;
};

struct SimData {
  Dataset data;
  DesignTruth truth;
};

// Y = X'rho0 + eps, X = (1, X_1..X_{p-1}), X_j and eps iid N(0,1),
// rho0 = (1, 1, 1, 0, ...). Columns y, x1..x{p-1}.
struct AppendixA3Design {
  std::size_t n = 100;
  std::size_t p = 101;
  std::uint64_t seed = 1;
};
SimData generate(const AppendixA3Design& d);
Eigen::VectorXd appendix_a3_rho0(std::size_t p);
// const; x1; ...; x{p-1}
std::string appendix_a3_dictionary(std::size_t p);

// Z ~ N(0, I_k), pi0(z) = clip(logistic(a'z), clip, 1 - clip), D ~ Bernoulli(pi0),
// gamma0(d, z) = b0 + b'z + d (tau + tau_z'z), Y = gamma0 + N(0,1).
// Columns y, d, z1..zk. theta = ATE = tau; alpha0 = d/pi0 - (1-d)/(1-pi0).
struct AteLogisticDesign {
  std::size_t n = 1000;
  std::uint64_t seed = 1;
  std::vector<double> propensity{0.6, -0.4, 0.3};
  double base = 1.0;
  std::vector<double> slopes{1.0, 0.5, -0.5};
  double tau = 1.0;
  std::vector<double> tau_z{0.5, 0.0, 0.0};
  double clip = 0.05;
};
SimData generate(const AteLogisticDesign& d);
double ate_logistic_propensity(const AteLogisticDesign& d, std::span<const double> z);
// split(d) over (const, z_j, z_j z_k for j <= k).
std::string ate_logistic_dictionary(std::size_t k);

// X ~ N(0, I_k), Y = x1 + 0.5 x1^2 + x2 + eps. Average derivative in x1 has
// Riesz representer alpha0(x) = x1 and theta0 = 1. Columns y, x1..xk.
struct RieszSparseDesign {
  std::size_t n = 1000;
  std::size_t k = 5;
  std::uint64_t seed = 1;
};
SimData generate(const RieszSparseDesign& d);
// const; poly(x1..xk, 2)
std::string riesz_sparse_dictionary(std::size_t k);

// Binary choice with expectations: Y = a0 + a1 z + d (tau + tau_z z) + N(0,1),
// D = 1(beta0 + beta1 v1 + delta (tau + tau_z z) > eps), eps ~ N(0,1).
// Columns y, d, one, v1, z; theta0 = (beta0, beta1, delta).
struct BinaryChoiceDesign {
  std::size_t n = 4000;
  std::uint64_t seed = 1;
  double beta0 = -0.25;
  double beta1 = 0.5;
  double delta = 1.0;
  double a0 = 0.0;
  double a1 = 0.5;
  double tau = 0.5;
  double tau_z = 1.0;
};
SimData generate(const BinaryChoiceDesign& d);

// Panel with planted random slopes: cluster i has T_i ~ U{t_min..t_max} rows,
// x_it = mu_i + u_it with mu_i ~ N(0, between_sd^2), u_it ~ N(0, 1),
// Y_it = a + lambda_a xbar_i + c_i + (beta + lambda_b xbar_i + eta_i) x_it + eps.
// Columns y, x; cluster ids 0..clusters-1. theta0 = beta (average derivative).
struct PanelSlopesDesign {
  std::size_t clusters = 200;
  std::size_t t_min = 2;
  std::size_t t_max = 6;
  std::uint64_t seed = 1;
  double a = 5.0;
  double lambda_a = 0.5;
  double beta = -1.0;
  double lambda_b = 0.5;
  double slope_noise = 0.3;
  double between_sd = 0.5;
};
SimData generate(const PanelSlopesDesign& d);
// Row-weighted E[Y].
double panel_slopes_mean_outcome(const PanelSlopesDesign& d);

// Exact Dantzig optimum for p <= 6 by enumerating vertices of
// {|M - G rho|_inf <= lambda} cut by the coordinate hyperplanes.
struct DantzigOracle {
  Eigen::VectorXd rho;
  double objective = 0.0;
  std::size_t vertices = 0;
};
DantzigOracle oracle_dantzig_small(const Eigen::MatrixXd& G, const Eigen::VectorXd& M, double lambda);

// Nonparametric bootstrap: rows, or whole clusters when the data carry ids.
// Resampled clusters get fresh ids so repeated draws stay distinct.
struct BootstrapResult {
  Eigen::MatrixXd draws;  // reps x dim
  Eigen::VectorXd std_error;
};
BootstrapResult oracle_bootstrap(const std::function<Eigen::VectorXd(const Dataset&)>& statistic, const Dataset& data,
                                 std::size_t reps, std::uint64_t seed, std::size_t threads = 0);

// Runs fn(r, derive_seed(seed, r)) for r < reps; row r of the result is its output.
Eigen::MatrixXd run_replications(std::size_t reps, std::uint64_t seed,
                                 const std::function<Eigen::VectorXd(std::size_t, std::uint64_t)>& fn,
                                 std::size_t threads = 0);

// Rows of the Lasso comparison table, each adding one technique.
std::vector<std::string> appendix_a3_variants();
// Coefficients from one variant on one sample.
Eigen::VectorXd fit_appendix_a3_variant(const Dataset& data, const std::string& variant);

struct A3Summary {
  std::string variant;
  double mse_median = 0.0;  // |rho-hat - rho0|^2 / p
  double mse_mean = 0.0;
  double sse_median = 0.0;  // |rho-hat - rho0|^2
  double r2_mean = 0.0;     // hold-out R^2
  std::vector<double> mse;
};
std::vector<A3Summary> run_appendix_a3(const std::vector<std::string>& variants, std::size_t reps, std::size_t n,
                                       std::uint64_t seed, std::size_t threads = 0);

}  // namespace autodml
