#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace autodml {

struct LassoMDConfig {
  double c1 = 1.0;
  double c2 = 0.1;
  double c3 = 0.1;
  double low_dim_fraction = 1.0 / 40.0;
  std::size_t max_outer_iters = 10;
  double ridge_shift = 0.2;
  double tolerance = 1e-8;        // max coefficient change per sweep
  double outer_tolerance = 1e-6;  // max coefficient change between outer iterations
  std::size_t max_sweeps = 100000;
  std::optional<double> fixed_r_L;
  double r_L_multiplier = 1.0;

  // Switches that peel the tuner back to plainer variants.
  bool normalize = true;           // D-hat updates; off means unit loadings and one solve
  bool low_dim_init = true;        // start from the low-dimensional fit, else from zero
  bool warm_start = true;
  bool intercept_discount = true;  // c3 on the intercept terms of the problem

  void validate() const;
};

struct DantzigConfig {
  double lambda = 0.0;
  double tolerance = 1e-9;

  void validate() const;
};

enum class RieszLearner { lasso_md, dantzig_md };

struct RieszFit {
  Eigen::VectorXd coefficients;
  double r_L = 0.0;                 // lambda_D for Dantzig fits
  Eigen::VectorXd normalization;    // D-hat after the ridge shift
  Eigen::VectorXd thresholds;       // effective per-term thresholds
  std::size_t outer_iters = 0;
  std::size_t sweeps = 0;
  double kkt_residual = 0.0;
  bool converged = true;
  bool outer_converged = true;
  bool pseudo_inverse_init = false;
  RieszLearner learner = RieszLearner::lasso_md;
};

// Per-row inputs of the minimum distance problem on a training subset:
// basis(i, j) = b_j(X_i), moments(i, j) = m(W_i, b_j).
struct RieszProblem {
  Eigen::MatrixXd basis;
  Eigen::MatrixXd moments;
  // Terms penalized at c3 times the usual level: the constant, or an arm
  // indicator when the dictionary is split by treatment.
  std::vector<Eigen::Index> intercepts;

  Eigen::MatrixXd gram() const;
  Eigen::VectorXd moment_vector() const;
};

// c1 / sqrt(n) * Phi^{-1}(1 - c2 / (2p)).
double theoretical_r_L(std::size_t n_used, std::size_t p, double c1, double c2);

// Minimizer over rho_j of (1/2) z rho_j^2 - pi rho_j + threshold |rho_j|.
double soft_threshold_update(double pi, double z, double threshold);

struct CoordinateDescentResult {
  Eigen::VectorXd rho;
  std::size_t sweeps = 0;
  bool converged = false;
};

// Minimizes rho'G rho - 2 rho'M + 2 sum_j thresholds_j |rho_j| by cyclic
// coordinate descent in ascending index order. Columns with G_jj == 0 are
// held at zero. When `objective_trace` is given, the objective after every
// sweep is appended to it.
CoordinateDescentResult coordinate_descent(const Eigen::MatrixXd& G, const Eigen::VectorXd& M,
                                           const Eigen::VectorXd& thresholds,
                                           const Eigen::VectorXd& start, double tolerance,
                                           std::size_t max_sweeps,
                                           std::vector<double>* objective_trace = nullptr);

double lasso_md_objective(const Eigen::MatrixXd& G, const Eigen::VectorXd& M,
                          const Eigen::VectorXd& thresholds, const Eigen::VectorXd& rho);

// Largest KKT violation of the weighted problem:
// max(0, |M_j - (G rho)_j| - t_j) on zero coordinates and
// |M_j - (G rho)_j - sign(rho_j) t_j| on the rest.
double kkt_residual(const Eigen::MatrixXd& G, const Eigen::VectorXd& M,
                    const Eigen::VectorXd& thresholds, const Eigen::VectorXd& rho);

// D-hat entries: sqrt(mean_i (b_ij * b_i'rho - m_ij)^2), floored at 1e-12.
Eigen::VectorXd md_normalization(const RieszProblem& problem, const Eigen::VectorXd& rho);

// Full tuning loop: low-dimensional start, D-hat / r_L / rho updates with
// warm starts until the coefficients settle or max_outer_iters is reached.
RieszFit fit_lasso_md(const RieszProblem& problem, const LassoMDConfig& config);
RieszFit fit_lasso_md(const RieszProblem& problem, const Eigen::MatrixXd& G, const Eigen::VectorXd& M,
                      const LassoMDConfig& config);

// min |rho|_1 subject to |M - G rho|_inf <= lambda, via the (u, v) split LP.
RieszFit fit_dantzig_md(const Eigen::MatrixXd& G, const Eigen::VectorXd& M, const DantzigConfig& config);

std::string to_string(RieszLearner learner);

}  // namespace autodml
