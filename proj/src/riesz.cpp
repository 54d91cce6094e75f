#include "autodml/riesz.hpp"

#include <algorithm>
#include <cmath>

#include <boost/math/distributions/normal.hpp>

#include "autodml/error.hpp"
#include "autodml/simplex.hpp"

namespace autodml {

void LassoMDConfig::validate() const {
  if (!(c1 > 0)) throw ValidationError("riesz.c1 must be positive");
  if (!(c2 > 0 && c2 < 1)) throw ValidationError("riesz.c2 must lie in (0, 1)");
  if (!(c3 > 0)) throw ValidationError("riesz.c3 must be positive");
  if (!(tolerance > 0) || !(outer_tolerance > 0)) throw ValidationError("riesz tolerances must be positive");
  if (!(low_dim_fraction > 0 && low_dim_fraction <= 1)) throw ValidationError("riesz.low_dim_fraction must lie in (0, 1]");
  if (max_outer_iters == 0) throw ValidationError("riesz.max_outer_iters must be at least 1");
  if (!(ridge_shift >= 0)) throw ValidationError("riesz.ridge_shift must be non-negative");
  if (fixed_r_L && !(*fixed_r_L >= 0)) throw ValidationError("riesz.r_L must be non-negative");
  if (!(r_L_multiplier > 0)) throw ValidationError("riesz.r_L_multiplier must be positive");
}

void DantzigConfig::validate() const {
  if (!(lambda > 0) || !std::isfinite(lambda)) throw ValidationError("riesz.lambda must be positive");
  if (!(tolerance > 0)) throw ValidationError("riesz.lp_tolerance must be positive");
}

Eigen::MatrixXd RieszProblem::gram() const {
  const double n = static_cast<double>(basis.rows());
  Eigen::MatrixXd G = (basis.transpose() * basis) / n;
  return 0.5 * (G + G.transpose());
}

Eigen::VectorXd RieszProblem::moment_vector() const {
  return moments.colwise().mean().transpose();
}

double theoretical_r_L(std::size_t n_used, std::size_t p, double c1, double c2) {
  if (n_used == 0 || p == 0) throw ValidationError("r_L needs n_used > 0 and p >= 1");
  if (!(c1 > 0) || !(c2 > 0) || !(c2 < 2.0 * static_cast<double>(p)))
    throw ValidationError("r_L needs c1 > 0 and 0 < c2 < 2p");
  const boost::math::normal standard;
  const double tail = c2 / (2.0 * static_cast<double>(p));
  const double q = boost::math::quantile(boost::math::complement(standard, tail));
  return c1 / std::sqrt(static_cast<double>(n_used)) * q;
}

double soft_threshold_update(double pi, double z, double threshold) {
  if (!(z > 0)) throw NumericalError("degenerate diagonal");
  if (pi < -threshold) return (pi + threshold) / z;
  if (pi > threshold) return (pi - threshold) / z;
  return 0.0;
}

double lasso_md_objective(const Eigen::MatrixXd& G, const Eigen::VectorXd& M,
                          const Eigen::VectorXd& thresholds, const Eigen::VectorXd& rho) {
  return rho.dot(G * rho) - 2.0 * rho.dot(M) + 2.0 * thresholds.dot(rho.cwiseAbs());
}

double kkt_residual(const Eigen::MatrixXd& G, const Eigen::VectorXd& M,
                    const Eigen::VectorXd& thresholds, const Eigen::VectorXd& rho) {
  const Eigen::VectorXd gap = M - G * rho;
  double worst = 0.0;
  for (Eigen::Index j = 0; j < rho.size(); ++j) {
    double v;
    if (rho[j] == 0.0) {
      v = std::max(0.0, std::abs(gap[j]) - thresholds[j]);
    } else {
      v = std::abs(gap[j] - (rho[j] > 0 ? 1.0 : -1.0) * thresholds[j]);
    }
    worst = std::max(worst, v);
  }
  return worst;
}

CoordinateDescentResult coordinate_descent(const Eigen::MatrixXd& G, const Eigen::VectorXd& M,
                                           const Eigen::VectorXd& thresholds,
                                           const Eigen::VectorXd& start, double tolerance,
                                           std::size_t max_sweeps, std::vector<double>* objective_trace) {
  const Eigen::Index p = M.size();
  if (G.rows() != p || G.cols() != p || thresholds.size() != p || start.size() != p)
    throw ValidationError("coordinate descent dimensions disagree");

  CoordinateDescentResult out;
  out.rho = start;
  for (Eigen::Index j = 0; j < p; ++j) {
    if (G(j, j) > 0.0) continue;
    if (std::abs(M[j]) > thresholds[j])
      throw NumericalError("objective unbounded along a dictionary term that is zero on the sample");
    out.rho[j] = 0.0;
  }
  Eigen::VectorXd Grho = G * out.rho;

  while (out.sweeps < max_sweeps) {
    double change = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) {
      const double z = G(j, j);
      if (z <= 0.0) continue;
      const double old = out.rho[j];
      const double pi = M[j] - Grho[j] + z * old;
      const double fresh = soft_threshold_update(pi, z, thresholds[j]);
      const double delta = fresh - old;
      if (delta != 0.0) {
        Grho.noalias() += G.col(j) * delta;
        out.rho[j] = fresh;
        change = std::max(change, std::abs(delta));
      }
    }
    ++out.sweeps;
    if (objective_trace) objective_trace->push_back(lasso_md_objective(G, M, thresholds, out.rho));
    if (change < tolerance) {
      out.converged = true;
      break;
    }
    // Refresh the running product now and then so rounding cannot accumulate.
    if (out.sweeps % 64 == 0) Grho = G * out.rho;
  }
  return out;
}

Eigen::VectorXd md_normalization(const RieszProblem& problem, const Eigen::VectorXd& rho) {
  const Eigen::VectorXd fitted = problem.basis * rho;
  const Eigen::MatrixXd resid = (problem.basis.array().colwise() * fitted.array()).matrix() - problem.moments;
  Eigen::VectorXd D = (resid.array().square().colwise().mean()).sqrt().transpose();
  return D.cwiseMax(1e-12);
}

namespace {

struct LowDimStart {
  Eigen::VectorXd rho;
  bool pseudo_inverse = false;
};

LowDimStart low_dim_start(const Eigen::MatrixXd& G, const Eigen::VectorXd& M, double fraction) {
  const auto p = static_cast<std::size_t>(M.size());
  auto k = static_cast<std::size_t>(std::ceil(static_cast<double>(p) * fraction - 1e-12));
  k = std::clamp<std::size_t>(k, 1, p);
  const auto kk = static_cast<Eigen::Index>(k);
  LowDimStart out;
  out.rho = Eigen::VectorXd::Zero(M.size());
  const Eigen::MatrixXd Glow = G.topLeftCorner(kk, kk);
  Eigen::FullPivLU<Eigen::MatrixXd> lu(Glow);
  if (lu.isInvertible() && lu.rcond() > 1e-12) {
    out.rho.head(kk) = lu.solve(M.head(kk));
  } else {
    out.rho.head(kk) = Glow.completeOrthogonalDecomposition().solve(M.head(kk));
    out.pseudo_inverse = true;
  }
  return out;
}

}  // namespace

RieszFit fit_lasso_md(const RieszProblem& problem, const LassoMDConfig& config) {
  return fit_lasso_md(problem, problem.gram(), problem.moment_vector(), config);
}

RieszFit fit_lasso_md(const RieszProblem& problem, const Eigen::MatrixXd& G, const Eigen::VectorXd& M,
                      const LassoMDConfig& config) {
  config.validate();
  const Eigen::Index p = M.size();
  if (p == 0) throw ValidationError("empty dictionary");
  if (problem.basis.rows() == 0) throw ValidationError("no training rows for the Riesz fit");

  RieszFit fit;
  fit.learner = RieszLearner::lasso_md;
  fit.r_L = config.fixed_r_L ? *config.fixed_r_L
                             : theoretical_r_L(static_cast<std::size_t>(problem.basis.rows()),
                                               static_cast<std::size_t>(p), config.c1, config.c2);
  fit.r_L *= config.r_L_multiplier;

  Eigen::VectorXd weights = Eigen::VectorXd::Ones(p);
  if (config.intercept_discount) {
    for (const auto j : problem.intercepts) {
      if (j < 0 || j >= p) throw ValidationError("intercept index out of range");
      weights[j] = config.c3;
    }
  }

  Eigen::VectorXd rho = Eigen::VectorXd::Zero(p);
  if (config.low_dim_init) {
    auto start = low_dim_start(G, M, config.low_dim_fraction);
    rho = std::move(start.rho);
    fit.pseudo_inverse_init = start.pseudo_inverse;
  }

  if (!config.normalize) {
    fit.normalization = Eigen::VectorXd::Ones(p);
    fit.thresholds = fit.r_L * weights;
    auto cd = coordinate_descent(G, M, fit.thresholds, rho, config.tolerance, config.max_sweeps);
    fit.coefficients = std::move(cd.rho);
    fit.sweeps = cd.sweeps;
    fit.converged = cd.converged;
    fit.outer_iters = 1;
  } else {
    fit.outer_converged = false;
    for (std::size_t it = 0; it < config.max_outer_iters; ++it) {
      fit.normalization = md_normalization(problem, rho).array() + config.ridge_shift;
      fit.thresholds = fit.r_L * weights.cwiseProduct(fit.normalization);
      const Eigen::VectorXd from = config.warm_start ? rho : Eigen::VectorXd::Zero(p);
      auto cd = coordinate_descent(G, M, fit.thresholds, from, config.tolerance, config.max_sweeps);
      const double change = (cd.rho - rho).cwiseAbs().maxCoeff();
      rho = std::move(cd.rho);
      fit.sweeps += cd.sweeps;
      fit.converged = cd.converged;
      fit.outer_iters = it + 1;
      if (change < config.outer_tolerance) {
        fit.outer_converged = true;
        break;
      }
    }
    fit.coefficients = rho;
  }
  if (!fit.coefficients.allFinite()) throw NumericalError("Lasso minimum distance fit produced non-finite coefficients");
  fit.kkt_residual = kkt_residual(G, M, fit.thresholds, fit.coefficients);
  return fit;
}

RieszFit fit_dantzig_md(const Eigen::MatrixXd& G, const Eigen::VectorXd& M, const DantzigConfig& config) {
  config.validate();
  const Eigen::Index p = M.size();
  if (G.rows() != p || G.cols() != p) throw ValidationError("Dantzig dimensions disagree");

  LinearProgram lp;
  lp.A.resize(2 * p, 2 * p);
  lp.A << G, -G, -G, G;
  lp.b.resize(2 * p);
  lp.b << M.array() + config.lambda, config.lambda - M.array();
  lp.c = Eigen::VectorXd::Ones(2 * p);

  SimplexOptions options;
  options.feasibility_tolerance = config.tolerance;
  const LpResult res = solve_lp(lp, options);
  if (res.status == LpStatus::infeasible) throw NumericalError("Dantzig program infeasible");
  if (res.status == LpStatus::unbounded) throw NumericalError("Dantzig program unbounded");

  RieszFit fit;
  fit.learner = RieszLearner::dantzig_md;
  fit.r_L = config.lambda;
  fit.normalization = Eigen::VectorXd::Ones(p);
  fit.thresholds = Eigen::VectorXd::Constant(p, config.lambda);
  fit.outer_iters = 1;
  fit.sweeps = res.pivots;
  if (res.status != LpStatus::optimal) {
    fit.converged = false;
    fit.coefficients = Eigen::VectorXd::Zero(p);
  } else {
    fit.coefficients = res.x.head(p) - res.x.tail(p);
  }
  fit.kkt_residual = std::max(0.0, (M - G * fit.coefficients).cwiseAbs().maxCoeff() - config.lambda);
  return fit;
}

std::string to_string(RieszLearner learner) {
  return learner == RieszLearner::lasso_md ? "lasso_md" : "dantzig_md";
}

}  // namespace autodml
