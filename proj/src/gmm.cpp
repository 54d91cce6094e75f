#include "autodml/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>

#include "autodml/error.hpp"
#include "autodml/parallel.hpp"

namespace autodml {

Eigen::MatrixXd LinearGmmModel::cache(const Dataset& data, std::span<const std::size_t> rows,
                                      const RegressionFit& gamma) const {
  const auto m = moment_of_regression(f_, gamma, data, rows);
  return Eigen::Map<const Eigen::VectorXd>(m.data(), static_cast<Eigen::Index>(m.size()));
}

void LinearGmmModel::evaluate(const Dataset&, std::size_t, const Eigen::Ref<const Eigen::RowVectorXd>& cache,
                              const Eigen::VectorXd& theta, Eigen::Ref<Eigen::VectorXd> g,
                              Eigen::Ref<Eigen::MatrixXd> jacobian) const {
  g[0] = cache[0] - theta[0];
  jacobian(0, 0) = -1.0;
}

void LinearGmmModel::gateaux(const Dataset& data, std::span<const std::size_t> rows, const Eigen::MatrixXd&,
                             const Eigen::VectorXd&, const Dictionary& dict, std::vector<Eigen::MatrixXd>& out) const {
  out.assign(1, moment_rows(f_, dict, data, rows));
}

BinaryChoiceModel::BinaryChoiceModel(std::string treatment, std::vector<std::string> v_columns,
                                     std::vector<std::string> h_columns, Link link)
    : treatment_(std::move(treatment)), v_(std::move(v_columns)), h_(std::move(h_columns)), link_(link) {
  if (h_.size() < v_.size() + 1) throw ValidationError("binary choice needs at least as many instruments as parameters");
}

std::vector<std::string> BinaryChoiceModel::parameter_names() const {
  std::vector<std::string> names;
  for (const auto& v : v_) names.push_back("beta[" + v + "]");
  names.push_back("delta");
  return names;
}

void BinaryChoiceModel::validate(const Dataset& data) const {
  MomentFunctional::ate(treatment_).validate(data);
  for (const auto& v : v_) data.column_index(v);
  for (const auto& h : h_) data.column_index(h);
}

double BinaryChoiceModel::cdf(double t) const {
  if (link_ == Link::probit) return 0.5 * std::erfc(-t / std::numbers::sqrt2);
  return 1.0 / (1.0 + std::exp(-t));
}

double BinaryChoiceModel::pdf(double t) const {
  if (link_ == Link::probit) return std::exp(-0.5 * t * t) / std::sqrt(2.0 * std::numbers::pi);
  const double e = 1.0 / (1.0 + std::exp(-t));
  return e * (1.0 - e);
}

Eigen::MatrixXd BinaryChoiceModel::cache(const Dataset& data, std::span<const std::size_t> rows,
                                         const RegressionFit& gamma) const {
  // Row layout: gamma(1,z) - gamma(0,z), d, v..., h...
  const auto d = data.column_index(treatment_);
  std::vector<std::size_t> vi, hi;
  for (const auto& v : v_) vi.push_back(data.column_index(v));
  for (const auto& h : h_) hi.push_back(data.column_index(h));
  Override one, zero;
  one.set(d, 1.0);
  zero.set(d, 0.0);
  const auto kv = static_cast<Eigen::Index>(v_.size());
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), 2 + kv + static_cast<Eigen::Index>(h_.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    const std::size_t i = rows[k];
    out(kk, 0) = predict(gamma, data, i, one, std::nullopt, "d1") - predict(gamma, data, i, zero, std::nullopt, "d0");
    out(kk, 1) = data(i, d);
    for (Eigen::Index j = 0; j < kv; ++j) out(kk, 2 + j) = data(i, vi[static_cast<std::size_t>(j)]);
    for (std::size_t m = 0; m < h_.size(); ++m) out(kk, 2 + kv + static_cast<Eigen::Index>(m)) = data(i, hi[m]);
  }
  return out;
}

double BinaryChoiceModel::index(const Eigen::Ref<const Eigen::RowVectorXd>& cache, const Eigen::VectorXd& theta) const {
  const auto kv = static_cast<Eigen::Index>(v_.size());
  return cache.segment(2, kv).dot(theta.head(kv)) + theta[kv] * cache[0];
}

void BinaryChoiceModel::evaluate(const Dataset&, std::size_t, const Eigen::Ref<const Eigen::RowVectorXd>& cache,
                                 const Eigen::VectorXd& theta, Eigen::Ref<Eigen::VectorXd> g,
                                 Eigen::Ref<Eigen::MatrixXd> jacobian) const {
  const auto kv = static_cast<Eigen::Index>(v_.size());
  const auto r = static_cast<Eigen::Index>(h_.size());
  const double t = index(cache, theta);
  const double F = cdf(t), f = pdf(t);
  const auto h = cache.segment(2 + kv, r);
  g = h.transpose() * (cache[1] - F);
  jacobian.leftCols(kv) = -f * h.transpose() * cache.segment(2, kv);
  jacobian.col(kv) = -f * cache[0] * h.transpose();
}

void BinaryChoiceModel::gateaux(const Dataset& data, std::span<const std::size_t> rows, const Eigen::MatrixXd& cache,
                                const Eigen::VectorXd& theta, const Dictionary& dict,
                                std::vector<Eigen::MatrixXd>& out) const {
  const auto d = data.column_index(treatment_);
  const auto kv = static_cast<Eigen::Index>(v_.size());
  Override one, zero;
  one.set(d, 1.0);
  zero.set(d, 0.0);
  const auto p = static_cast<Eigen::Index>(dict.size());
  const auto n = static_cast<Eigen::Index>(rows.size());
  out.assign(h_.size(), Eigen::MatrixXd(n, p));
  Eigen::VectorXd b1(p), b0(p);
  for (Eigen::Index k = 0; k < n; ++k) {
    const std::size_t i = rows[static_cast<std::size_t>(k)];
    const double scale = -pdf(index(cache.row(k), theta)) * theta[kv];
    dict.eval_counterfactual(data.row(i), one, b1);
    dict.eval_counterfactual(data.row(i), zero, b0);
    for (std::size_t m = 0; m < h_.size(); ++m)
      out[m].row(k) = (scale * cache(k, 2 + kv + static_cast<Eigen::Index>(m))) * (b1 - b0).transpose();
  }
}

Link parse_link(const std::string& s) {
  if (s == "probit") return Link::probit;
  if (s == "logit") return Link::logit;
  throw ValidationError("unknown link '" + s + "' (probit, logit)");
}

namespace {

// Sample mean of the debiased moments and of their theta-Jacobian over `rows`.
struct MomentCache {
  const GmmModel* model = nullptr;
  const Dataset* data = nullptr;
  std::vector<std::size_t> rows;
  Eigen::MatrixXd cache;       // rows x width
  Eigen::MatrixXd correction;  // rows x r, or empty

  void mean(const Eigen::VectorXd& theta, Eigen::VectorXd& psi, Eigen::MatrixXd& J) const {
    const auto r = static_cast<Eigen::Index>(model->moments());
    const auto k = static_cast<Eigen::Index>(model->parameters());
    psi = Eigen::VectorXd::Zero(r);
    J = Eigen::MatrixXd::Zero(r, k);
    Eigen::VectorXd g(r);
    Eigen::MatrixXd jac(r, k);
    for (std::size_t s = 0; s < rows.size(); ++s) {
      const auto ss = static_cast<Eigen::Index>(s);
      model->evaluate(*data, rows[s], cache.row(ss), theta, g, jac);
      psi += g;
      if (correction.size()) psi += correction.row(ss).transpose();
      J += jac;
    }
    const double n = static_cast<double>(rows.size());
    psi /= n;
    J /= n;
  }
};

struct OptimResult {
  Eigen::VectorXd theta;
  double objective = 0.0;
  double gradient = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

Eigen::VectorXd project(Eigen::VectorXd theta, const Eigen::VectorXd& lower, const Eigen::VectorXd& upper) {
  if (lower.size()) theta = theta.cwiseMax(lower);
  if (upper.size()) theta = theta.cwiseMin(upper);
  return theta;
}

double golden_section(const std::function<double(double)>& q, double a, double b) {
  const double ratio = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - ratio * (b - a), d = a + ratio * (b - a);
  double fc = q(c), fd = q(d);
  for (int it = 0; it < 200 && (b - a) > 1e-12 * (1.0 + std::abs(a) + std::abs(b)); ++it) {
    if (fc < fd) {
      b = d; d = c; fd = fc;
      c = b - ratio * (b - a);
      fc = q(c);
    } else {
      a = c; c = d; fc = fd;
      d = a + ratio * (b - a);
      fd = q(d);
    }
  }
  return 0.5 * (a + b);
}

// Damped Gauss-Newton on psi(theta)' W psi(theta) with box projection.
OptimResult minimize(const MomentCache& mc, const Eigen::MatrixXd& W, Eigen::VectorXd theta,
                     const Eigen::VectorXd& lower, const Eigen::VectorXd& upper, std::size_t max_iterations,
                     double tolerance) {
  Eigen::VectorXd psi;
  Eigen::MatrixXd J;
  auto objective = [&](const Eigen::VectorXd& th) {
    Eigen::VectorXd ps;
    Eigen::MatrixXd jj;
    mc.mean(th, ps, jj);
    return ps.dot(W * ps);
  };
  OptimResult out;
  theta = project(theta, lower, upper);
  mc.mean(theta, psi, J);
  double q = psi.dot(W * psi);
  for (out.iterations = 0; out.iterations < max_iterations; ++out.iterations) {
    const Eigen::VectorXd grad = 2.0 * J.transpose() * W * psi;
    out.gradient = grad.cwiseAbs().maxCoeff();
    if (out.gradient <= tolerance || q == 0.0) {
      out.converged = true;
      break;
    }
    const Eigen::MatrixXd H = J.transpose() * W * J;
    const Eigen::VectorXd step = -H.completeOrthogonalDecomposition().solve(J.transpose() * W * psi);
    double t = 1.0;
    bool moved = false;
    Eigen::VectorXd cand;
    double qc = q;
    for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
      cand = project(theta + t * step, lower, upper);
      qc = objective(cand);
      if (qc < q) {
        moved = true;
        break;
      }
    }
    if (!moved && theta.size() == 1 && lower.size() && upper.size() && std::isfinite(lower[0]) &&
        std::isfinite(upper[0])) {
      Eigen::VectorXd probe = theta;
      const double best = golden_section(
          [&](double x) {
            probe[0] = x;
            return objective(probe);
          },
          lower[0], upper[0]);
      probe[0] = best;
      qc = objective(probe);
      if (qc < q) {
        cand = probe;
        moved = true;
      }
    }
    if (!moved) {
      // No descent left at double precision: a stationary point up to rounding.
      out.converged = out.gradient <= 1e-8 * (1.0 + q);
      break;
    }
    const double change = (cand - theta).cwiseAbs().maxCoeff();
    theta = cand;
    mc.mean(theta, psi, J);
    q = qc;
    if (change <= 1e-14 * (1.0 + theta.cwiseAbs().maxCoeff())) {
      out.gradient = (2.0 * J.transpose() * W * psi).cwiseAbs().maxCoeff();
      out.converged = true;
      ++out.iterations;
      break;
    }
  }
  out.theta = theta;
  out.objective = q;
  return out;
}

RegressionFit fit_gamma(const RegressionSpec& spec, const Dataset& data, std::span<const std::size_t> rows,
                        const std::shared_ptr<const Dictionary>& dict) {
  switch (spec.method) {
    case RegressionMethod::lasso_md: return fit_regression_lasso(data, rows, dict, spec.lasso);
    case RegressionMethod::ols: return fit_ols(data, rows, dict);
    case RegressionMethod::external:
      if (!spec.table) throw ValidationError("regression.learner = external needs regression.table");
      return RegressionFit::from_table(spec.table);
    case RegressionMethod::fixed:
      if (!spec.fixed) throw ValidationError("fixed regression needs a fit");
      return *spec.fixed;
  }
  throw ValidationError("unknown regression learner");
}

Eigen::MatrixXd weight_or_identity(const GmmConfig& config, std::size_t r) {
  if (config.weight.size() == 0) return Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(r));
  if (config.weight.rows() != static_cast<Eigen::Index>(r) || config.weight.cols() != static_cast<Eigen::Index>(r))
    throw ValidationError("GMM weight matrix must be r x r");
  if ((config.weight - config.weight.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + config.weight.cwiseAbs().maxCoeff()))
    throw ValidationError("GMM weight matrix must be symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(config.weight);
  if (es.eigenvalues().minCoeff() < -1e-12) throw ValidationError("GMM weight matrix must be positive semi-definite");
  return config.weight;
}

std::size_t pair_index(std::size_t a, std::size_t b, std::size_t L) {
  if (a > b) std::swap(a, b);
  // Row-major index into the strict upper triangle.
  return a * L - a * (a + 1) / 2 + (b - a - 1);
}

std::shared_ptr<const Dictionary> regression_dictionary(const RegressionSpec& spec, const Dictionary& fallback) {
  return spec.dictionary ? spec.dictionary : std::make_shared<const Dictionary>(fallback);
}

std::vector<InitialEstimate> initial_impl(const GmmModel& model, const Dataset& data, const FoldPlan& folds,
                                          const RegressionSpec& regression, const GmmConfig& config,
                                          const std::shared_ptr<const Dictionary>& reg_dict) {
  const std::size_t L = folds.folds;
  if (L < 3) throw ValidationError("need L >= 3 for double split");
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t a = 0; a < L; ++a)
    for (std::size_t b = a + 1; b < L; ++b) pairs.emplace_back(a, b);
  std::vector<InitialEstimate> out(pairs.size());
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(model.moments()),
                                                      static_cast<Eigen::Index>(model.moments()));
  parallel_for(
      pairs.size(),
      [&](std::size_t k) {
        auto& est = out[k];
        est.a = pairs[k].first;
        est.b = pairs[k].second;
        const auto rows = folds.rows_not_in(est.a, est.b);
        if (rows.empty()) throw ValidationError("empty double complement for folds " + std::to_string(est.a) + ", " +
                                                std::to_string(est.b));
        est.gamma = fit_gamma(regression, data, rows, reg_dict);
        MomentCache mc{&model, &data, rows, model.cache(data, rows, est.gamma), {}};
        auto res = minimize(mc, I, model.start(), config.lower, config.upper, config.max_iterations,
                            config.gradient_tolerance);
        est.theta = res.theta;
        est.converged = res.converged;
      },
      config.threads);
  return out;
}

}  // namespace

std::vector<InitialEstimate> initial_estimators(const GmmModel& model, const Dataset& data, const FoldPlan& folds,
                                                const RegressionSpec& regression, const GmmConfig& config) {
  model.validate(data);
  if (!regression.dictionary && (regression.method == RegressionMethod::lasso_md || regression.method == RegressionMethod::ols))
    throw ValidationError("initial estimators need a regression dictionary");
  return initial_impl(model, data, folds, regression, config, regression.dictionary);
}

std::vector<Eigen::MatrixXd> gateaux_rows(const GmmModel& model, std::size_t fold, const Dictionary& dict,
                                          const Dataset& data, const FoldPlan& folds,
                                          const std::vector<InitialEstimate>& initial) {
  const std::size_t L = folds.folds;
  const auto train = folds.rows_not_in(fold);
  const auto r = model.moments();
  const auto p = static_cast<Eigen::Index>(dict.size());
  std::vector<Eigen::MatrixXd> out(r, Eigen::MatrixXd(static_cast<Eigen::Index>(train.size()), p));
  if (!model.needs_initial()) {
    model.gateaux(data, train, Eigen::MatrixXd(), model.start(), dict, out);
    return out;
  }
  if (initial.size() != L * (L - 1) / 2) throw ValidationError("initial estimator table does not match the folds");
  // Position of each training row within `train`.
  std::vector<std::size_t> position(data.n_rows(), 0);
  for (std::size_t s = 0; s < train.size(); ++s) position[train[s]] = s;
  std::vector<Eigen::MatrixXd> part;
  for (std::size_t other = 0; other < L; ++other) {
    if (other == fold) continue;
    const auto rows = folds.rows_in(other);
    if (rows.empty()) continue;
    const auto& est = initial[pair_index(fold, other, L)];
    const Eigen::MatrixXd cache = model.cache(data, rows, est.gamma);
    model.gateaux(data, rows, cache, est.theta, dict, part);
    for (std::size_t k = 0; k < r; ++k)
      for (std::size_t s = 0; s < rows.size(); ++s)
        out[k].row(static_cast<Eigen::Index>(position[rows[s]])) = part[k].row(static_cast<Eigen::Index>(s));
  }
  return out;
}

Eigen::MatrixXd gateaux_M(const GmmModel& model, std::size_t fold, const Dictionary& dict, const Dataset& data,
                          const FoldPlan& folds, const std::vector<InitialEstimate>& initial) {
  const auto rows = gateaux_rows(model, fold, dict, data, folds, initial);
  Eigen::MatrixXd M(static_cast<Eigen::Index>(dict.size()), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) M.col(static_cast<Eigen::Index>(k)) = rows[k].colwise().mean().transpose();
  return M;
}

GmmReport fit_gmm(const GmmModel& model, const Dictionary& dict, const Dataset& data, const FoldPlan& folds,
                  const GmmConfig& config) {
  model.validate(data);
  const std::size_t n = data.n_rows();
  if (folds.assignment.size() != n) throw ValidationError("fold plan does not match the data");
  if (data.roles().outcome.empty()) throw ValidationError("data.outcome is required");
  const std::size_t r = model.moments(), k = model.parameters();
  if (r < k) throw ValidationError("GMM needs at least as many moments as parameters");
  if (config.lower.size() && config.lower.size() != static_cast<Eigen::Index>(k))
    throw ValidationError("GMM lower bound has the wrong length");
  if (config.upper.size() && config.upper.size() != static_cast<Eigen::Index>(k))
    throw ValidationError("GMM upper bound has the wrong length");
  if (config.riesz.method == RieszMethod::fixed && r != 1)
    throw ValidationError("a fixed Riesz function only applies to one moment");
  const Eigen::MatrixXd W = weight_or_identity(config, r);
  const auto reg_dict = regression_dictionary(config.regression, dict);

  GmmReport rep;
  rep.names = model.parameter_names();
  rep.weight = W;
  rep.n = n;

  if (model.needs_initial()) rep.initial = initial_impl(model, data, folds, config.regression, config, reg_dict);
  for (const auto& est : rep.initial)
    if (!est.converged)
      rep.flags.push_back("initial estimator for folds " + std::to_string(est.a) + "," + std::to_string(est.b) +
                          " did not converge");

  const Eigen::MatrixXd basis = dict.eval_rows(data, all_rows(n));
  Eigen::VectorXd y(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) y[static_cast<Eigen::Index>(i)] = data.outcome(i);

  MomentCache mc;
  mc.model = &model;
  mc.data = &data;
  mc.rows = all_rows(n);

  for (int pass = 0; pass < (config.iterate ? 2 : 1); ++pass) {
    Eigen::MatrixXd cache_all;
    Eigen::MatrixXd correction = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(r));
    std::vector<Eigen::MatrixXd> fold_cache(folds.folds);
    rep.riesz.assign(folds.folds, {});
    parallel_for(
        folds.folds,
        [&](std::size_t l) {
          const auto train = folds.rows_not_in(l);
          const auto test = folds.rows_in(l);
          if (train.empty() || test.empty()) throw ValidationError("fold " + std::to_string(l) + " is empty");
          Eigen::MatrixXd alpha = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(test.size()), static_cast<Eigen::Index>(r));
          if (config.riesz.method == RieszMethod::lasso_md || config.riesz.method == RieszMethod::dantzig_md) {
            const auto D = gateaux_rows(model, l, dict, data, folds, rep.initial);
            Eigen::MatrixXd B(static_cast<Eigen::Index>(train.size()), basis.cols());
            for (std::size_t s = 0; s < train.size(); ++s) B.row(static_cast<Eigen::Index>(s)) = basis.row(static_cast<Eigen::Index>(train[s]));
            Eigen::MatrixXd Bt(static_cast<Eigen::Index>(test.size()), basis.cols());
            for (std::size_t s = 0; s < test.size(); ++s) Bt.row(static_cast<Eigen::Index>(s)) = basis.row(static_cast<Eigen::Index>(test[s]));
            for (std::size_t m = 0; m < r; ++m) {
              RieszProblem problem{B, D[m], dict.intercept_terms()};
              RieszFit fit = config.riesz.method == RieszMethod::lasso_md
                                 ? fit_lasso_md(problem, config.riesz.lasso)
                                 : fit_dantzig_md(problem.gram(), problem.moment_vector(), config.riesz.dantzig);
              alpha.col(static_cast<Eigen::Index>(m)) = Bt * fit.coefficients;
              rep.riesz[l].push_back(std::move(fit));
            }
          } else if (config.riesz.method == RieszMethod::fixed) {
            for (std::size_t s = 0; s < test.size(); ++s) alpha(static_cast<Eigen::Index>(s), 0) = config.riesz.fixed(data.row(test[s]));
          }
          const RegressionFit gamma = fit_gamma(config.regression, data, train, reg_dict);
          fold_cache[l] = model.cache(data, test, gamma);
          for (std::size_t s = 0; s < test.size(); ++s) {
            const double resid = y[static_cast<Eigen::Index>(test[s])] - predict(gamma, data, test[s], {}, std::nullopt, "plain");
            correction.row(static_cast<Eigen::Index>(test[s])) = alpha.row(static_cast<Eigen::Index>(s)) * resid;
          }
        },
        config.threads);

    // Scatter the fold caches back into row order.
    for (std::size_t l = 0; l < folds.folds; ++l) {
      const auto test = folds.rows_in(l);
      if (cache_all.size() == 0) cache_all.resize(static_cast<Eigen::Index>(n), fold_cache[l].cols());
      for (std::size_t s = 0; s < test.size(); ++s)
        cache_all.row(static_cast<Eigen::Index>(test[s])) = fold_cache[l].row(static_cast<Eigen::Index>(s));
    }
    mc.cache = std::move(cache_all);
    mc.correction = std::move(correction);

    Eigen::VectorXd start = model.start();
    if (!rep.initial.empty()) {
      start.setZero();
      for (const auto& est : rep.initial) start += est.theta;
      start /= static_cast<double>(rep.initial.size());
    }
    if (pass == 1) start = rep.theta;
    const auto res = minimize(mc, W, start, config.lower, config.upper, config.max_iterations, config.gradient_tolerance);
    rep.theta = res.theta;
    rep.objective = res.objective;
    rep.gradient_norm = res.gradient;
    rep.iterations = res.iterations;
    rep.converged = res.converged;

    if (pass == 0 && config.iterate) {
      for (auto& est : rep.initial) est.theta = rep.theta;
    }
  }
  if (!rep.converged)
    rep.flags.push_back("GMM optimizer did not converge (gradient " + std::to_string(rep.gradient_norm) + ")");

  // Sandwich variance at theta-hat.
  const auto rr = static_cast<Eigen::Index>(r), kk = static_cast<Eigen::Index>(k);
  Eigen::VectorXd g(rr);
  Eigen::MatrixXd jac(rr, kk);
  rep.jacobian = Eigen::MatrixXd::Zero(rr, kk);
  rep.psi_outer = Eigen::MatrixXd::Zero(rr, rr);
  rep.influence.resize(static_cast<Eigen::Index>(n), rr);
  for (std::size_t i = 0; i < n; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    model.evaluate(data, i, mc.cache.row(ii), rep.theta, g, jac);
    g += mc.correction.row(ii).transpose();
    rep.influence.row(ii) = g.transpose();
    rep.jacobian += jac;
    rep.psi_outer.noalias() += g * g.transpose();
  }
  rep.jacobian /= static_cast<double>(n);
  rep.psi_outer /= static_cast<double>(n);
  const Eigen::MatrixXd GWG = rep.jacobian.transpose() * W * rep.jacobian;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(GWG);
  if (!lu.isInvertible() || lu.rcond() < 1e-14) throw NumericalError("singular G'WG in the GMM sandwich");
  const Eigen::MatrixXd bread = lu.inverse();
  const Eigen::MatrixXd meat = rep.jacobian.transpose() * W * rep.psi_outer * W * rep.jacobian;
  rep.covariance = bread * meat * bread;
  rep.covariance = 0.5 * (rep.covariance + rep.covariance.transpose()).eval();
  rep.std_error = (rep.covariance.diagonal().array().max(0.0) / static_cast<double>(n)).sqrt();
  for (std::size_t l = 0; l < rep.riesz.size(); ++l)
    for (const auto& fit : rep.riesz[l])
      if (!fit.converged) rep.flags.push_back("fold " + std::to_string(l) + ": Riesz fit did not converge");
  return rep;
}

}  // namespace autodml
