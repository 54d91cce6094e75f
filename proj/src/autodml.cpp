#include "autodml/autodml.hpp"

#include <cmath>
#include <unordered_map>

#include "autodml/error.hpp"
#include "autodml/parallel.hpp"

namespace autodml {

namespace {

struct FoldOutput {
  FoldDiagnostics diag;
  std::vector<std::size_t> rows;
  std::vector<double> alpha, gamma, plugin;
};

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& M, const std::vector<std::size_t>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), M.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = M.row(static_cast<Eigen::Index>(rows[k]));
  return out;
}

Eigen::VectorXd take(const Eigen::VectorXd& v, const std::vector<std::size_t>& rows) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) out[static_cast<Eigen::Index>(k)] = v[static_cast<Eigen::Index>(rows[k])];
  return out;
}

}  // namespace

EstimateReport estimate(const MomentFunctional& f, const Dictionary& dict, const Dataset& data, const FoldPlan& folds,
                        const RieszSpec& riesz, const RegressionSpec& regression, const EstimateOptions& options) {
  const std::size_t n = data.n_rows();
  if (folds.assignment.size() != n) throw ValidationError("fold plan does not match the data");
  if (folds.folds < 2) throw ValidationError("need at least 2 folds");
  f.validate(data);
  if (data.roles().outcome.empty()) throw ValidationError("data.outcome is required");
  if (regression.method == RegressionMethod::external && !regression.table)
    throw ValidationError("regression.learner = external needs regression.table");
  if (regression.method == RegressionMethod::fixed && !regression.fixed)
    throw ValidationError("fixed regression needs a fit");
  if (riesz.method == RieszMethod::fixed && !riesz.fixed) throw ValidationError("fixed Riesz learner needs a function");
  if (riesz.method == RieszMethod::lasso_md) riesz.lasso.validate();
  if (riesz.method == RieszMethod::dantzig_md) riesz.dantzig.validate();

  const auto every = all_rows(n);
  const bool need_basis = riesz.method == RieszMethod::lasso_md || riesz.method == RieszMethod::dantzig_md;
  Eigen::MatrixXd basis, moments;
  if (need_basis) {
    basis = dict.eval_rows(data, every);
    moments = moment_rows(f, dict, data, every);
  }
  auto shared_dict = std::make_shared<const Dictionary>(dict);
  auto reg_dict = regression.dictionary ? regression.dictionary : shared_dict;
  Eigen::MatrixXd reg_basis;
  if (regression.method == RegressionMethod::lasso_md || regression.method == RegressionMethod::ols)
    reg_basis = reg_dict->eval_rows(data, every);
  Eigen::VectorXd y(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) y[static_cast<Eigen::Index>(i)] = data.outcome(i);

  std::vector<FoldOutput> outputs(folds.folds);
  parallel_for(
      folds.folds,
      [&](std::size_t l) {
        FoldOutput& out = outputs[l];
        out.diag.fold = l;
        out.rows = folds.rows_in(l);
        const auto train = folds.rows_not_in(l);
        out.diag.n_in = out.rows.size();
        out.diag.n_train = train.size();
        if (out.rows.empty() || train.empty()) throw ValidationError("fold " + std::to_string(l) + " is empty");
        try {
          Eigen::VectorXd rho;
          if (need_basis) {
            RieszProblem problem{take_rows(basis, train), take_rows(moments, train), dict.intercept_terms()};
            RieszFit fit = riesz.method == RieszMethod::lasso_md
                               ? fit_lasso_md(problem, riesz.lasso)
                               : fit_dantzig_md(problem.gram(), problem.moment_vector(), riesz.dantzig);
            rho = fit.coefficients;
            out.diag.riesz = std::move(fit);
          }
          RegressionFit gamma;
          switch (regression.method) {
            case RegressionMethod::lasso_md:
              gamma = fit_regression_lasso(take_rows(reg_basis, train), take(y, train), reg_dict, regression.lasso);
              out.diag.regression = gamma.lasso;
              break;
            case RegressionMethod::ols:
              gamma = fit_ols(take_rows(reg_basis, train), take(y, train), reg_dict);
              out.diag.regression_pseudo_inverse = gamma.pseudo_inverse;
              break;
            case RegressionMethod::external:
              gamma = RegressionFit::from_table(regression.table);
              break;
            case RegressionMethod::fixed:
              gamma = *regression.fixed;
              break;
          }
          out.plugin = moment_of_regression(f, gamma, data, out.rows);
          out.alpha.resize(out.rows.size());
          out.gamma.resize(out.rows.size());
          for (std::size_t k = 0; k < out.rows.size(); ++k) {
            const std::size_t i = out.rows[k];
            switch (riesz.method) {
              case RieszMethod::lasso_md:
              case RieszMethod::dantzig_md:
                out.alpha[k] = basis.row(static_cast<Eigen::Index>(i)).dot(rho);
                break;
              case RieszMethod::zero:
                out.alpha[k] = 0.0;
                break;
              case RieszMethod::fixed:
                out.alpha[k] = riesz.fixed(data.row(i));
                break;
            }
            out.gamma[k] = predict(gamma, data, i, {}, std::nullopt, "plain");
          }
        } catch (const NumericalError& e) {
          if (!options.allow_failed_folds) throw;
          out.diag.failed = true;
          out.diag.failure = e.what();
        }
      },
      options.threads);

  EstimateReport rep;
  rep.functional = f.name();
  rep.seed = folds.seed;
  rep.dictionary_sup_norm = need_basis ? basis.cwiseAbs().maxCoeff() : 0.0;

  // Gather per-row values, then sum in row order so the result does not
  // depend on how folds are labelled.
  std::vector<int> owner(n, -1);
  std::vector<std::size_t> slot(n, 0);
  for (std::size_t l = 0; l < outputs.size(); ++l) {
    if (outputs[l].diag.failed) {
      rep.flags.push_back("fold " + std::to_string(l) + " failed: " + outputs[l].diag.failure);
      continue;
    }
    for (std::size_t k = 0; k < outputs[l].rows.size(); ++k) {
      owner[outputs[l].rows[k]] = static_cast<int>(l);
      slot[outputs[l].rows[k]] = k;
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    if (owner[i] >= 0) rep.rows.push_back(i);
  if (rep.rows.empty()) throw NumericalError("every fold failed");

  const auto m = static_cast<Eigen::Index>(rep.rows.size());
  rep.alpha.resize(m);
  rep.gamma.resize(m);
  rep.plugin.resize(m);
  Eigen::VectorXd contrib(m);
  double total = 0.0, plug = 0.0;
  for (Eigen::Index k = 0; k < m; ++k) {
    const std::size_t i = rep.rows[static_cast<std::size_t>(k)];
    const auto& o = outputs[static_cast<std::size_t>(owner[i])];
    const std::size_t s = slot[i];
    rep.alpha[k] = o.alpha[s];
    rep.gamma[k] = o.gamma[s];
    rep.plugin[k] = o.plugin[s];
    contrib[k] = o.plugin[s] + o.alpha[s] * (y[static_cast<Eigen::Index>(i)] - o.gamma[s]);
    total += contrib[k];
    plug += o.plugin[s];
  }
  const double dm = static_cast<double>(m);
  rep.theta = total / dm;
  rep.plugin_theta = plug / dm;
  rep.influence = contrib.array() - rep.theta;
  rep.n = static_cast<std::size_t>(m);
  rep.n_effective = rep.n;
  rep.variance_iid = variance_iid(rep.influence);
  rep.clustered = data.has_clusters();
  if (rep.clustered) {
    std::vector<std::int64_t> ids;
    ids.reserve(rep.rows.size());
    for (std::size_t i : rep.rows) ids.push_back(data.cluster_ids()[i]);
    rep.variance = variance_clustered(rep.influence, ids);
    std::unordered_map<std::int64_t, char> seen;
    for (auto id : ids) seen.emplace(id, 0);
    rep.clusters = seen.size();
  } else {
    rep.variance = rep.variance_iid;
    rep.clusters = rep.n;
  }
  rep.std_error = std::sqrt(rep.variance / static_cast<double>(rep.n_effective));

  for (auto& o : outputs) {
    const auto& d = o.diag;
    if (d.riesz && !d.riesz->converged)
      rep.flags.push_back("fold " + std::to_string(d.fold) + ": Riesz fit did not converge");
    if (d.regression && !d.regression->converged)
      rep.flags.push_back("fold " + std::to_string(d.fold) + ": regression fit did not converge");
    if (d.riesz && d.riesz->pseudo_inverse_init)
      rep.flags.push_back("fold " + std::to_string(d.fold) + ": singular low-dimensional Gram, pseudo-inverse start");
    if (d.regression_pseudo_inverse)
      rep.flags.push_back("fold " + std::to_string(d.fold) + ": rank-deficient OLS, pseudo-inverse used");
    rep.folds.push_back(std::move(o.diag));
  }
  return rep;
}

double variance_iid(const Eigen::VectorXd& psi) {
  if (psi.size() == 0) return 0.0;
  double s = 0.0;
  for (Eigen::Index i = 0; i < psi.size(); ++i) s += psi[i] * psi[i];
  return s / static_cast<double>(psi.size());
}

double variance_clustered(const Eigen::VectorXd& psi, const std::vector<std::int64_t>& cluster_ids) {
  if (static_cast<std::size_t>(psi.size()) != cluster_ids.size())
    throw ValidationError("cluster ids do not match the influence values");
  if (psi.size() == 0) return 0.0;
  std::unordered_map<std::int64_t, std::size_t> index;
  std::vector<double> sums;
  for (Eigen::Index i = 0; i < psi.size(); ++i) {
    const auto [it, fresh] = index.emplace(cluster_ids[static_cast<std::size_t>(i)], sums.size());
    if (fresh) sums.push_back(0.0);
    sums[it->second] += psi[i];
  }
  double s = 0.0;
  for (double c : sums) s += c * c;
  return s / static_cast<double>(psi.size());
}

Eigen::MatrixXd cross_moment(const Eigen::MatrixXd& Z, const std::vector<std::int64_t>& cluster_ids) {
  const Eigen::Index n = Z.rows();
  if (n == 0) throw ValidationError("no rows for the cross moment");
  const Eigen::MatrixXd C = Z.rowwise() - Z.colwise().mean();
  if (cluster_ids.empty()) return C.transpose() * C / static_cast<double>(n);
  if (cluster_ids.size() != static_cast<std::size_t>(n)) throw ValidationError("cluster ids do not match rows");
  std::unordered_map<std::int64_t, Eigen::Index> index;
  std::vector<Eigen::VectorXd> sums;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto [it, fresh] = index.emplace(cluster_ids[static_cast<std::size_t>(i)], static_cast<Eigen::Index>(sums.size()));
    if (fresh) sums.push_back(Eigen::VectorXd::Zero(Z.cols()));
    sums[static_cast<std::size_t>(it->second)] += C.row(i).transpose();
  }
  Eigen::MatrixXd V = Eigen::MatrixXd::Zero(Z.cols(), Z.cols());
  for (const auto& s : sums) V.noalias() += s * s.transpose();
  return V / static_cast<double>(n);
}

namespace {

std::vector<std::int64_t> report_clusters(const EstimateReport& rep, const Dataset& data) {
  std::vector<std::int64_t> ids;
  if (!data.has_clusters()) return ids;
  for (std::size_t i : rep.rows) ids.push_back(data.cluster_ids()[i]);
  return ids;
}

void finish(TransformReport& t) {
  t.covariance = t.jacobian * t.component_covariance * t.jacobian.transpose();
  t.covariance = 0.5 * (t.covariance + t.covariance.transpose()).eval();
  t.std_error = (t.covariance.diagonal().array().max(0.0) / static_cast<double>(t.n)).sqrt();
}

void check_rows(const EstimateReport& rep, const Dataset& data) {
  if (rep.influence.size() == 0) throw ValidationError("estimate report has no influence values");
  for (std::size_t i : rep.rows)
    if (i >= data.n_rows()) throw ValidationError("estimate report does not match the data");
}

}  // namespace

TransformReport transform_att(const EstimateReport& cross_average, const Dataset& data) {
  if (cross_average.functional != to_string(FunctionalKind::cross_average))
    throw ValidationError("ATT needs a cross-average estimate");
  check_rows(cross_average, data);
  const auto di = data.treatment_index();
  const auto yi = data.outcome_index();
  const auto m = static_cast<Eigen::Index>(cross_average.rows.size());
  Eigen::MatrixXd Z(m, 3);
  for (Eigen::Index k = 0; k < m; ++k) {
    const std::size_t i = cross_average.rows[static_cast<std::size_t>(k)];
    Z(k, 0) = cross_average.influence[k];
    Z(k, 1) = data(i, di) * data(i, yi);
    Z(k, 2) = data(i, di);
  }
  const double edy = Z.col(1).mean(), ed = Z.col(2).mean(), theta = cross_average.theta;
  if (!(ed > 0)) throw ValidationError("no treated units");

  TransformReport t;
  t.kind = "att";
  t.names = {"att"};
  t.n = static_cast<std::size_t>(m);
  t.estimate = Eigen::VectorXd::Constant(1, (edy - theta) / ed);
  t.component_names = {"theta", "E[DY]", "E[D]"};
  t.components = Eigen::Vector3d(theta, edy, ed);
  t.component_covariance = cross_moment(Z, report_clusters(cross_average, data));
  t.jacobian.resize(1, 3);
  t.jacobian << -1.0 / ed, 1.0 / ed, (theta - edy) / (ed * ed);
  finish(t);
  return t;
}

TransformReport transform_elasticity(const std::vector<const EstimateReport*>& reports, const Dataset& data,
                                     const std::vector<ElasticityKind>& kinds) {
  if (reports.empty() || reports.size() != kinds.size())
    throw ValidationError("elasticity needs one kind per average-derivative estimate");
  const auto& rows = reports.front()->rows;
  for (const auto* r : reports) {
    if (r->functional != to_string(FunctionalKind::avg_derivative))
      throw ValidationError("elasticity needs average-derivative estimates");
    check_rows(*r, data);
    if (r->rows != rows) throw ValidationError("stacked elasticities must share their rows");
  }
  const auto K = static_cast<Eigen::Index>(reports.size());
  const auto m = static_cast<Eigen::Index>(rows.size());
  const auto yi = data.outcome_index();
  Eigen::MatrixXd Z(m, K + 1);
  for (Eigen::Index k = 0; k < K; ++k) Z.col(k) = reports[static_cast<std::size_t>(k)]->influence;
  for (Eigen::Index r = 0; r < m; ++r) Z(r, K) = data(rows[static_cast<std::size_t>(r)], yi);
  const double ybar = Z.col(K).mean();
  if (ybar == 0.0) throw ValidationError("zero mean outcome");

  TransformReport t;
  t.kind = "elasticity";
  t.n = static_cast<std::size_t>(m);
  t.estimate.resize(K);
  t.components.resize(K + 1);
  t.jacobian = Eigen::MatrixXd::Zero(K, K + 1);
  for (Eigen::Index k = 0; k < K; ++k) {
    const double theta = reports[static_cast<std::size_t>(k)]->theta;
    const auto kind = kinds[static_cast<std::size_t>(k)];
    t.names.push_back(to_string(kind));
    t.component_names.push_back("theta_" + to_string(kind));
    t.components[k] = theta;
    t.estimate[k] = theta / ybar - (kind == ElasticityKind::cross_price ? 0.0 : 1.0);
    t.jacobian(k, k) = 1.0 / ybar;
    t.jacobian(k, K) = -theta / (ybar * ybar);
  }
  t.component_names.push_back("E[Y]");
  t.components[K] = ybar;
  t.component_covariance = cross_moment(Z, report_clusters(*reports.front(), data));
  finish(t);
  return t;
}

TransformReport transform_elasticity(const EstimateReport& avg_derivative, const Dataset& data, ElasticityKind kind) {
  return transform_elasticity(std::vector<const EstimateReport*>{&avg_derivative}, data, {kind});
}

TransformReport regression_decomposition(const EstimateReport& cross_average, const Dataset& data) {
  if (cross_average.functional != to_string(FunctionalKind::cross_average))
    throw ValidationError("decomposition needs a cross-average estimate");
  check_rows(cross_average, data);
  const auto di = data.treatment_index();
  const auto yi = data.outcome_index();
  const auto m = static_cast<Eigen::Index>(cross_average.rows.size());
  Eigen::MatrixXd Z(m, 4);
  for (Eigen::Index k = 0; k < m; ++k) {
    const std::size_t i = cross_average.rows[static_cast<std::size_t>(k)];
    const double d = data(i, di), y = data(i, yi);
    Z(k, 0) = cross_average.influence[k];
    Z(k, 1) = d * y;
    Z(k, 2) = d;
    Z(k, 3) = (1.0 - d) * y;
  }
  const double theta = cross_average.theta, edy = Z.col(1).mean(), ed = Z.col(2).mean(), e0y = Z.col(3).mean();
  if (!(ed > 0) || !(ed < 1)) throw ValidationError("empty arm");

  TransformReport t;
  t.kind = "decomposition";
  t.names = {"response", "composition"};
  t.n = static_cast<std::size_t>(m);
  t.estimate = Eigen::Vector2d((edy - theta) / ed, theta / ed - e0y / (1.0 - ed));
  t.component_names = {"theta", "E[DY]", "E[D]", "E[(1-D)Y]"};
  t.components = Eigen::Vector4d(theta, edy, ed, e0y);
  t.component_covariance = cross_moment(Z, report_clusters(cross_average, data));
  const double q = 1.0 - ed;
  t.jacobian.resize(2, 4);
  t.jacobian << -1.0 / ed, 1.0 / ed, (theta - edy) / (ed * ed), 0.0,
                1.0 / ed, 0.0, -theta / (ed * ed) - e0y / (q * q), -1.0 / q;
  finish(t);
  return t;
}

TransformReport regression_decomposition(const Dataset& data, const Dictionary& dict, const FoldPlan& folds,
                                         const RieszSpec& riesz, const RegressionSpec& regression) {
  const auto f = MomentFunctional::cross_average(data.roles().treatment);
  return regression_decomposition(estimate(f, dict, data, folds, riesz, regression), data);
}

ElasticityKind parse_elasticity_kind(const std::string& s) {
  if (s == "income") return ElasticityKind::income;
  if (s == "own_price") return ElasticityKind::own_price;
  if (s == "cross_price") return ElasticityKind::cross_price;
  throw ValidationError("unknown elasticity kind '" + s + "' (income, own_price, cross_price)");
}

std::string to_string(ElasticityKind kind) {
  switch (kind) {
    case ElasticityKind::income: return "income";
    case ElasticityKind::own_price: return "own_price";
    case ElasticityKind::cross_price: return "cross_price";
  }
  return "unknown";
}

}  // namespace autodml
