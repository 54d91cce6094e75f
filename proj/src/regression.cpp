#include "autodml/regression.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "autodml/error.hpp"

namespace autodml {

void PredictionTable::set(std::size_t row, const std::string& tag, double value) {
  values_[tag][row] = value;
}

std::optional<double> PredictionTable::find(std::size_t row, const std::string& tag) const {
  const auto t = values_.find(tag);
  if (t == values_.end()) return std::nullopt;
  const auto r = t->second.find(row);
  if (r == t->second.end()) return std::nullopt;
  return r->second;
}

double PredictionTable::at(std::size_t row, const std::string& tag) const {
  const auto v = find(row, tag);
  if (!v) {
    throw ValidationError("external prediction table has no value for row " + std::to_string(row) +
                          ", point '" + tag + "'");
  }
  return *v;
}

PredictionTable load_prediction_table(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  const auto records = parse_csv_text(buf.str());
  if (records.empty()) throw ValidationError("empty file '" + path.string() + "'");
  const auto& header = records.front();
  if (header.size() != 3 || header[0] != "row_id" || header[1] != "point_tag" || header[2] != "value")
    throw ValidationError("prediction table header must be row_id,point_tag,value");
  PredictionTable table;
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& rec = records[r];
    if (rec.size() != 3) throw ValidationError("prediction table row " + std::to_string(r) + " needs 3 fields");
    std::size_t row = 0;
    double value = 0.0;
    const auto a = std::from_chars(rec[0].data(), rec[0].data() + rec[0].size(), row);
    const auto b = std::from_chars(rec[2].data(), rec[2].data() + rec[2].size(), value);
    if (a.ec != std::errc() || a.ptr != rec[0].data() + rec[0].size() || b.ec != std::errc() ||
        b.ptr != rec[2].data() + rec[2].size() || !std::isfinite(value)) {
      throw ValidationError("non-numeric cell at row " + std::to_string(r) + " of prediction table");
    }
    table.set(row, rec[1], value);
  }
  return table;
}

RegressionFit RegressionFit::from_coefficients(std::shared_ptr<const Dictionary> dict, Eigen::VectorXd coef) {
  if (!dict || static_cast<std::size_t>(coef.size()) != dict->size())
    throw ValidationError("coefficient vector does not match the dictionary");
  RegressionFit fit;
  fit.kind = RegressionKind::ols;
  fit.dictionary = std::move(dict);
  fit.coefficients = std::move(coef);
  return fit;
}

RegressionFit RegressionFit::from_table(std::shared_ptr<const PredictionTable> table) {
  RegressionFit fit;
  fit.kind = RegressionKind::external;
  fit.table = std::move(table);
  return fit;
}

RegressionFit RegressionFit::from_function(RowFunction value, RowPartial partial) {
  RegressionFit fit;
  fit.kind = RegressionKind::function;
  fit.value = std::move(value);
  fit.partial = std::move(partial);
  return fit;
}

double predict(const RegressionFit& fit, const Dataset& data, std::size_t row, const Override& change,
               std::optional<std::size_t> derivative, const std::string& tag) {
  if (fit.kind == RegressionKind::external) {
    if (derivative && tag.empty()) throw ValidationError("external fits need a derivative tag");
    return fit.table->at(row, tag);
  }
  const auto obs = data.row(row);
  if (!derivative) return predict(fit, obs, change);

  thread_local std::vector<double> scratch;
  scratch.assign(obs.begin(), obs.end());
  for (const auto& [c, v] : change.values) scratch[c] = v;
  if (fit.kind == RegressionKind::function) {
    if (!fit.partial) throw ValidationError("regression function has no derivative");
    return fit.partial(scratch, *derivative);
  }
  return fit.dictionary->eval_partial(scratch, *derivative).dot(fit.coefficients);
}

double predict(const RegressionFit& fit, std::span<const double> row, const Override& change) {
  switch (fit.kind) {
    case RegressionKind::external:
      throw ValidationError("external fits are looked up by row index");
    case RegressionKind::function: {
      if (change.empty()) return fit.value(row);
      thread_local std::vector<double> scratch;
      scratch.assign(row.begin(), row.end());
      for (const auto& [c, v] : change.values) scratch[c] = v;
      return fit.value(scratch);
    }
    default:
      return fit.dictionary->eval_counterfactual(row, change).dot(fit.coefficients);
  }
}

namespace {

Eigen::VectorXd outcome_of(const Dataset& data, std::span<const std::size_t> rows) {
  const auto y = data.outcome_index();
  Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) out[static_cast<Eigen::Index>(k)] = data(rows[k], y);
  return out;
}

}  // namespace

RegressionFit fit_regression_lasso(const Dataset& data, std::span<const std::size_t> rows,
                                   std::shared_ptr<const Dictionary> dict, const LassoMDConfig& config) {
  if (rows.empty()) throw ValidationError("no training rows for the regression");
  return fit_regression_lasso(dict->eval_rows(data, rows), outcome_of(data, rows), dict, config);
}

RegressionFit fit_regression_lasso(const Eigen::MatrixXd& basis, const Eigen::VectorXd& y,
                                   std::shared_ptr<const Dictionary> dict, const LassoMDConfig& config) {
  RieszProblem problem;
  problem.basis = basis;
  problem.moments = basis.array().colwise() * y.array();
  problem.intercepts = dict->intercept_terms();
  RieszFit lasso = fit_lasso_md(problem, config);
  RegressionFit fit = RegressionFit::from_coefficients(std::move(dict), lasso.coefficients);
  fit.kind = RegressionKind::lasso_md;
  fit.lasso = std::move(lasso);
  return fit;
}

RegressionFit fit_ols(const Dataset& data, std::span<const std::size_t> rows, std::shared_ptr<const Dictionary> dict) {
  if (rows.empty()) throw ValidationError("no training rows for the regression");
  return fit_ols(dict->eval_rows(data, rows), outcome_of(data, rows), dict);
}

RegressionFit fit_ols(const Eigen::MatrixXd& basis, const Eigen::VectorXd& y, std::shared_ptr<const Dictionary> dict) {
  const double n = static_cast<double>(basis.rows());
  const Eigen::MatrixXd G = basis.transpose() * basis / n;
  const Eigen::VectorXd M = basis.transpose() * y / n;
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(G);
  cod.setThreshold(1e-12);
  RegressionFit fit = RegressionFit::from_coefficients(std::move(dict), cod.solve(M));
  fit.kind = RegressionKind::ols;
  fit.pseudo_inverse = cod.rank() < G.rows();
  return fit;
}

ShootingResult lasso_shooting(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& lambda,
                              double tolerance, std::size_t max_sweeps) {
  const Eigen::Index n = X.rows(), p = X.cols();
  if (y.size() != n || lambda.size() != p) throw ValidationError("shooting dimensions disagree");
  const double nn = static_cast<double>(n);
  const Eigen::VectorXd sq = X.colwise().squaredNorm().transpose() / nn;
  ShootingResult out;
  out.beta = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd resid = y;
  while (out.sweeps < max_sweeps) {
    double change = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) {
      if (sq[j] <= 0.0) continue;
      const double old = out.beta[j];
      const double s = X.col(j).dot(resid) / nn + sq[j] * old;
      double fresh = 0.0;
      if (s > lambda[j]) fresh = (s - lambda[j]) / sq[j];
      else if (s < -lambda[j]) fresh = (s + lambda[j]) / sq[j];
      if (fresh != old) {
        resid -= X.col(j) * (fresh - old);
        out.beta[j] = fresh;
        change = std::max(change, std::abs(fresh - old));
      }
    }
    ++out.sweeps;
    if (change < tolerance) {
      out.converged = true;
      break;
    }
  }
  return out;
}

std::string to_string(RegressionKind kind) {
  switch (kind) {
    case RegressionKind::lasso_md: return "lasso_md";
    case RegressionKind::ols: return "ols";
    case RegressionKind::external: return "external";
    case RegressionKind::function: return "function";
  }
  return "unknown";
}

}  // namespace autodml
