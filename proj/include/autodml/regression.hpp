#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "autodml/dataset.hpp"
#include "autodml/dictionary.hpp"
#include "autodml/riesz.hpp"

namespace autodml {

// Out-of-sample predictions produced by a learner trained elsewhere, keyed by
// (0-based row index, evaluation point tag).
class PredictionTable {
 public:
  void set(std::size_t row, const std::string& tag, double value);
  std::optional<double> find(std::size_t row, const std::string& tag) const;
  double at(std::size_t row, const std::string& tag) const;  // throws ValidationError when absent
  std::size_t size() const { return values_.size(); }

 private:
  std::unordered_map<std::string, std::unordered_map<std::size_t, double>> values_;
};

// CSV with header row_id,point_tag,value.
PredictionTable load_prediction_table(const std::filesystem::path& path);

enum class RegressionKind { lasso_md, ols, external, function };

using RowFunction = std::function<double(std::span<const double>)>;
using RowPartial = std::function<double(std::span<const double>, std::size_t)>;

struct RegressionFit {
  RegressionKind kind = RegressionKind::ols;
  std::shared_ptr<const Dictionary> dictionary;
  Eigen::VectorXd coefficients;
  std::shared_ptr<const PredictionTable> table;
  RowFunction value;
  RowPartial partial;  // optional for function fits
  bool pseudo_inverse = false;
  std::optional<RieszFit> lasso;  // tuning diagnostics of lasso_md fits

  static RegressionFit from_coefficients(std::shared_ptr<const Dictionary> dict, Eigen::VectorXd coef);
  static RegressionFit from_table(std::shared_ptr<const PredictionTable> table);
  static RegressionFit from_function(RowFunction value, RowPartial partial = {});
};

// Prediction at row `row` of `data`, with `change` substituted. With
// `derivative` set, returns the partial derivative in that column instead.
// `tag` names the point for table lookups.
double predict(const RegressionFit& fit, const Dataset& data, std::size_t row, const Override& change = {},
               std::optional<std::size_t> derivative = std::nullopt, const std::string& tag = "plain");

// Prediction from a bare observation vector (internal and function fits only).
double predict(const RegressionFit& fit, std::span<const double> row, const Override& change = {});

// Lasso minimum distance with m(w, b) = y b(x).
RegressionFit fit_regression_lasso(const Dataset& data, std::span<const std::size_t> rows,
                                   std::shared_ptr<const Dictionary> dict, const LassoMDConfig& config);
// Same, reusing precomputed b(X_i) rows for the training subset.
RegressionFit fit_regression_lasso(const Eigen::MatrixXd& basis, const Eigen::VectorXd& y,
                                   std::shared_ptr<const Dictionary> dict, const LassoMDConfig& config);

RegressionFit fit_ols(const Dataset& data, std::span<const std::size_t> rows, std::shared_ptr<const Dictionary> dict);
RegressionFit fit_ols(const Eigen::MatrixXd& basis, const Eigen::VectorXd& y, std::shared_ptr<const Dictionary> dict);

// Classical shooting Lasso on the data matrix:
// minimize (1/2n)|y - X beta|^2 + sum_j lambda_j |beta_j|.
struct ShootingResult {
  Eigen::VectorXd beta;
  std::size_t sweeps = 0;
  bool converged = false;
};
ShootingResult lasso_shooting(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& lambda,
                              double tolerance = 1e-8, std::size_t max_sweeps = 100000);

std::string to_string(RegressionKind kind);

}  // namespace autodml
