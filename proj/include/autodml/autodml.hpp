#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "autodml/dataset.hpp"
#include "autodml/dictionary.hpp"
#include "autodml/functionals.hpp"
#include "autodml/regression.hpp"
#include "autodml/riesz.hpp"

namespace autodml {

enum class RieszMethod { lasso_md, dantzig_md, zero, fixed };

struct RieszSpec {
  RieszMethod method = RieszMethod::lasso_md;
  LassoMDConfig lasso;
  DantzigConfig dantzig;
  RowFunction fixed;  // alpha(x) for RieszMethod::fixed
};

enum class RegressionMethod { lasso_md, ols, external, fixed };

struct RegressionSpec {
  RegressionMethod method = RegressionMethod::lasso_md;
  LassoMDConfig lasso;
  std::shared_ptr<const Dictionary> dictionary;  // null: reuse the Riesz dictionary
  std::shared_ptr<const PredictionTable> table;
  std::optional<RegressionFit> fixed;
};

struct EstimateOptions {
  // Drop folds whose learners throw NumericalError instead of failing the run.
  bool allow_failed_folds = false;
  std::size_t threads = 0;
};

struct FoldDiagnostics {
  std::size_t fold = 0;
  std::size_t n_in = 0;
  std::size_t n_train = 0;
  std::optional<RieszFit> riesz;
  std::optional<RieszFit> regression;
  bool regression_pseudo_inverse = false;
  bool failed = false;
  std::string failure;
};

struct EstimateReport {
  std::string functional;
  double theta = 0.0;
  double variance = 0.0;      // clustered when the data carry cluster ids
  double variance_iid = 0.0;  // mean of psi^2
  double std_error = 0.0;     // sqrt(variance / n_effective)
  double plugin_theta = 0.0;  // mean of m(W_i, gamma-hat) alone
  std::size_t n = 0;
  std::size_t n_effective = 0;
  std::size_t clusters = 0;
  bool clustered = false;
  std::vector<std::size_t> rows;  // rows that entered the estimate
  Eigen::VectorXd influence;      // psi_i, aligned with `rows`
  Eigen::VectorXd alpha;          // alpha-hat(X_i)
  Eigen::VectorXd gamma;          // gamma-hat(X_i)
  Eigen::VectorXd plugin;         // m(W_i, gamma-hat)
  std::vector<FoldDiagnostics> folds;
  std::uint64_t seed = 0;
  double dictionary_sup_norm = 0.0;
  std::vector<std::string> flags;

  bool flagged() const { return !flags.empty(); }
};

// Cross-fitted debiased estimate: for each fold, alpha-hat and gamma-hat are
// trained on the other folds and the orthogonal moment is averaged over all
// rows with a single 1/n.
EstimateReport estimate(const MomentFunctional& f, const Dictionary& dict, const Dataset& data, const FoldPlan& folds,
                        const RieszSpec& riesz, const RegressionSpec& regression, const EstimateOptions& options = {});

// (1/n) sum_c (sum_{i in c} psi_i)^2 with clusters taken in order of first
// appearance. Singleton clusters give mean(psi^2) bit for bit.
double variance_clustered(const Eigen::VectorXd& psi, const std::vector<std::int64_t>& cluster_ids);
double variance_iid(const Eigen::VectorXd& psi);

// (1/n) sum_c z_c z_c' for z_c the within-cluster sum of the centered rows of Z
// (each row its own cluster when `cluster_ids` is empty).
Eigen::MatrixXd cross_moment(const Eigen::MatrixXd& Z, const std::vector<std::int64_t>& cluster_ids);

struct TransformReport {
  std::string kind;
  std::vector<std::string> names;
  Eigen::VectorXd estimate;
  Eigen::MatrixXd covariance;  // H V-tilde H'
  Eigen::VectorXd std_error;   // sqrt(diag(covariance) / n)
  std::vector<std::string> component_names;
  Eigen::VectorXd components;
  Eigen::MatrixXd component_covariance;  // V-tilde
  Eigen::MatrixXd jacobian;              // H
  std::size_t n = 0;
};

// ATT from a cross-average estimate: (mean DY - theta) / mean D.
TransformReport transform_att(const EstimateReport& cross_average, const Dataset& data);

enum class ElasticityKind { income, own_price, cross_price };

TransformReport transform_elasticity(const std::vector<const EstimateReport*>& avg_derivatives, const Dataset& data,
                                     const std::vector<ElasticityKind>& kinds);
TransformReport transform_elasticity(const EstimateReport& avg_derivative, const Dataset& data, ElasticityKind kind);

// Response and composition parts of mean(Y | D=1) - mean(Y | D=0) from a
// cross-average estimate.
TransformReport regression_decomposition(const EstimateReport& cross_average, const Dataset& data);
TransformReport regression_decomposition(const Dataset& data, const Dictionary& dict, const FoldPlan& folds,
                                         const RieszSpec& riesz, const RegressionSpec& regression);

ElasticityKind parse_elasticity_kind(const std::string& s);
std::string to_string(ElasticityKind kind);

}  // namespace autodml
