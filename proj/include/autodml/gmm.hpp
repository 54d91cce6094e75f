#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "autodml/autodml.hpp"

namespace autodml {

// Moment model g(w, gamma, theta) in R^r with theta in R^k. gamma enters each
// row only through a few derived numbers (the row cache), e.g.
// gamma(1,z) - gamma(0,z) for binary choice.
class GmmModel {
 public:
  virtual ~GmmModel() = default;

  virtual std::size_t moments() const = 0;
  virtual std::size_t parameters() const = 0;
  virtual std::vector<std::string> parameter_names() const = 0;
  virtual void validate(const Dataset& data) const = 0;
  // Whether the Gateaux derivative depends on (gamma, theta); linear models
  // skip the initial estimators.
  virtual bool needs_initial() const { return true; }

  // rows.size() x width matrix of gamma-derived values.
  virtual Eigen::MatrixXd cache(const Dataset& data, std::span<const std::size_t> rows,
                                const RegressionFit& gamma) const = 0;
  // g (length r) and dg/dtheta (r x k) at one row.
  virtual void evaluate(const Dataset& data, std::size_t row, const Eigen::Ref<const Eigen::RowVectorXd>& cache,
                        const Eigen::VectorXd& theta, Eigen::Ref<Eigen::VectorXd> g,
                        Eigen::Ref<Eigen::MatrixXd> jacobian) const = 0;
  // out[k](i, j) = d/dtau g^k(W_i, gamma + tau b_j, theta) at tau = 0.
  virtual void gateaux(const Dataset& data, std::span<const std::size_t> rows, const Eigen::MatrixXd& cache,
                       const Eigen::VectorXd& theta, const Dictionary& dict, std::vector<Eigen::MatrixXd>& out) const = 0;

  virtual Eigen::VectorXd start() const { return Eigen::VectorXd::Zero(static_cast<Eigen::Index>(parameters())); }
};

// g(w, gamma, theta) = m(w, gamma) - theta.
class LinearGmmModel : public GmmModel {
 public:
  explicit LinearGmmModel(MomentFunctional f) : f_(std::move(f)) {}

  std::size_t moments() const override { return 1; }
  std::size_t parameters() const override { return 1; }
  std::vector<std::string> parameter_names() const override { return {"theta"}; }
  void validate(const Dataset& data) const override { f_.validate(data); }
  bool needs_initial() const override { return false; }
  Eigen::MatrixXd cache(const Dataset& data, std::span<const std::size_t> rows,
                        const RegressionFit& gamma) const override;
  void evaluate(const Dataset& data, std::size_t row, const Eigen::Ref<const Eigen::RowVectorXd>& cache,
                const Eigen::VectorXd& theta, Eigen::Ref<Eigen::VectorXd> g,
                Eigen::Ref<Eigen::MatrixXd> jacobian) const override;
  void gateaux(const Dataset& data, std::span<const std::size_t> rows, const Eigen::MatrixXd& cache,
               const Eigen::VectorXd& theta, const Dictionary& dict, std::vector<Eigen::MatrixXd>& out) const override;

 private:
  MomentFunctional f_;
};

enum class Link { probit, logit };

// g(w, gamma, theta) = H(v,z) {d - F(v'beta + delta [gamma(1,z) - gamma(0,z)])},
// theta = (beta', delta)'.
class BinaryChoiceModel : public GmmModel {
 public:
  BinaryChoiceModel(std::string treatment, std::vector<std::string> v_columns, std::vector<std::string> h_columns,
                    Link link = Link::probit);

  std::size_t moments() const override { return h_.size(); }
  std::size_t parameters() const override { return v_.size() + 1; }
  std::vector<std::string> parameter_names() const override;
  void validate(const Dataset& data) const override;
  Eigen::MatrixXd cache(const Dataset& data, std::span<const std::size_t> rows,
                        const RegressionFit& gamma) const override;
  void evaluate(const Dataset& data, std::size_t row, const Eigen::Ref<const Eigen::RowVectorXd>& cache,
                const Eigen::VectorXd& theta, Eigen::Ref<Eigen::VectorXd> g,
                Eigen::Ref<Eigen::MatrixXd> jacobian) const override;
  void gateaux(const Dataset& data, std::span<const std::size_t> rows, const Eigen::MatrixXd& cache,
               const Eigen::VectorXd& theta, const Dictionary& dict, std::vector<Eigen::MatrixXd>& out) const override;

  double cdf(double t) const;
  double pdf(double t) const;
  // v'beta + delta [gamma(1,z) - gamma(0,z)] from a cache row.
  double index(const Eigen::Ref<const Eigen::RowVectorXd>& cache, const Eigen::VectorXd& theta) const;

 private:
  std::string treatment_;
  std::vector<std::string> v_, h_;
  Link link_;
};

Link parse_link(const std::string& s);

struct GmmConfig {
  RieszSpec riesz;
  RegressionSpec regression;
  Eigen::MatrixXd weight;  // Upsilon-hat; empty means identity
  Eigen::VectorXd lower;   // box for theta; empty means unbounded
  Eigen::VectorXd upper;
  bool iterate = false;    // second pass with the debiased estimate as theta-tilde
  std::size_t max_iterations = 200;
  double gradient_tolerance = 1e-12;
  std::size_t threads = 0;
};

struct InitialEstimate {
  std::size_t a = 0, b = 0;  // excluded folds, a < b
  Eigen::VectorXd theta;
  RegressionFit gamma;
  bool converged = true;
};

struct GmmReport {
  std::vector<std::string> names;
  Eigen::VectorXd theta;
  Eigen::MatrixXd covariance;  // V-hat, for sqrt(n)(theta-hat - theta0)
  Eigen::VectorXd std_error;
  Eigen::MatrixXd jacobian;    // G-hat
  Eigen::MatrixXd psi_outer;   // Psi-hat
  Eigen::MatrixXd weight;      // Upsilon-hat
  Eigen::MatrixXd influence;   // n x r debiased moments at theta-hat
  double objective = 0.0;
  double gradient_norm = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  std::size_t n = 0;
  std::vector<InitialEstimate> initial;
  std::vector<std::vector<RieszFit>> riesz;  // [fold][moment]
  std::vector<std::string> flags;
};

// theta-tilde for every pair of excluded folds, with gamma-tilde fitted on the
// rows in neither fold and Upsilon-tilde = I.
std::vector<InitialEstimate> initial_estimators(const GmmModel& model, const Dataset& data, const FoldPlan& folds,
                                                const RegressionSpec& regression, const GmmConfig& config);

// Rows of the Gateaux derivative over the complement of `fold` (ascending row
// order), one matrix per moment; each row uses the initial estimators that
// exclude `fold` and the row's own fold.
std::vector<Eigen::MatrixXd> gateaux_rows(const GmmModel& model, std::size_t fold, const Dictionary& dict,
                                          const Dataset& data, const FoldPlan& folds,
                                          const std::vector<InitialEstimate>& initial);
// Column means of gateaux_rows: M-hat^k for k = 1..r, as columns of a p x r matrix.
Eigen::MatrixXd gateaux_M(const GmmModel& model, std::size_t fold, const Dictionary& dict, const Dataset& data,
                          const FoldPlan& folds, const std::vector<InitialEstimate>& initial);

GmmReport fit_gmm(const GmmModel& model, const Dictionary& dict, const Dataset& data, const FoldPlan& folds,
                  const GmmConfig& config);

}  // namespace autodml
