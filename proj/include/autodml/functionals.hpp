#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "autodml/dataset.hpp"
#include "autodml/dictionary.hpp"
#include "autodml/regression.hpp"

namespace autodml {

enum class FunctionalKind { ate, cross_average, policy_effect, transport, avg_derivative, aev_bound, mean };

// One signed point mass of mu = F1 - F0. Columns not named keep the row's values.
struct PolicyMass {
  std::map<std::string, double> point;
  double weight = 0.0;
};

// x_column -> scale * x_column + shift.
struct AffineShift {
  std::string column;
  double scale = 1.0;
  double shift = 0.0;
};

struct AevBoundParams {
  std::string price;   // p1, integrated over [lower, upper]
  std::string income;  // z1
  std::string weight;  // omega; empty means 1
  double lower = 0.0;
  double upper = 0.0;
  double kappa = 0.0;
  int order = 32;
};

// A point at which m(w, .) evaluates its argument for one row, with the
// coefficient it enters with: m(w, g) = sum_k weight_k * g(point_k).
struct EvalPoint {
  double weight = 1.0;
  Override change;
  std::optional<std::size_t> derivative;  // column index; evaluate dg/dx there
  std::string tag;
};

class ResolvedFunctional;

class MomentFunctional {
 public:
  static MomentFunctional ate(std::string treatment);
  static MomentFunctional cross_average(std::string treatment);
  static MomentFunctional policy_effect(std::vector<PolicyMass> masses);
  static MomentFunctional transport(std::vector<AffineShift> map);
  static MomentFunctional avg_derivative(std::string wrt, std::string weight = {});
  static MomentFunctional aev_bound(AevBoundParams params);
  // m(w, g) = g(x).
  static MomentFunctional mean();

  FunctionalKind kind() const { return kind_; }
  std::string name() const;
  const std::string& treatment() const { return treatment_; }
  const std::string& wrt() const { return wrt_; }

  // Checks columns and the treatment's support; ValidationError otherwise.
  void validate(const Dataset& data) const;
  ResolvedFunctional resolve(const Dataset& data) const;

  // Point tags an external prediction table must carry for this functional.
  std::vector<std::string> point_tags() const;
  bool needs_derivative() const { return kind_ == FunctionalKind::avg_derivative; }

 private:
  FunctionalKind kind_ = FunctionalKind::mean;
  std::string treatment_;
  std::string wrt_;
  std::string weight_;
  std::vector<PolicyMass> masses_;
  std::vector<AffineShift> shifts_;
  AevBoundParams aev_;

  friend class ResolvedFunctional;
};

// A functional with column names bound to a dataset layout.
class ResolvedFunctional {
 public:
  void points(const Dataset& data, std::size_t row, std::vector<EvalPoint>& out) const;

 private:
  friend class MomentFunctional;
  FunctionalKind kind_ = FunctionalKind::mean;
  std::size_t treatment_ = 0, wrt_ = 0;
  std::optional<std::size_t> weight_, income_;
  std::vector<std::pair<Override, double>> masses_;
  std::vector<std::pair<std::size_t, std::pair<double, double>>> shifts_;
  std::size_t price_ = 0;
  double lower_ = 0.0, kappa_ = 0.0;
  std::vector<double> nodes_, node_weights_;
};

// Gauss-Legendre nodes and weights on [a, b].
std::pair<std::vector<double>, std::vector<double>> gauss_legendre(int order, double a, double b);

struct MomentVector {
  Eigen::VectorXd values;
  std::size_t n_used = 0;
};

struct GramMatrix {
  Eigen::MatrixXd values;
  std::size_t n_used = 0;
};

// rows.size() x p matrix with entries m(W_i, b_j).
Eigen::MatrixXd moment_rows(const MomentFunctional& f, const Dictionary& dict, const Dataset& data,
                            std::span<const std::size_t> rows);

MomentVector moment_of_dictionary(const MomentFunctional& f, const Dictionary& dict, const Dataset& data,
                                  std::span<const std::size_t> rows);

GramMatrix gram(const Dictionary& dict, const Dataset& data, std::span<const std::size_t> rows);

// Per-row m(W_i, gamma-hat).
std::vector<double> moment_of_regression(const MomentFunctional& f, const RegressionFit& fit, const Dataset& data,
                                         std::span<const std::size_t> rows);

std::string to_string(FunctionalKind kind);

}  // namespace autodml
