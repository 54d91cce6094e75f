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

namespace autodml {

// Arm of a treatment-split block: multiplies the inner term by d or by (1 - d).
enum class Arm { treated, untreated };

struct Factor {
  std::string column;
  int power = 1;
};

// One basis function: an arm multiplier (optional) times a product of
// monomials. No factors means the constant term.
struct TermSpec {
  std::vector<Factor> factors;
  std::optional<Arm> arm;
  std::string arm_column;

  static TermSpec constant() { return {}; }
  static TermSpec monomial(std::string column, int power = 1);
  static TermSpec product(std::vector<Factor> factors);
  static TermSpec treatment_block(Arm arm, std::string treatment, TermSpec inner);

  bool is_constant() const { return factors.empty() && !arm; }
  bool involves(const std::string& column) const;
  std::string label() const;
};

// Column values to substitute when evaluating at a counterfactual point,
// keyed by dataset column index.
struct Override {
  std::vector<std::pair<std::size_t, double>> values;

  bool empty() const { return values.empty(); }
  void set(std::size_t column, double value);
};

// Resolves names against `data` (ValidationError on unknown columns).
Override make_override(const Dataset& data, const std::map<std::string, double>& values);

// Ordered list of basis terms b_1..b_p bound to a dataset's column layout.
// When a constant term is present it is moved to index 0.
class Dictionary {
 public:
  Dictionary() = default;
  Dictionary(std::vector<TermSpec> terms, const std::vector<std::string>& columns);

  std::size_t size() const { return terms_.size(); }
  const std::vector<TermSpec>& terms() const { return terms_; }
  std::vector<std::string> labels() const;
  bool has_intercept() const { return !terms_.empty() && terms_.front().is_constant(); }
  // Terms with no covariate factor: the constant and bare arm indicators.
  std::vector<Eigen::Index> intercept_terms() const;
  // Names of every column any term reads.
  std::vector<std::string> referenced_columns() const;

  // Same terms bound to another column layout.
  Dictionary rebind(const std::vector<std::string>& columns) const { return Dictionary(terms_, columns); }

  void eval_row(std::span<const double> row, Eigen::Ref<Eigen::VectorXd> out) const;
  Eigen::VectorXd eval_row(std::span<const double> row) const;

  // Exact term-by-term partial derivative with respect to column `wrt`.
  // Throws ValidationError when a treatment block is differentiated in its own
  // treatment column.
  void eval_partial(std::span<const double> row, std::size_t wrt, Eigen::Ref<Eigen::VectorXd> out) const;
  Eigen::VectorXd eval_partial(std::span<const double> row, std::size_t wrt) const;

  // Evaluates at the row with `change` substituted; the row itself is untouched.
  void eval_counterfactual(std::span<const double> row, const Override& change,
                           Eigen::Ref<Eigen::VectorXd> out) const;
  Eigen::VectorXd eval_counterfactual(std::span<const double> row, const Override& change) const;

  // rows.size() x p matrix of b(X_i).
  Eigen::MatrixXd eval_rows(const Dataset& data, std::span<const std::size_t> rows) const;

  // Diagnostic only: max_j max_i |b_j(X_i)|.
  double sup_norm(const Dataset& data) const;

 private:
  struct BoundFactor {
    std::size_t column;
    int power;
  };
  struct BoundTerm {
    std::vector<BoundFactor> factors;
    std::optional<Arm> arm;
    std::size_t arm_column = 0;
  };

  double eval_term(const BoundTerm& term, std::span<const double> row) const;

  std::vector<TermSpec> terms_;
  std::vector<BoundTerm> bound_;
  std::size_t width_ = 0;
};

// Term grammar, items separated by ';' and applied left to right:
//   const                 constant term
//   x   x^3   x*z^2       monomial or product
//   poly(x,k)             x, x^2, ..., x^k
//   poly(x,z,k)           every monomial in x,z of total degree 1..k
//   interact(d,*)         d times every earlier non-constant term not involving d
//   split(d)              every earlier term q becomes d*q, then all (1-d)*q
std::vector<TermSpec> parse_terms(const std::string& spec);
Dictionary parse_dictionary(const std::string& spec, const std::vector<std::string>& columns);

// Fully interacted dictionary (1, D, Z, D*Z).
std::vector<TermSpec> fully_interacted_terms(const std::string& treatment,
                                             const std::vector<std::string>& covariates);
// [d q(z)', (1-d) q(z)']'.
std::vector<TermSpec> split_terms(const std::string& treatment, const std::vector<TermSpec>& inner);

// Correlated random effects panel dictionary built from a per-period base
// dictionary b1 of size K. Cluster time averages Htilde_i of b1 are centered
// by their unweighted mean over clusters and appended to the data as columns;
// the dictionary is (b1', [b1 (x) (Htilde_i - Hbar)]')' with p = K + K*K.
struct PanelDictionary {
  Dataset data;                        // input data plus the K centered columns
  Dictionary dictionary;               // bound to `data`
  std::size_t base_size = 0;           // K
  std::vector<std::string> h_columns;  // names of the centered Htilde columns
  Eigen::VectorXd h_mean;              // Hbar before centering
  Eigen::MatrixXd evaluations;         // n_rows x p
};

PanelDictionary build_panel_dictionary(const Dataset& data, const Dictionary& base);

}  // namespace autodml
