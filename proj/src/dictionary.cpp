#include "autodml/dictionary.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <set>

#include "autodml/error.hpp"

namespace autodml {

namespace {

double int_pow(double x, int power) {
  double r = 1.0;
  for (int k = 0; k < power; ++k) r *= x;
  return r;
}

// Merges repeated columns by adding powers, keeping first-appearance order.
std::vector<Factor> normalize_factors(std::vector<Factor> factors) {
  std::vector<Factor> out;
  for (auto& f : factors) {
    if (f.power < 1) throw ValidationError("monomial power must be >= 1 (column '" + f.column + "')");
    if (f.column.empty()) throw ValidationError("monomial with empty column name");
    auto it = std::find_if(out.begin(), out.end(), [&](const Factor& g) { return g.column == f.column; });
    if (it == out.end()) {
      out.push_back(std::move(f));
    } else {
      it->power += f.power;
    }
  }
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  for (const char c : s) {
    if (c == sep) {
      parts.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  parts.push_back(trim(cur));
  return parts;
}

int parse_positive_int(const std::string& s, const std::string& context) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || v < 1) {
    throw ValidationError("expected positive integer in '" + context + "', got '" + s + "'");
  }
  return v;
}

// All exponent vectors over `k` variables with total degree exactly `degree`,
// in descending lexicographic order (x^2, x*z, z^2).
void exponents_of_degree(std::size_t k, int degree, std::vector<int>& cur,
                         std::vector<std::vector<int>>& out) {
  if (cur.size() + 1 == k) {
    cur.push_back(degree);
    out.push_back(cur);
    cur.pop_back();
    return;
  }
  for (int e = degree; e >= 0; --e) {
    cur.push_back(e);
    exponents_of_degree(k, degree - e, cur, out);
    cur.pop_back();
  }
}

}  // namespace

TermSpec TermSpec::monomial(std::string column, int power) {
  return product({Factor{std::move(column), power}});
}

TermSpec TermSpec::product(std::vector<Factor> factors) {
  TermSpec t;
  t.factors = normalize_factors(std::move(factors));
  return t;
}

TermSpec TermSpec::treatment_block(Arm arm, std::string treatment, TermSpec inner) {
  if (inner.arm) throw ValidationError("nested treatment blocks are not supported");
  if (treatment.empty()) throw ValidationError("treatment block needs a treatment column");
  inner.arm = arm;
  inner.arm_column = std::move(treatment);
  return inner;
}

bool TermSpec::involves(const std::string& column) const {
  if (arm && arm_column == column) return true;
  return std::any_of(factors.begin(), factors.end(), [&](const Factor& f) { return f.column == column; });
}

std::string TermSpec::label() const {
  std::string body;
  for (const auto& f : factors) {
    if (!body.empty()) body += "*";
    body += f.column;
    if (f.power != 1) body += "^" + std::to_string(f.power);
  }
  if (body.empty()) body = "1";
  if (!arm) return body;
  return (*arm == Arm::treated ? "[" + arm_column + "]" : "[1-" + arm_column + "]") + body;
}

void Override::set(std::size_t column, double value) {
  for (auto& [c, v] : values) {
    if (c == column) {
      v = value;
      return;
    }
  }
  values.emplace_back(column, value);
}

Override make_override(const Dataset& data, const std::map<std::string, double>& values) {
  Override o;
  for (const auto& [name, v] : values) {
    const auto j = data.find_column(name);
    if (!j) throw ValidationError("unknown override column '" + name + "'");
    o.set(*j, v);
  }
  return o;
}

Dictionary::Dictionary(std::vector<TermSpec> terms, const std::vector<std::string>& columns)
    : width_(columns.size()) {
  if (terms.empty()) throw ValidationError("dictionary must have at least one term");
  // Constant term (at most one) goes first so the intercept penalty applies to index 0.
  std::stable_partition(terms.begin(), terms.end(), [](const TermSpec& t) { return t.is_constant(); });
  std::set<std::string> labels;
  auto index_of = [&](const std::string& name) {
    const auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) throw ValidationError("missing column '" + name + "' referenced by dictionary");
    return static_cast<std::size_t>(it - columns.begin());
  };
  for (auto& t : terms) {
    t.factors = normalize_factors(std::move(t.factors));
    if (!labels.insert(t.label()).second) throw ValidationError("duplicate dictionary term '" + t.label() + "'");
    BoundTerm b;
    for (const auto& f : t.factors) b.factors.push_back({index_of(f.column), f.power});
    if (t.arm) {
      b.arm = t.arm;
      b.arm_column = index_of(t.arm_column);
    }
    bound_.push_back(std::move(b));
  }
  terms_ = std::move(terms);
}

std::vector<Eigen::Index> Dictionary::intercept_terms() const {
  std::vector<Eigen::Index> out;
  for (std::size_t j = 0; j < terms_.size(); ++j)
    if (terms_[j].factors.empty()) out.push_back(static_cast<Eigen::Index>(j));
  return out;
}

std::vector<std::string> Dictionary::labels() const {
  std::vector<std::string> out;
  for (const auto& t : terms_) out.push_back(t.label());
  return out;
}

std::vector<std::string> Dictionary::referenced_columns() const {
  std::vector<std::string> out;
  auto add = [&](const std::string& c) {
    if (std::find(out.begin(), out.end(), c) == out.end()) out.push_back(c);
  };
  for (const auto& t : terms_) {
    if (t.arm) add(t.arm_column);
    for (const auto& f : t.factors) add(f.column);
  }
  return out;
}

double Dictionary::eval_term(const BoundTerm& term, std::span<const double> row) const {
  double v = 1.0;
  for (const auto& f : term.factors) v *= int_pow(row[f.column], f.power);
  if (term.arm) {
    const double d = row[term.arm_column];
    v *= (*term.arm == Arm::treated) ? d : 1.0 - d;
  }
  return v;
}

void Dictionary::eval_row(std::span<const double> row, Eigen::Ref<Eigen::VectorXd> out) const {
  for (std::size_t j = 0; j < bound_.size(); ++j) out[static_cast<Eigen::Index>(j)] = eval_term(bound_[j], row);
}

Eigen::VectorXd Dictionary::eval_row(std::span<const double> row) const {
  Eigen::VectorXd out(static_cast<Eigen::Index>(size()));
  eval_row(row, out);
  return out;
}

void Dictionary::eval_partial(std::span<const double> row, std::size_t wrt,
                              Eigen::Ref<Eigen::VectorXd> out) const {
  for (std::size_t j = 0; j < bound_.size(); ++j) {
    const auto& term = bound_[j];
    if (term.arm && term.arm_column == wrt) {
      throw ValidationError("term '" + terms_[j].label() +
                            "' is a treatment block and cannot be differentiated in its treatment column");
    }
    double v = 0.0;
    for (std::size_t k = 0; k < term.factors.size(); ++k) {
      if (term.factors[k].column != wrt) continue;
      const int power = term.factors[k].power;
      v = power * int_pow(row[wrt], power - 1);
      for (std::size_t m = 0; m < term.factors.size(); ++m) {
        if (m != k) v *= int_pow(row[term.factors[m].column], term.factors[m].power);
      }
      break;
    }
    if (v != 0.0 && term.arm) {
      const double d = row[term.arm_column];
      v *= (*term.arm == Arm::treated) ? d : 1.0 - d;
    }
    out[static_cast<Eigen::Index>(j)] = v;
  }
}

Eigen::VectorXd Dictionary::eval_partial(std::span<const double> row, std::size_t wrt) const {
  Eigen::VectorXd out(static_cast<Eigen::Index>(size()));
  eval_partial(row, wrt, out);
  return out;
}

void Dictionary::eval_counterfactual(std::span<const double> row, const Override& change,
                                     Eigen::Ref<Eigen::VectorXd> out) const {
  if (change.empty()) {
    eval_row(row, out);
    return;
  }
  thread_local std::vector<double> scratch;
  scratch.assign(row.begin(), row.end());
  for (const auto& [c, v] : change.values) {
    if (c >= scratch.size()) throw ValidationError("override column index out of range");
    scratch[c] = v;
  }
  eval_row(scratch, out);
}

Eigen::VectorXd Dictionary::eval_counterfactual(std::span<const double> row, const Override& change) const {
  Eigen::VectorXd out(static_cast<Eigen::Index>(size()));
  eval_counterfactual(row, change, out);
  return out;
}

Eigen::MatrixXd Dictionary::eval_rows(const Dataset& data, std::span<const std::size_t> rows) const {
  if (data.n_cols() != width_) throw ValidationError("dictionary is bound to a different column layout");
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(size()));
  Eigen::VectorXd buf(static_cast<Eigen::Index>(size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    eval_row(data.row(rows[r]), buf);
    out.row(static_cast<Eigen::Index>(r)) = buf.transpose();
  }
  return out;
}

double Dictionary::sup_norm(const Dataset& data) const {
  const auto b = eval_rows(data, all_rows(data.n_rows()));
  return b.size() == 0 ? 0.0 : b.cwiseAbs().maxCoeff();
}

std::vector<TermSpec> parse_terms(const std::string& spec) {
  std::vector<TermSpec> terms;
  for (const auto& item : split_on(spec, ';')) {
    if (item.empty()) continue;
    const auto open = item.find('(');
    if (open != std::string::npos) {
      if (item.back() != ')') throw ValidationError("malformed dictionary item '" + item + "'");
      const std::string fn = trim(item.substr(0, open));
      const auto args = split_on(item.substr(open + 1, item.size() - open - 2), ',');
      if (fn == "poly") {
        if (args.size() < 2) throw ValidationError("poly needs columns and a degree: '" + item + "'");
        const int degree = parse_positive_int(args.back(), item);
        const std::vector<std::string> cols(args.begin(), args.end() - 1);
        for (int deg = 1; deg <= degree; ++deg) {
          std::vector<std::vector<int>> exps;
          std::vector<int> cur;
          exponents_of_degree(cols.size(), deg, cur, exps);
          for (const auto& e : exps) {
            std::vector<Factor> fs;
            for (std::size_t k = 0; k < cols.size(); ++k)
              if (e[k] > 0) fs.push_back({cols[k], e[k]});
            terms.push_back(TermSpec::product(std::move(fs)));
          }
        }
      } else if (fn == "interact") {
        if (args.size() != 2 || args[1] != "*") {
          throw ValidationError("interact takes (column,*): '" + item + "'");
        }
        const auto& d = args[0];
        std::vector<TermSpec> extra;
        for (const auto& t : terms) {
          if (t.is_constant() || t.involves(d) || t.arm) continue;
          auto fs = t.factors;
          fs.insert(fs.begin(), Factor{d, 1});
          extra.push_back(TermSpec::product(std::move(fs)));
        }
        terms.insert(terms.end(), extra.begin(), extra.end());
      } else if (fn == "split") {
        if (args.size() != 1 || args[0].empty()) throw ValidationError("split takes one column: '" + item + "'");
        terms = split_terms(args[0], terms);
      } else {
        throw ValidationError("unknown dictionary function '" + fn + "'");
      }
      continue;
    }
    if (item == "const" || item == "1") {
      terms.push_back(TermSpec::constant());
      continue;
    }
    std::vector<Factor> fs;
    for (const auto& part : split_on(item, '*')) {
      const auto caret = part.find('^');
      if (caret == std::string::npos) {
        fs.push_back({part, 1});
      } else {
        fs.push_back({trim(part.substr(0, caret)), parse_positive_int(trim(part.substr(caret + 1)), item)});
      }
    }
    terms.push_back(TermSpec::product(std::move(fs)));
  }
  if (terms.empty()) throw ValidationError("empty dictionary specification");
  return terms;
}

Dictionary parse_dictionary(const std::string& spec, const std::vector<std::string>& columns) {
  return Dictionary(parse_terms(spec), columns);
}

std::vector<TermSpec> fully_interacted_terms(const std::string& treatment,
                                             const std::vector<std::string>& covariates) {
  std::vector<TermSpec> terms{TermSpec::constant(), TermSpec::monomial(treatment)};
  for (const auto& z : covariates) terms.push_back(TermSpec::monomial(z));
  for (const auto& z : covariates) terms.push_back(TermSpec::product({{treatment, 1}, {z, 1}}));
  return terms;
}

std::vector<TermSpec> split_terms(const std::string& treatment, const std::vector<TermSpec>& inner) {
  std::vector<TermSpec> out;
  for (const auto arm : {Arm::treated, Arm::untreated}) {
    for (const auto& q : inner) {
      if (q.involves(treatment)) {
        throw ValidationError("split(" + treatment + ") applied to a term that already involves it");
      }
      out.push_back(TermSpec::treatment_block(arm, treatment, q));
    }
  }
  return out;
}

PanelDictionary build_panel_dictionary(const Dataset& data, const Dictionary& base) {
  if (!data.has_clusters()) throw ValidationError("panel dictionary needs a cluster id column");
  const auto n = data.n_rows();
  const auto K = static_cast<Eigen::Index>(base.size());
  const Eigen::MatrixXd b1 = base.rebind(data.names()).eval_rows(data, all_rows(n));

  std::map<std::int64_t, std::pair<Eigen::VectorXd, std::size_t>> sums;
  for (std::size_t i = 0; i < n; ++i) {
    auto [it, fresh] = sums.try_emplace(data.cluster_ids()[i], Eigen::VectorXd::Zero(K), 0);
    it->second.first += b1.row(static_cast<Eigen::Index>(i)).transpose();
    it->second.second += 1;
  }
  std::map<std::int64_t, Eigen::VectorXd> htilde;
  Eigen::VectorXd h_mean = Eigen::VectorXd::Zero(K);
  for (const auto& [id, s] : sums) {
    htilde[id] = s.first / static_cast<double>(s.second);
    h_mean += htilde[id];
  }
  h_mean /= static_cast<double>(sums.size());

  PanelDictionary out;
  out.base_size = base.size();
  out.h_mean = h_mean;
  Dataset augmented = data;
  const auto labels = base.labels();
  for (Eigen::Index k = 0; k < K; ++k) {
    const std::string name = "htilde[" + labels[static_cast<std::size_t>(k)] + "]";
    if (data.find_column(name)) throw ValidationError("column '" + name + "' already exists");
    std::vector<double> col(n);
    for (std::size_t i = 0; i < n; ++i) col[i] = htilde.at(data.cluster_ids()[i])[k] - h_mean[k];
    augmented = augmented.with_column(name, col);
    out.h_columns.push_back(name);
  }

  std::vector<TermSpec> terms = base.terms();
  for (const auto& t : base.terms()) {
    for (const auto& h : out.h_columns) {
      TermSpec cross = t;
      cross.factors.push_back({h, 1});
      terms.push_back(std::move(cross));
    }
  }
  out.dictionary = Dictionary(std::move(terms), augmented.names());
  out.evaluations = out.dictionary.eval_rows(augmented, all_rows(n));
  out.data = std::move(augmented);
  return out;
}

}  // namespace autodml
