#include "autodml/functionals.hpp"

#include <cmath>

#include <boost/math/special_functions/legendre.hpp>

#include "autodml/error.hpp"

namespace autodml {

MomentFunctional MomentFunctional::ate(std::string treatment) {
  MomentFunctional f;
  f.kind_ = FunctionalKind::ate;
  f.treatment_ = std::move(treatment);
  return f;
}

MomentFunctional MomentFunctional::cross_average(std::string treatment) {
  MomentFunctional f;
  f.kind_ = FunctionalKind::cross_average;
  f.treatment_ = std::move(treatment);
  return f;
}

MomentFunctional MomentFunctional::policy_effect(std::vector<PolicyMass> masses) {
  MomentFunctional f;
  f.kind_ = FunctionalKind::policy_effect;
  f.masses_ = std::move(masses);
  return f;
}

MomentFunctional MomentFunctional::transport(std::vector<AffineShift> map) {
  MomentFunctional f;
  f.kind_ = FunctionalKind::transport;
  f.shifts_ = std::move(map);
  return f;
}

MomentFunctional MomentFunctional::avg_derivative(std::string wrt, std::string weight) {
  MomentFunctional f;
  f.kind_ = FunctionalKind::avg_derivative;
  f.wrt_ = std::move(wrt);
  f.weight_ = std::move(weight);
  return f;
}

MomentFunctional MomentFunctional::aev_bound(AevBoundParams params) {
  MomentFunctional f;
  f.kind_ = FunctionalKind::aev_bound;
  f.aev_ = std::move(params);
  return f;
}

MomentFunctional MomentFunctional::mean() { return {}; }

std::string MomentFunctional::name() const { return to_string(kind_); }

void MomentFunctional::validate(const Dataset& data) const {
  switch (kind_) {
    case FunctionalKind::ate:
    case FunctionalKind::cross_average: {
      if (treatment_.empty()) throw ValidationError("functional '" + name() + "' needs data.treatment");
      const auto d = data.column(treatment_);
      bool zero = false, one = false;
      for (double v : d) {
        if (v == 0.0) zero = true;
        else if (v == 1.0) one = true;
        else throw ValidationError("treatment column '" + treatment_ + "' must take values in {0, 1}");
      }
      if (!(zero && one)) throw ValidationError("no variation in treatment");
      break;
    }
    case FunctionalKind::policy_effect: {
      if (masses_.empty()) throw ValidationError("policy effect needs at least one point mass");
      double total = 0.0, scale = 0.0;
      for (const auto& m : masses_) {
        make_override(data, m.point);
        if (!std::isfinite(m.weight)) throw ValidationError("policy weights must be finite");
        total += m.weight;
        scale += std::abs(m.weight);
      }
      if (std::abs(total) > 1e-12 * std::max(1.0, scale))
        throw ValidationError("policy weights must sum to 0 (a difference of two distributions)");
      break;
    }
    case FunctionalKind::transport:
      if (shifts_.empty()) throw ValidationError("transport needs a map");
      for (const auto& s : shifts_) {
        data.column_index(s.column);
        if (!std::isfinite(s.scale) || !std::isfinite(s.shift)) throw ValidationError("transport map must be finite");
      }
      break;
    case FunctionalKind::avg_derivative:
      if (wrt_.empty()) throw ValidationError("average derivative needs avg_derivative.wrt");
      data.column_index(wrt_);
      if (!weight_.empty()) data.column_index(weight_);
      break;
    case FunctionalKind::aev_bound:
      if (!(aev_.lower < aev_.upper)) throw ValidationError("aev bound needs lower < upper");
      if (!(aev_.lower > 0)) throw ValidationError("aev bound needs a positive lower price");
      if (!std::isfinite(aev_.kappa)) throw ValidationError("aev kappa must be finite");
      if (aev_.order < 2) throw ValidationError("aev quadrature order must be at least 2");
      data.column_index(aev_.price);
      data.column_index(aev_.income);
      if (!aev_.weight.empty()) data.column_index(aev_.weight);
      break;
    case FunctionalKind::mean:
      break;
  }
}

ResolvedFunctional MomentFunctional::resolve(const Dataset& data) const {
  validate(data);
  ResolvedFunctional r;
  r.kind_ = kind_;
  switch (kind_) {
    case FunctionalKind::ate:
    case FunctionalKind::cross_average:
      r.treatment_ = data.column_index(treatment_);
      break;
    case FunctionalKind::policy_effect:
      for (const auto& m : masses_) r.masses_.emplace_back(make_override(data, m.point), m.weight);
      break;
    case FunctionalKind::transport:
      for (const auto& s : shifts_) r.shifts_.push_back({data.column_index(s.column), {s.scale, s.shift}});
      break;
    case FunctionalKind::avg_derivative:
      r.wrt_ = data.column_index(wrt_);
      if (!weight_.empty()) r.weight_ = data.column_index(weight_);
      break;
    case FunctionalKind::aev_bound: {
      r.price_ = data.column_index(aev_.price);
      r.income_ = data.column_index(aev_.income);
      if (!aev_.weight.empty()) r.weight_ = data.column_index(aev_.weight);
      r.lower_ = aev_.lower;
      r.kappa_ = aev_.kappa;
      std::tie(r.nodes_, r.node_weights_) = gauss_legendre(aev_.order, aev_.lower, aev_.upper);
      break;
    }
    case FunctionalKind::mean:
      break;
  }
  return r;
}

std::vector<std::string> MomentFunctional::point_tags() const {
  switch (kind_) {
    case FunctionalKind::ate: return {"plain", "d1", "d0"};
    case FunctionalKind::cross_average: return {"plain", "d0"};
    case FunctionalKind::transport: return {"plain", "transport"};
    case FunctionalKind::avg_derivative: return {"plain", "deriv"};
    case FunctionalKind::policy_effect: {
      std::vector<std::string> tags{"plain"};
      for (std::size_t k = 0; k < masses_.size(); ++k) tags.push_back("policy" + std::to_string(k));
      return tags;
    }
    case FunctionalKind::aev_bound: {
      std::vector<std::string> tags{"plain"};
      for (int k = 0; k < aev_.order; ++k) tags.push_back("aev" + std::to_string(k));
      return tags;
    }
    case FunctionalKind::mean: return {"plain"};
  }
  return {};
}

void ResolvedFunctional::points(const Dataset& data, std::size_t row, std::vector<EvalPoint>& out) const {
  out.clear();
  switch (kind_) {
    case FunctionalKind::ate: {
      EvalPoint one{1.0, {}, std::nullopt, "d1"};
      one.change.set(treatment_, 1.0);
      EvalPoint zero{-1.0, {}, std::nullopt, "d0"};
      zero.change.set(treatment_, 0.0);
      out.push_back(std::move(one));
      out.push_back(std::move(zero));
      break;
    }
    case FunctionalKind::cross_average: {
      EvalPoint zero{data(row, treatment_), {}, std::nullopt, "d0"};
      zero.change.set(treatment_, 0.0);
      out.push_back(std::move(zero));
      break;
    }
    case FunctionalKind::policy_effect:
      for (std::size_t k = 0; k < masses_.size(); ++k)
        out.push_back({masses_[k].second, masses_[k].first, std::nullopt, "policy" + std::to_string(k)});
      break;
    case FunctionalKind::transport: {
      EvalPoint moved{1.0, {}, std::nullopt, "transport"};
      for (const auto& [col, affine] : shifts_) moved.change.set(col, affine.first * data(row, col) + affine.second);
      out.push_back(std::move(moved));
      out.push_back({-1.0, {}, std::nullopt, "plain"});
      break;
    }
    case FunctionalKind::avg_derivative:
      out.push_back({weight_ ? data(row, *weight_) : 1.0, {}, wrt_, "deriv"});
      break;
    case FunctionalKind::aev_bound: {
      const double omega = weight_ ? data(row, *weight_) : 1.0;
      const double income = data(row, *income_);
      for (std::size_t k = 0; k < nodes_.size(); ++k) {
        const double u = nodes_[k];
        EvalPoint pt{omega * node_weights_[k] * income / u * std::exp(-kappa_ * (u - lower_)), {}, std::nullopt,
                     "aev" + std::to_string(k)};
        pt.change.set(price_, u);
        out.push_back(std::move(pt));
      }
      break;
    }
    case FunctionalKind::mean:
      out.push_back({1.0, {}, std::nullopt, "plain"});
      break;
  }
}

std::pair<std::vector<double>, std::vector<double>> gauss_legendre(int order, double a, double b) {
  if (order < 2) throw ValidationError("quadrature order must be at least 2");
  const auto positive = boost::math::legendre_p_zeros<double>(order);
  std::vector<double> x, w;
  const double half = 0.5 * (b - a), mid = 0.5 * (a + b);
  auto push = [&](double t) {
    const double dp = boost::math::legendre_p_prime(order, t);
    x.push_back(mid + half * t);
    w.push_back(half * 2.0 / ((1.0 - t * t) * dp * dp));
  };
  // Ascending order: negatives first, then the non-negative zeros.
  for (auto it = positive.rbegin(); it != positive.rend(); ++it)
    if (*it > 0.0) push(-*it);
  for (double t : positive) push(t);
  return {x, w};
}

namespace {

// Writes the dictionary (or its partial) at `pt` for `row` into `out`.
void eval_at_point(const Dictionary& dict, std::span<const double> row, const EvalPoint& pt,
                   Eigen::Ref<Eigen::VectorXd> out) {
  if (!pt.derivative) {
    dict.eval_counterfactual(row, pt.change, out);
    return;
  }
  if (pt.change.empty()) {
    dict.eval_partial(row, *pt.derivative, out);
    return;
  }
  thread_local std::vector<double> scratch;
  scratch.assign(row.begin(), row.end());
  for (const auto& [c, v] : pt.change.values) scratch[c] = v;
  dict.eval_partial(scratch, *pt.derivative, out);
}

}  // namespace

Eigen::MatrixXd moment_rows(const MomentFunctional& f, const Dictionary& dict, const Dataset& data,
                            std::span<const std::size_t> rows) {
  const auto resolved = f.resolve(data);
  const auto p = static_cast<Eigen::Index>(dict.size());
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows.size()), p);
  Eigen::VectorXd tmp(p);
  std::vector<EvalPoint> pts;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    resolved.points(data, rows[k], pts);
    const auto row = data.row(rows[k]);
    for (const auto& pt : pts) {
      if (pt.weight == 0.0) continue;
      eval_at_point(dict, row, pt, tmp);
      out.row(static_cast<Eigen::Index>(k)) += pt.weight * tmp.transpose();
    }
  }
  return out;
}

MomentVector moment_of_dictionary(const MomentFunctional& f, const Dictionary& dict, const Dataset& data,
                                  std::span<const std::size_t> rows) {
  if (rows.empty()) throw ValidationError("moment vector needs at least one row");
  MomentVector mv;
  mv.values = moment_rows(f, dict, data, rows).colwise().mean().transpose();
  mv.n_used = rows.size();
  return mv;
}

GramMatrix gram(const Dictionary& dict, const Dataset& data, std::span<const std::size_t> rows) {
  if (rows.empty()) throw ValidationError("Gram matrix needs at least one row");
  const Eigen::MatrixXd B = dict.eval_rows(data, rows);
  GramMatrix g;
  g.values = B.transpose() * B / static_cast<double>(rows.size());
  g.values = 0.5 * (g.values + g.values.transpose()).eval();
  g.n_used = rows.size();
  return g;
}

std::vector<double> moment_of_regression(const MomentFunctional& f, const RegressionFit& fit, const Dataset& data,
                                         std::span<const std::size_t> rows) {
  if (fit.kind == RegressionKind::external && f.needs_derivative()) {
    for (std::size_t r : rows)
      if (!fit.table->find(r, "deriv"))
        throw ValidationError("average derivative with an external learner needs 'deriv' predictions");
  }
  const auto resolved = f.resolve(data);
  std::vector<double> out(rows.size(), 0.0);
  std::vector<EvalPoint> pts;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    resolved.points(data, rows[k], pts);
    double v = 0.0;
    for (const auto& pt : pts) {
      if (pt.weight == 0.0) continue;
      v += pt.weight * predict(fit, data, rows[k], pt.change, pt.derivative, pt.tag);
    }
    out[k] = v;
  }
  return out;
}

std::string to_string(FunctionalKind kind) {
  switch (kind) {
    case FunctionalKind::ate: return "ate";
    case FunctionalKind::cross_average: return "cross_average";
    case FunctionalKind::policy_effect: return "policy_effect";
    case FunctionalKind::transport: return "transport";
    case FunctionalKind::avg_derivative: return "avg_derivative";
    case FunctionalKind::aev_bound: return "aev_bound";
    case FunctionalKind::mean: return "mean";
  }
  return "unknown";
}

}  // namespace autodml
