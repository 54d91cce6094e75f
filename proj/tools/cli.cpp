#include "cli.hpp"

#include <algorithm>
#include <charconv>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "autodml/error.hpp"
#include "autodml/rng.hpp"
#include "autodml/sim.hpp"

namespace autodml::cli {

namespace {

using nlohmann::json;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::optional<double> parse_double(const std::string& s) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  const auto res = std::from_chars(s.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end) return std::nullopt;
  return v;
}

std::string fmt(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string fixed(double v, int digits = 6) {
  std::ostringstream os;
  os << std::setprecision(digits) << v;
  return os.str();
}

json vec(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

json mat(const Eigen::MatrixXd& m) {
  json out = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) out.push_back(vec(m.row(i).transpose()));
  return out;
}

json fit_json(const RieszFit& fit) {
  return {{"learner", to_string(fit.learner)},
          {"r_L", fit.r_L},
          {"kkt_residual", fit.kkt_residual},
          {"outer_iters", fit.outer_iters},
          {"sweeps", fit.sweeps},
          {"converged", fit.converged},
          {"outer_converged", fit.outer_converged},
          {"pseudo_inverse_init", fit.pseudo_inverse_init},
          {"nonzero", (fit.coefficients.array() != 0.0).count()},
          {"coefficients", vec(fit.coefficients)}};
}

LassoMDConfig read_lasso(const Config& cfg, const std::string& prefix) {
  LassoMDConfig c;
  c.c1 = cfg.number(prefix + ".c1", c.c1);
  c.c2 = cfg.number(prefix + ".c2", c.c2);
  c.c3 = cfg.number(prefix + ".c3", c.c3);
  c.low_dim_fraction = cfg.number(prefix + ".low_dim_fraction", c.low_dim_fraction);
  c.max_outer_iters = cfg.count(prefix + ".max_outer_iters", c.max_outer_iters);
  c.ridge_shift = cfg.number(prefix + ".ridge_shift", c.ridge_shift);
  c.tolerance = cfg.number(prefix + ".tolerance", c.tolerance);
  c.outer_tolerance = cfg.number(prefix + ".outer_tolerance", c.outer_tolerance);
  c.max_sweeps = cfg.count(prefix + ".max_sweeps", c.max_sweeps);
  c.fixed_r_L = cfg.number(prefix + ".r_L");
  c.r_L_multiplier = cfg.number(prefix + ".r_L_multiplier", c.r_L_multiplier);
  c.normalize = cfg.flag(prefix + ".normalize", c.normalize);
  c.low_dim_init = cfg.flag(prefix + ".low_dim_init", c.low_dim_init);
  c.warm_start = cfg.flag(prefix + ".warm_start", c.warm_start);
  c.intercept_discount = cfg.flag(prefix + ".intercept_discount", c.intercept_discount);
  c.validate();
  return c;
}

RieszSpec read_riesz(const Config& cfg) {
  RieszSpec spec;
  const std::string method = cfg.text("riesz.method", "lasso_md");
  if (method == "lasso_md") {
    spec.method = RieszMethod::lasso_md;
  } else if (method == "dantzig_md") {
    spec.method = RieszMethod::dantzig_md;
    const auto lambda = cfg.number("riesz.lambda");
    if (!lambda) throw ValidationError("riesz.method = dantzig_md needs riesz.lambda");
    spec.dantzig.lambda = *lambda;
    spec.dantzig.validate();
  } else if (method == "zero") {
    spec.method = RieszMethod::zero;
  } else {
    throw ValidationError("riesz.method: unknown learner '" + method + "' (lasso_md, dantzig_md, zero)");
  }
  spec.lasso = read_lasso(cfg, "riesz");
  return spec;
}

RegressionSpec read_regression(const Config& cfg, const Dataset& data) {
  RegressionSpec spec;
  const std::string method = cfg.text("regression.method", "lasso_md");
  if (method == "lasso_md") {
    spec.method = RegressionMethod::lasso_md;
  } else if (method == "ols") {
    spec.method = RegressionMethod::ols;
  } else if (method == "external") {
    spec.method = RegressionMethod::external;
    if (!cfg.has("regression.table")) throw ValidationError("regression.method = external needs regression.table");
    spec.table = std::make_shared<const PredictionTable>(load_prediction_table(cfg.path("regression.table")));
  } else {
    throw ValidationError("regression.method: unknown learner '" + method + "' (lasso_md, ols, external)");
  }
  spec.lasso = read_lasso(cfg, "regression");
  if (const auto d = cfg.get("regression.dictionary"))
    spec.dictionary = std::make_shared<const Dictionary>(parse_dictionary(*d, data.names()));
  return spec;
}

MomentFunctional read_functional(const Config& cfg, const ColumnRoles& roles) {
  const std::string name = cfg.require("functional");
  auto need_treatment = [&] {
    if (roles.treatment.empty())
      throw ValidationError("functional = " + name + " needs data.treatment (the binary treatment column)");
    return roles.treatment;
  };
  if (name == "ate") return MomentFunctional::ate(need_treatment());
  if (name == "cross_average") return MomentFunctional::cross_average(need_treatment());
  if (name == "mean") return MomentFunctional::mean();
  if (name == "avg_derivative") {
    return MomentFunctional::avg_derivative(cfg.require("functional.wrt"), cfg.text("functional.weight", ""));
  }
  if (name == "policy") {
    std::map<std::string, PolicyMass> masses;
    for (const auto& key : cfg.keys_under("functional.policy")) {
      const std::string rest = key.substr(std::string("functional.policy.").size());
      const auto dot = rest.find('.');
      if (dot == std::string::npos) throw ValidationError(key + ": expected functional.policy.<point>.<column>");
      const std::string point = rest.substr(0, dot), field = rest.substr(dot + 1);
      const double v = *cfg.number(key);
      if (field == "weight") masses[point].weight = v;
      else masses[point].point[field] = v;
    }
    if (masses.empty()) throw ValidationError("functional = policy needs functional.policy.<point>.weight keys");
    std::vector<PolicyMass> out;
    for (auto& [_, m] : masses) out.push_back(std::move(m));
    return MomentFunctional::policy_effect(std::move(out));
  }
  if (name == "transport") {
    std::map<std::string, AffineShift> shifts;
    for (const auto& key : cfg.keys_under("functional.transport")) {
      const std::string rest = key.substr(std::string("functional.transport.").size());
      const auto dot = rest.find('.');
      if (dot == std::string::npos) throw ValidationError(key + ": expected functional.transport.<column>.scale|shift");
      const std::string column = rest.substr(0, dot), field = rest.substr(dot + 1);
      auto& s = shifts[column];
      s.column = column;
      if (field == "scale") s.scale = *cfg.number(key);
      else if (field == "shift") s.shift = *cfg.number(key);
      else throw ValidationError(key + ": expected scale or shift");
    }
    if (shifts.empty()) throw ValidationError("functional = transport needs functional.transport.<column>.shift keys");
    std::vector<AffineShift> out;
    for (auto& [_, s] : shifts) out.push_back(std::move(s));
    return MomentFunctional::transport(std::move(out));
  }
  if (name == "aev_bound") {
    AevBoundParams p;
    p.price = cfg.require("functional.aev.price");
    p.income = cfg.require("functional.aev.income");
    p.weight = cfg.text("functional.aev.weight", "");
    auto bound = [&](const std::string& key) {
      const auto v = cfg.number(key);
      if (!v) throw ValidationError("missing config key '" + key + "'");
      return *v;
    };
    p.lower = bound("functional.aev.lower");
    p.upper = bound("functional.aev.upper");
    p.kappa = cfg.number("functional.aev.kappa", 0.0);
    p.order = static_cast<int>(cfg.count("functional.aev.order", 32));
    return MomentFunctional::aev_bound(std::move(p));
  }
  throw ValidationError("functional: unknown kind '" + name +
                        "' (ate, cross_average, policy, transport, avg_derivative, aev_bound, mean)");
}

std::uint64_t read_seed(const Config& cfg) {
  const std::string s = cfg.text("seed", "1");
  std::uint64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw ValidationError("seed: expected a non-negative integer");
  return v;
}

struct Common {
  Dataset data;
  std::shared_ptr<const Dictionary> dictionary;
  ColumnRoles roles;
};

Common read_common(const Config& cfg) {
  Common c;
  c.roles = ColumnRoles{cfg.text("data.outcome", "y"), cfg.text("data.treatment", ""), cfg.text("data.cluster", "")};
  const std::string spec = cfg.require("dictionary");
  const bool panel = cfg.flag("dictionary.panel", false);
  // Parse the grammar before touching the data so typos surface first.
  parse_terms(spec);
  c.data = load_csv(cfg.path("data.path"), CsvSchema{c.roles, cfg.list("data.columns")});
  Dictionary base = parse_dictionary(spec, c.data.names());
  if (panel) {
    if (!c.data.has_clusters()) throw ValidationError("dictionary.panel = true needs data.cluster");
    auto p = build_panel_dictionary(c.data, base);
    c.data = std::move(p.data);
    c.dictionary = std::make_shared<const Dictionary>(std::move(p.dictionary));
  } else {
    c.dictionary = std::make_shared<const Dictionary>(std::move(base));
  }
  return c;
}

std::filesystem::path temp_sibling(const std::filesystem::path& p) {
  return p.parent_path() / ("." + p.filename().string() + ".partial");
}

std::string ci_text(double theta, double se) {
  return "[" + fixed(theta - 1.96 * se) + ", " + fixed(theta + 1.96 * se) + "]";
}

}  // namespace

Config Config::parse(const std::string& text, const std::string& origin) {
  Config cfg;
  cfg.origin_ = origin;
  std::istringstream in(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const std::string where = origin + ":" + std::to_string(lineno);
    if (t.front() == '[') {
      if (t.back() != ']') throw ValidationError(where + ": unterminated section header");
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ValidationError(where + ": expected 'key = value'");
    const std::string key = trim(t.substr(0, eq));
    if (key.empty() || !std::all_of(key.begin(), key.end(), [](char ch) {
          return std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '.';
        }))
      throw ValidationError(where + ": bad key '" + key + "'");
    const std::string full = section.empty() ? key : section + "." + key;
    if (cfg.values_.count(full)) throw ValidationError(where + ": duplicate key '" + full + "'");
    cfg.values_[full] = trim(t.substr(eq + 1));
  }
  return cfg;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  Config cfg = parse(buf.str(), path.string());
  cfg.base_ = path.parent_path();
  return cfg;
}

bool Config::has(const std::string& key) const { return values_.count(key) > 0; }

std::optional<std::string> Config::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  used_.insert(key);
  return it->second;
}

std::string Config::require(const std::string& key) const {
  auto v = get(key);
  if (!v || v->empty()) throw ValidationError("missing config key '" + key + "'");
  return *v;
}

std::string Config::text(const std::string& key, const std::string& fallback) const {
  return get(key).value_or(fallback);
}

std::optional<double> Config::number(const std::string& key) const {
  const auto v = get(key);
  if (!v) return std::nullopt;
  const auto d = parse_double(*v);
  if (!d || !std::isfinite(*d)) throw ValidationError(key + ": expected a number, got '" + *v + "'");
  return d;
}

double Config::number(const std::string& key, double fallback) const { return number(key).value_or(fallback); }

std::size_t Config::count(const std::string& key, std::size_t fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  std::size_t out = 0;
  const auto res = std::from_chars(v->data(), v->data() + v->size(), out);
  if (res.ec != std::errc() || res.ptr != v->data() + v->size())
    throw ValidationError(key + ": expected a non-negative integer, got '" + *v + "'");
  return out;
}

bool Config::flag(const std::string& key, bool fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes") return true;
  if (*v == "false" || *v == "0" || *v == "no") return false;
  throw ValidationError(key + ": expected true or false, got '" + *v + "'");
}

std::vector<std::string> Config::list(const std::string& key) const {
  std::vector<std::string> out;
  const auto v = get(key);
  if (!v) return out;
  std::stringstream ss(*v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) throw ValidationError(key + ": empty list item");
    out.push_back(item);
  }
  return out;
}

std::vector<double> Config::numbers(const std::string& key) const {
  std::vector<double> out;
  for (const auto& s : list(key)) {
    const auto d = parse_double(s);
    if (!d || !std::isfinite(*d)) throw ValidationError(key + ": expected numbers, got '" + s + "'");
    out.push_back(*d);
  }
  return out;
}

std::vector<std::string> Config::keys_under(const std::string& prefix) const {
  std::vector<std::string> out;
  for (const auto& [k, _] : values_)
    if (k.rfind(prefix + ".", 0) == 0) out.push_back(k);
  return out;
}

std::filesystem::path Config::path(const std::string& key) const {
  std::filesystem::path p = require(key);
  return p.is_absolute() ? p : base_ / p;
}

void Config::reject_unused() const {
  std::string unknown;
  for (const auto& [k, _] : values_) {
    if (used_.count(k)) continue;
    unknown += unknown.empty() ? k : ", " + k;
  }
  if (!unknown.empty()) throw ValidationError("unknown config key(s): " + unknown);
}

EstimateJob build_estimate_job(const Config& cfg) {
  EstimateJob job;
  const ColumnRoles roles{cfg.text("data.outcome", "y"), cfg.text("data.treatment", ""), cfg.text("data.cluster", "")};
  job.functional = read_functional(cfg, roles);

  const std::string transform = cfg.text("transform", "none");
  if (transform == "none") {
    job.transform = TransformChoice::none;
  } else if (transform == "att" || transform == "decomposition") {
    job.transform = transform == "att" ? TransformChoice::att : TransformChoice::decomposition;
    if (job.functional.kind() != FunctionalKind::cross_average)
      throw ValidationError("transform = " + transform + " needs functional = cross_average");
  } else if (transform == "elasticity") {
    job.transform = TransformChoice::elasticity;
    if (job.functional.kind() != FunctionalKind::avg_derivative)
      throw ValidationError("transform = elasticity needs functional = avg_derivative");
    job.elasticity = parse_elasticity_kind(cfg.text("transform.elasticity", "own_price"));
  } else {
    throw ValidationError("transform: unknown kind '" + transform + "' (none, att, elasticity, decomposition)");
  }

  job.report_path = cfg.path("output.report");
  if (cfg.has("output.influence")) job.influence_path = cfg.path("output.influence");

  Common c = read_common(cfg);
  job.data = std::move(c.data);
  job.dictionary = std::move(c.dictionary);
  job.functional.validate(job.data);
  job.riesz = read_riesz(cfg);
  job.regression = read_regression(cfg, job.data);
  job.options.allow_failed_folds = cfg.flag("estimate.allow_failed_folds", false);
  job.options.threads = cfg.count("threads", 0);
  job.folds = make_folds(job.data, cfg.count("folds", 5), read_seed(cfg));
  cfg.reject_unused();
  return job;
}

GmmJob build_gmm_job(const Config& cfg) {
  GmmJob job;
  const std::string model = cfg.text("gmm.model", "binary_choice");
  const ColumnRoles roles{cfg.text("data.outcome", "y"), cfg.text("data.treatment", ""), cfg.text("data.cluster", "")};
  if (model == "binary_choice") {
    if (roles.treatment.empty()) throw ValidationError("gmm.model = binary_choice needs data.treatment");
    const auto v = cfg.list("gmm.v");
    const auto h = cfg.list("gmm.h");
    if (v.empty()) throw ValidationError("missing config key 'gmm.v' (regressor columns)");
    if (h.empty()) throw ValidationError("missing config key 'gmm.h' (instrument columns)");
    job.model = std::make_unique<BinaryChoiceModel>(roles.treatment, v, h, parse_link(cfg.text("gmm.link", "probit")));
  } else if (model == "linear") {
    job.model = std::make_unique<LinearGmmModel>(read_functional(cfg, roles));
  } else {
    throw ValidationError("gmm.model: unknown model '" + model + "' (binary_choice, linear)");
  }

  job.report_path = cfg.path("output.report");
  if (cfg.has("output.influence")) job.influence_path = cfg.path("output.influence");

  Common c = read_common(cfg);
  job.data = std::move(c.data);
  job.dictionary = std::move(c.dictionary);
  job.model->validate(job.data);

  const auto k = static_cast<Eigen::Index>(job.model->parameters());
  const auto r = static_cast<Eigen::Index>(job.model->moments());
  job.config.riesz = read_riesz(cfg);
  job.config.regression = read_regression(cfg, job.data);
  auto box = [&](const std::string& key) {
    const auto v = cfg.numbers(key);
    if (v.empty()) return Eigen::VectorXd();
    if (static_cast<Eigen::Index>(v.size()) != k)
      throw ValidationError(key + ": expected " + std::to_string(k) + " values, one per parameter");
    return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(v.data(), k));
  };
  job.config.lower = box("gmm.lower");
  job.config.upper = box("gmm.upper");
  const auto w = cfg.numbers("gmm.weight");
  if (!w.empty()) {
    if (static_cast<Eigen::Index>(w.size()) != r * r)
      throw ValidationError("gmm.weight: expected " + std::to_string(r * r) + " values (row-major r x r)");
    job.config.weight = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        w.data(), r, r);
    if (!job.config.weight.isApprox(job.config.weight.transpose(), 1e-12))
      throw ValidationError("gmm.weight must be symmetric");
  }
  job.config.iterate = cfg.flag("gmm.iterate", false);
  job.config.max_iterations = cfg.count("gmm.max_iterations", job.config.max_iterations);
  job.config.threads = cfg.count("threads", 0);
  job.folds = make_folds(job.data, cfg.count("folds", 5), read_seed(cfg));
  cfg.reject_unused();
  return job;
}

json to_json(const EstimateReport& rep, const Dictionary& dict) {
  json folds = json::array();
  for (const auto& f : rep.folds) {
    json j{{"fold", f.fold}, {"n_in", f.n_in}, {"n_train", f.n_train}, {"failed", f.failed}};
    if (f.failed) j["failure"] = f.failure;
    if (f.riesz) j["riesz"] = fit_json(*f.riesz);
    if (f.regression) j["regression"] = fit_json(*f.regression);
    j["regression_pseudo_inverse"] = f.regression_pseudo_inverse;
    folds.push_back(std::move(j));
  }
  return {{"command", "estimate"},
          {"functional", rep.functional},
          {"theta", rep.theta},
          {"std_error", rep.std_error},
          {"ci95", {rep.theta - 1.96 * rep.std_error, rep.theta + 1.96 * rep.std_error}},
          {"variance", rep.variance},
          {"variance_iid", rep.variance_iid},
          {"plugin_theta", rep.plugin_theta},
          {"n", rep.n},
          {"n_effective", rep.n_effective},
          {"clustered", rep.clustered},
          {"clusters", rep.clusters},
          {"seed", rep.seed},
          {"dictionary", {{"size", dict.size()}, {"sup_norm", rep.dictionary_sup_norm}, {"terms", dict.labels()}}},
          {"folds", folds},
          {"flags", rep.flags}};
}

json to_json(const TransformReport& rep) {
  json ci = json::array();
  for (Eigen::Index k = 0; k < rep.estimate.size(); ++k)
    ci.push_back({rep.estimate[k] - 1.96 * rep.std_error[k], rep.estimate[k] + 1.96 * rep.std_error[k]});
  return {{"kind", rep.kind},
          {"names", rep.names},
          {"estimate", vec(rep.estimate)},
          {"std_error", vec(rep.std_error)},
          {"ci95", ci},
          {"covariance", mat(rep.covariance)},
          {"component_names", rep.component_names},
          {"components", vec(rep.components)},
          {"component_covariance", mat(rep.component_covariance)},
          {"jacobian", mat(rep.jacobian)},
          {"n", rep.n}};
}

json to_json(const GmmReport& rep) {
  json ci = json::array();
  for (Eigen::Index k = 0; k < rep.theta.size(); ++k)
    ci.push_back({rep.theta[k] - 1.96 * rep.std_error[k], rep.theta[k] + 1.96 * rep.std_error[k]});
  json initial = json::array();
  for (const auto& e : rep.initial)
    initial.push_back({{"folds", {e.a, e.b}}, {"theta", vec(e.theta)}, {"converged", e.converged}});
  json riesz = json::array();
  for (const auto& fold : rep.riesz) {
    json per = json::array();
    for (const auto& f : fold) per.push_back(fit_json(f));
    riesz.push_back(std::move(per));
  }
  return {{"command", "gmm"},
          {"names", rep.names},
          {"theta", vec(rep.theta)},
          {"std_error", vec(rep.std_error)},
          {"ci95", ci},
          {"covariance", mat(rep.covariance)},
          {"jacobian", mat(rep.jacobian)},
          {"psi_outer", mat(rep.psi_outer)},
          {"weight", mat(rep.weight)},
          {"objective", rep.objective},
          {"gradient_norm", rep.gradient_norm},
          {"iterations", rep.iterations},
          {"converged", rep.converged},
          {"n", rep.n},
          {"initial", initial},
          {"riesz", riesz},
          {"flags", rep.flags}};
}

std::string influence_csv(const EstimateReport& rep, const Dataset& data) {
  std::string out = data.has_clusters() ? "row_id,cluster,psi,alpha,gamma,plugin\n" : "row_id,psi,alpha,gamma,plugin\n";
  for (std::size_t k = 0; k < rep.rows.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    out += std::to_string(rep.rows[k]);
    if (data.has_clusters()) out += "," + std::to_string(data.cluster_ids()[rep.rows[k]]);
    out += "," + fmt(rep.influence[i]) + "," + fmt(rep.alpha[i]) + "," + fmt(rep.gamma[i]) + "," + fmt(rep.plugin[i]) + "\n";
  }
  return out;
}

std::string influence_csv(const GmmReport& rep, const Dataset& data) {
  std::string out = "row_id";
  if (data.has_clusters()) out += ",cluster";
  for (Eigen::Index k = 0; k < rep.influence.cols(); ++k) out += ",psi" + std::to_string(k + 1);
  out += "\n";
  for (Eigen::Index i = 0; i < rep.influence.rows(); ++i) {
    out += std::to_string(i);
    if (data.has_clusters()) out += "," + std::to_string(data.cluster_ids()[static_cast<std::size_t>(i)]);
    for (Eigen::Index k = 0; k < rep.influence.cols(); ++k) out += "," + fmt(rep.influence(i, k));
    out += "\n";
  }
  return out;
}

void write_files_atomically(const std::vector<std::pair<std::filesystem::path, std::string>>& files) {
  std::vector<std::filesystem::path> temps;
  auto cleanup = [&] {
    std::error_code ec;
    for (const auto& t : temps) std::filesystem::remove(t, ec);
  };
  for (const auto& [path, content] : files) {
    const auto tmp = temp_sibling(path);
    temps.push_back(tmp);
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << content;
    out.close();
    if (!out) {
      cleanup();
      throw IoError("cannot write '" + path.string() + "'");
    }
  }
  for (std::size_t k = 0; k < files.size(); ++k) {
    std::error_code ec;
    std::filesystem::rename(temps[k], files[k].first, ec);
    if (ec) {
      cleanup();
      throw IoError("cannot write '" + files[k].first.string() + "': " + ec.message());
    }
  }
}

std::string render_report(const json& j) {
  std::ostringstream os;
  const std::string command = j.value("command", "");
  auto flags = [&] {
    const auto& f = j.at("flags");
    if (f.empty()) {
      os << "flags      none\n";
      return;
    }
    os << "flags\n";
    for (const auto& s : f) os << "  - " << s.get<std::string>() << "\n";
  };
  if (command == "estimate") {
    const double theta = j.at("theta"), se = j.at("std_error");
    os << "functional " << j.at("functional").get<std::string>() << "\n";
    os << "theta      " << fixed(theta) << "\n";
    os << "std. error " << fixed(se) << "\n";
    os << "95% CI     " << ci_text(theta, se) << "\n";
    os << "n          " << j.at("n").get<std::size_t>();
    if (j.at("clustered").get<bool>()) os << " (" << j.at("clusters").get<std::size_t>() << " clusters)";
    os << "\n";
    os << "folds      " << j.at("folds").size() << "  seed " << j.at("seed").get<std::uint64_t>() << "\n";
    os << "dictionary " << j.at("dictionary").at("size").get<std::size_t>() << " terms\n";
    flags();
    if (j.contains("transform")) {
      const auto& t = j.at("transform");
      os << "transform  " << t.at("kind").get<std::string>() << "\n";
      for (std::size_t k = 0; k < t.at("names").size(); ++k) {
        const double est = t.at("estimate")[k], s = t.at("std_error")[k];
        os << "  " << std::left << std::setw(14) << t.at("names")[k].get<std::string>() << fixed(est) << "  (SE "
           << fixed(s) << ")  95% CI " << ci_text(est, s) << "\n";
      }
    }
  } else if (command == "gmm") {
    os << "parameter       estimate     std. error   95% CI\n";
    for (std::size_t k = 0; k < j.at("names").size(); ++k) {
      const double est = j.at("theta")[k], s = j.at("std_error")[k];
      os << std::left << std::setw(16) << j.at("names")[k].get<std::string>() << std::setw(13) << fixed(est)
         << std::setw(13) << fixed(s) << ci_text(est, s) << "\n";
    }
    os << "n " << j.at("n").get<std::size_t>() << ", objective " << fixed(j.at("objective").get<double>()) << ", "
       << j.at("iterations").get<std::size_t>() << " iterations, "
       << (j.at("converged").get<bool>() ? "converged" : "NOT converged") << "\n";
    flags();
  } else {
    throw ValidationError("not an estimate or gmm report");
  }
  return os.str();
}

RunResult run_estimate(const Config& cfg, bool allow_flags) {
  const EstimateJob job = build_estimate_job(cfg);
  const EstimateReport rep =
      estimate(job.functional, *job.dictionary, job.data, job.folds, job.riesz, job.regression, job.options);
  json j = to_json(rep, *job.dictionary);
  switch (job.transform) {
    case TransformChoice::none:
      break;
    case TransformChoice::att:
      j["transform"] = to_json(transform_att(rep, job.data));
      break;
    case TransformChoice::elasticity:
      j["transform"] = to_json(transform_elasticity(rep, job.data, job.elasticity));
      break;
    case TransformChoice::decomposition:
      j["transform"] = to_json(regression_decomposition(rep, job.data));
      break;
  }
  std::vector<std::pair<std::filesystem::path, std::string>> files{{job.report_path, j.dump(2) + "\n"}};
  if (job.influence_path) files.emplace_back(*job.influence_path, influence_csv(rep, job.data));
  write_files_atomically(files);
  return {rep.flagged() && !allow_flags ? kNumerical : kOk, render_report(j)};
}

RunResult run_gmm(const Config& cfg, bool allow_flags) {
  const GmmJob job = build_gmm_job(cfg);
  const GmmReport rep = fit_gmm(*job.model, *job.dictionary, job.data, job.folds, job.config);
  const json j = to_json(rep);
  std::vector<std::pair<std::filesystem::path, std::string>> files{{job.report_path, j.dump(2) + "\n"}};
  if (job.influence_path) files.emplace_back(*job.influence_path, influence_csv(rep, job.data));
  write_files_atomically(files);
  return {!rep.flags.empty() && !allow_flags ? kNumerical : kOk, render_report(j)};
}

std::string canonical_variant(const std::string& name) {
  std::string s;
  for (char ch : name) s += ch == ' ' || ch == '-' ? '_' : static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  static const std::map<std::string, std::string> alias{
      {"lasso", "lasso"},
      {"fixed", "lasso"},
      {"generalized_lasso", "generalized_lasso"},
      {"theoretical", "theoretical"},
      {"theoretical_r_l", "theoretical"},
      {"normalization", "normalization"},
      {"normalization_d", "normalization"},
      {"iteration_cold", "iteration_cold"},
      {"iteration:_cold_start", "iteration_cold"},
      {"cold", "iteration_cold"},
      {"iteration_warm", "iteration_warm"},
      {"iteration:_warm_start", "iteration_warm"},
      {"warm", "iteration_warm"},
      {"max_iteration", "max_iteration"},
      {"final", "final"},
      {"ridge", "final"},
  };
  const auto it = alias.find(s);
  if (it == alias.end())
    throw ValidationError("unknown variant '" + name +
                          "' (lasso, generalized_lasso, theoretical, normalization, iteration_cold, iteration_warm, "
                          "max_iteration, final)");
  return it->second;
}

namespace {

struct McSummary {
  std::vector<std::string> names;
  Eigen::VectorXd truth;
  Eigen::MatrixXd est, se;  // reps x k
};

json summarize(const McSummary& s, std::ostringstream& os) {
  const auto reps = static_cast<double>(s.est.rows());
  json out = json::array();
  os << "parameter     truth      mean       bias       MC sd      mean SE    coverage95\n";
  for (Eigen::Index k = 0; k < s.est.cols(); ++k) {
    const double mean = s.est.col(k).mean();
    const double sd = s.est.rows() > 1
                          ? std::sqrt((s.est.col(k).array() - mean).square().sum() / (reps - 1.0))
                          : 0.0;
    const double mse = s.se.col(k).mean();
    double hits = 0.0;
    for (Eigen::Index r = 0; r < s.est.rows(); ++r)
      hits += std::abs(s.est(r, k) - s.truth[k]) <= 1.96 * s.se(r, k) ? 1.0 : 0.0;
    const double cov = hits / reps;
    os << std::left << std::setw(14) << s.names[static_cast<std::size_t>(k)] << std::setw(11) << fixed(s.truth[k], 5)
       << std::setw(11) << fixed(mean, 5) << std::setw(11) << fixed(mean - s.truth[k], 4) << std::setw(11)
       << fixed(sd, 4) << std::setw(11) << fixed(mse, 4) << fixed(cov, 3) << "\n";
    out.push_back({{"name", s.names[static_cast<std::size_t>(k)]},
                   {"truth", s.truth[k]},
                   {"mean", mean},
                   {"bias", mean - s.truth[k]},
                   {"mc_sd", sd},
                   {"mean_se", mse},
                   {"coverage95", cov}});
  }
  return out;
}

McSummary simulate_scalar(const std::string& design, std::size_t reps, std::size_t n, std::uint64_t seed,
                          std::size_t threads) {
  McSummary s;
  double truth = 0.0;
  const Eigen::MatrixXd table = run_replications(
      reps, seed,
      [&](std::size_t, std::uint64_t rs) {
        SimData sim;
        std::string dict_spec;
        MomentFunctional f = MomentFunctional::mean();
        bool panel = false;
        if (design == "ate_logistic") {
          AteLogisticDesign d;
          d.n = n;
          d.seed = rs;
          sim = generate(d);
          dict_spec = ate_logistic_dictionary(d.propensity.size());
          f = MomentFunctional::ate("d");
        } else if (design == "riesz_sparse") {
          RieszSparseDesign d;
          d.n = n;
          d.seed = rs;
          sim = generate(d);
          dict_spec = riesz_sparse_dictionary(d.k);
          f = MomentFunctional::avg_derivative("x1");
        } else {
          PanelSlopesDesign d;
          d.clusters = n;
          d.seed = rs;
          sim = generate(d);
          dict_spec = "const; x";
          f = MomentFunctional::avg_derivative("x");
          panel = true;
        }
        Dataset data = sim.data;
        Dictionary dict = parse_dictionary(dict_spec, data.names());
        if (panel) {
          auto p = build_panel_dictionary(data, dict);
          data = std::move(p.data);
          dict = std::move(p.dictionary);
        }
        const FoldPlan folds = make_folds(data, 5, rs);
        const EstimateReport rep = estimate(f, dict, data, folds, RieszSpec{}, RegressionSpec{}, EstimateOptions{false, 1});
        Eigen::VectorXd out(3);
        out << rep.theta, rep.std_error, *sim.truth.theta;
        return out;
      },
      threads);
  truth = table(0, 2);
  s.names = {"theta"};
  s.truth = Eigen::VectorXd::Constant(1, truth);
  s.est = table.col(0);
  s.se = table.col(1);
  return s;
}

McSummary simulate_binary_choice(std::size_t reps, std::size_t n, std::uint64_t seed, std::size_t threads) {
  const BinaryChoiceModel model("d", {"one", "v1"}, {"one", "v1", "z"});
  McSummary s;
  s.names = model.parameter_names();
  const Eigen::MatrixXd table = run_replications(
      reps, seed,
      [&](std::size_t, std::uint64_t rs) {
        BinaryChoiceDesign d;
        d.n = n;
        d.seed = rs;
        const SimData sim = generate(d);
        const Dictionary dict = parse_dictionary("const; poly(z,3); split(d)", sim.data.names());
        GmmConfig cfg;
        cfg.threads = 1;
        const GmmReport rep = fit_gmm(model, dict, sim.data, make_folds(sim.data, 5, rs), cfg);
        Eigen::VectorXd out(9);
        out << rep.theta, rep.std_error, sim.truth.theta_vector;
        return out;
      },
      threads);
  s.est = table.leftCols(3);
  s.se = table.middleCols(3, 3);
  s.truth = table.row(0).tail(3).transpose();
  return s;
}

}  // namespace

RunResult run_simulate(const SimulateOptions& opt) {
  if (opt.reps == 0) throw ValidationError("--reps must be at least 1");
  std::ostringstream os;
  json j{{"design", opt.design}, {"reps", opt.reps}, {"seed", opt.seed}};
  if (opt.design == "appendixA3") {
    std::vector<std::string> variants;
    for (const auto& v : opt.variants) variants.push_back(canonical_variant(v));
    if (variants.empty()) {
      variants = appendix_a3_variants();
      variants.insert(variants.begin() + 1, "generalized_lasso");
    }
    const std::size_t n = opt.n.value_or(100);
    const auto rows = run_appendix_a3(variants, opt.reps, n, opt.seed, opt.threads);
    os << "design appendixA3, n = " << n << ", p = 101, " << opt.reps << " replications\n";
    os << "variant             median MSE   mean MSE     median |d|^2  hold-out R^2\n";
    json table = json::array();
    for (const auto& r : rows) {
      os << std::left << std::setw(20) << r.variant << std::setw(13) << fixed(r.mse_median, 4) << std::setw(13)
         << fixed(r.mse_mean, 4) << std::setw(14) << fixed(r.sse_median, 4) << fixed(r.r2_mean, 3) << "\n";
      table.push_back({{"variant", r.variant},
                       {"mse_median", r.mse_median},
                       {"mse_mean", r.mse_mean},
                       {"sse_median", r.sse_median},
                       {"r2_mean", r.r2_mean}});
    }
    j["n"] = n;
    j["variants"] = table;
  } else {
    if (!opt.variants.empty()) throw ValidationError("--variant applies only to --design appendixA3");
    McSummary s;
    std::size_t n = 0;
    if (opt.design == "ate_logistic" || opt.design == "riesz_sparse") {
      n = opt.n.value_or(1000);
      s = simulate_scalar(opt.design, opt.reps, n, opt.seed, opt.threads);
    } else if (opt.design == "panel_slopes") {
      n = opt.n.value_or(200);
      s = simulate_scalar(opt.design, opt.reps, n, opt.seed, opt.threads);
    } else if (opt.design == "binary_choice") {
      n = opt.n.value_or(4000);
      s = simulate_binary_choice(opt.reps, n, opt.seed, opt.threads);
    } else {
      throw ValidationError("unknown design '" + opt.design +
                            "' (appendixA3, ate_logistic, riesz_sparse, binary_choice, panel_slopes)");
    }
    os << "design " << opt.design << ", n = " << n << (opt.design == "panel_slopes" ? " clusters" : "") << ", "
       << opt.reps << " replications\n";
    j["n"] = n;
    j["parameters"] = summarize(s, os);
  }
  if (opt.output) write_files_atomically({{*opt.output, j.dump(2) + "\n"}});
  return {kOk, os.str()};
}

}  // namespace autodml::cli
