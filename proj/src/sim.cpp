#include "autodml/sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "autodml/error.hpp"
#include "autodml/parallel.hpp"
#include "autodml/riesz.hpp"
#include "autodml/rng.hpp"

namespace autodml {

namespace {

double logistic(double t) { return 1.0 / (1.0 + std::exp(-t)); }

std::string join_columns(const std::string& stem, std::size_t count) {
  std::string out;
  for (std::size_t j = 1; j <= count; ++j) {
    if (j > 1) out += ",";
    out += stem + std::to_string(j);
  }
  return out;
}

}  // namespace

Eigen::VectorXd appendix_a3_rho0(std::size_t p) {
  if (p < 3) throw ValidationError("appendixA3 needs p >= 3");
  Eigen::VectorXd rho = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
  rho.head(3).setOnes();
  return rho;
}

std::string appendix_a3_dictionary(std::size_t p) {
  std::string spec = "const";
  for (std::size_t j = 1; j < p; ++j) spec += "; x" + std::to_string(j);
  return spec;
}

SimData generate(const AppendixA3Design& d) {
  if (d.n == 0) throw ValidationError("design needs n > 0");
  const Eigen::VectorXd rho0 = appendix_a3_rho0(d.p);
  std::vector<std::string> names{"y"};
  for (std::size_t j = 1; j < d.p; ++j) names.push_back("x" + std::to_string(j));

  CounterRng rng(d.seed);
  std::vector<double> values(d.n * d.p);
  for (std::size_t i = 0; i < d.n; ++i) {
    double* row = values.data() + i * d.p;
    double mean = rho0[0];
    for (std::size_t j = 1; j < d.p; ++j) {
      row[j] = rng.normal();
      mean += rho0[static_cast<Eigen::Index>(j)] * row[j];
    }
    row[0] = mean + rng.normal();
  }

  SimData out;
  out.data = Dataset(names, std::move(values), {}, ColumnRoles{"y", "", ""});
  out.truth.gamma = [rho0](std::span<const double> row) {
    double v = rho0[0];
    for (Eigen::Index j = 1; j < rho0.size(); ++j) v += rho0[j] * row[static_cast<std::size_t>(j)];
    return v;
  };
  out.truth.theta_vector = rho0;
  return out;
}

double ate_logistic_propensity(const AteLogisticDesign& d, std::span<const double> z) {
  double t = 0.0;
  for (std::size_t j = 0; j < d.propensity.size(); ++j) t += d.propensity[j] * z[j];
  return std::clamp(logistic(t), d.clip, 1.0 - d.clip);
}

std::string ate_logistic_dictionary(std::size_t k) {
  if (k == 0) throw ValidationError("ate_logistic needs at least one covariate");
  return "const; poly(" + join_columns("z", k) + ",2); split(d)";
}

SimData generate(const AteLogisticDesign& d) {
  const std::size_t k = d.propensity.size();
  if (k == 0 || d.slopes.size() != k || d.tau_z.size() != k)
    throw ValidationError("ate_logistic coefficient vectors must share one length");
  if (!(d.clip > 0.0 && d.clip < 0.5)) throw ValidationError("ate_logistic clip must lie in (0, 0.5)");
  if (d.n == 0) throw ValidationError("design needs n > 0");

  std::vector<std::string> names{"y", "d"};
  for (std::size_t j = 1; j <= k; ++j) names.push_back("z" + std::to_string(j));
  const std::size_t w = names.size();

  auto gamma0 = [d, k](double treat, const double* z) {
    double v = d.base, effect = d.tau;
    for (std::size_t j = 0; j < k; ++j) {
      v += d.slopes[j] * z[j];
      effect += d.tau_z[j] * z[j];
    }
    return v + treat * effect;
  };

  CounterRng rng(d.seed);
  std::vector<double> values(d.n * w);
  for (std::size_t i = 0; i < d.n; ++i) {
    double* row = values.data() + i * w;
    for (std::size_t j = 0; j < k; ++j) row[2 + j] = rng.normal();
    const double pi = ate_logistic_propensity(d, {row + 2, k});
    row[1] = rng.bernoulli(pi) ? 1.0 : 0.0;
    row[0] = gamma0(row[1], row + 2) + rng.normal();
  }

  SimData out;
  out.data = Dataset(names, std::move(values), {}, ColumnRoles{"y", "d", ""});
  out.truth.theta = d.tau;
  out.truth.gamma = [gamma0](std::span<const double> row) { return gamma0(row[1], row.data() + 2); };
  out.truth.alpha = [d, k](std::span<const double> row) {
    const double pi = ate_logistic_propensity(d, row.subspan(2, k));
    return row[1] / pi - (1.0 - row[1]) / (1.0 - pi);
  };
  return out;
}

std::string riesz_sparse_dictionary(std::size_t k) {
  if (k == 0) throw ValidationError("riesz_sparse needs at least one covariate");
  return "const; poly(" + join_columns("x", k) + ",2)";
}

SimData generate(const RieszSparseDesign& d) {
  if (d.k < 2) throw ValidationError("riesz_sparse needs k >= 2");
  if (d.n == 0) throw ValidationError("design needs n > 0");
  std::vector<std::string> names{"y"};
  for (std::size_t j = 1; j <= d.k; ++j) names.push_back("x" + std::to_string(j));
  const std::size_t w = names.size();

  CounterRng rng(d.seed);
  std::vector<double> values(d.n * w);
  for (std::size_t i = 0; i < d.n; ++i) {
    double* row = values.data() + i * w;
    for (std::size_t j = 1; j < w; ++j) row[j] = rng.normal();
    row[0] = row[1] + 0.5 * row[1] * row[1] + row[2] + rng.normal();
  }

  SimData out;
  out.data = Dataset(names, std::move(values), {}, ColumnRoles{"y", "", ""});
  out.truth.theta = 1.0;
  out.truth.gamma = [](std::span<const double> row) { return row[1] + 0.5 * row[1] * row[1] + row[2]; };
  out.truth.gamma_partial = [](std::span<const double> row, std::size_t col) {
    if (col == 1) return 1.0 + row[1];
    if (col == 2) return 1.0;
    return 0.0;
  };
  out.truth.alpha = [](std::span<const double> row) { return row[1]; };
  return out;
}

SimData generate(const BinaryChoiceDesign& d) {
  if (d.n == 0) throw ValidationError("design needs n > 0");
  const std::vector<std::string> names{"y", "d", "one", "v1", "z"};
  const std::size_t w = names.size();

  CounterRng rng(d.seed);
  std::vector<double> values(d.n * w);
  for (std::size_t i = 0; i < d.n; ++i) {
    double* row = values.data() + i * w;
    row[2] = 1.0;
    row[3] = rng.normal();
    row[4] = rng.normal();
    const double effect = d.tau + d.tau_z * row[4];
    const double latent = d.beta0 + d.beta1 * row[3] + d.delta * effect;
    row[1] = latent > rng.normal() ? 1.0 : 0.0;
    row[0] = d.a0 + d.a1 * row[4] + row[1] * effect + rng.normal();
  }

  SimData out;
  out.data = Dataset(names, std::move(values), {}, ColumnRoles{"y", "d", ""});
  out.truth.theta_vector = Eigen::Vector3d(d.beta0, d.beta1, d.delta);
  out.truth.gamma = [d](std::span<const double> row) {
    return d.a0 + d.a1 * row[4] + row[1] * (d.tau + d.tau_z * row[4]);
  };
  return out;
}

SimData generate(const PanelSlopesDesign& d) {
  if (d.clusters == 0) throw ValidationError("panel_slopes needs clusters > 0");
  if (d.t_min == 0 || d.t_max < d.t_min) throw ValidationError("panel_slopes needs 1 <= t_min <= t_max");

  CounterRng rng(d.seed);
  std::vector<double> values;
  std::vector<std::int64_t> ids;
  std::vector<double> x;
  for (std::size_t c = 0; c < d.clusters; ++c) {
    const std::size_t T = d.t_min + static_cast<std::size_t>(rng.below(d.t_max - d.t_min + 1));
    const double mu = d.between_sd * rng.normal();
    x.assign(T, 0.0);
    double xbar = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      x[t] = mu + rng.normal();
      xbar += x[t];
    }
    xbar /= static_cast<double>(T);
    const double intercept = d.a + d.lambda_a * xbar + 0.5 * rng.normal();
    const double slope = d.beta + d.lambda_b * xbar + d.slope_noise * rng.normal();
    for (std::size_t t = 0; t < T; ++t) {
      values.push_back(intercept + slope * x[t] + rng.normal());
      values.push_back(x[t]);
      ids.push_back(static_cast<std::int64_t>(c));
    }
  }

  SimData out;
  out.data = Dataset({"y", "x"}, std::move(values), std::move(ids), ColumnRoles{"y", "", ""});
  out.truth.theta = d.beta;
  return out;
}

double panel_slopes_mean_outcome(const PanelSlopesDesign& d) {
  const double mean_t = 0.5 * static_cast<double>(d.t_min + d.t_max);
  return d.a + d.lambda_b * (d.between_sd * d.between_sd + 1.0 / mean_t);
}

DantzigOracle oracle_dantzig_small(const Eigen::MatrixXd& G, const Eigen::VectorXd& M, double lambda) {
  const Eigen::Index p = M.size();
  if (p == 0 || p > 6) throw ValidationError("oracle_dantzig_small needs 1 <= p <= 6");
  if (G.rows() != p || G.cols() != p) throw ValidationError("oracle dimensions disagree");
  if (!(lambda >= 0.0)) throw ValidationError("oracle needs lambda >= 0");

  // Candidate hyperplanes: G_j rho = M_j + lambda, G_j rho = M_j - lambda, rho_j = 0.
  const Eigen::Index m = 3 * p;
  Eigen::MatrixXd A(m, p);
  Eigen::VectorXd rhs(m);
  for (Eigen::Index j = 0; j < p; ++j) {
    A.row(j) = G.row(j);
    rhs[j] = M[j] + lambda;
    A.row(p + j) = G.row(j);
    rhs[p + j] = M[j] - lambda;
    A.row(2 * p + j) = Eigen::RowVectorXd::Unit(p, j);
    rhs[2 * p + j] = 0.0;
  }

  DantzigOracle best;
  best.objective = std::numeric_limits<double>::infinity();
  std::vector<bool> pick(static_cast<std::size_t>(m), false);
  std::fill(pick.begin(), pick.begin() + p, true);
  Eigen::MatrixXd S(p, p);
  Eigen::VectorXd s(p);
  const double slack = 1e-9 * std::max(1.0, lambda + M.cwiseAbs().maxCoeff());
  do {
    Eigen::Index r = 0;
    for (Eigen::Index i = 0; i < m; ++i) {
      if (!pick[static_cast<std::size_t>(i)]) continue;
      S.row(r) = A.row(i);
      s[r] = rhs[i];
      ++r;
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(S);
    if (lu.rank() < p) continue;
    const Eigen::VectorXd rho = lu.solve(s);
    if ((M - G * rho).cwiseAbs().maxCoeff() > lambda + slack) continue;
    ++best.vertices;
    const double obj = rho.lpNorm<1>();
    if (obj < best.objective) {
      best.objective = obj;
      best.rho = rho;
    }
  } while (std::prev_permutation(pick.begin(), pick.end()));

  if (best.vertices == 0) throw NumericalError("Dantzig constraint set has no vertex");
  return best;
}

Eigen::MatrixXd run_replications(std::size_t reps, std::uint64_t seed,
                                 const std::function<Eigen::VectorXd(std::size_t, std::uint64_t)>& fn,
                                 std::size_t threads) {
  std::vector<Eigen::VectorXd> out(reps);
  parallel_for(reps, [&](std::size_t r) { out[r] = fn(r, derive_seed(seed, r)); }, threads);
  if (reps == 0) return {};
  const Eigen::Index dim = out.front().size();
  Eigen::MatrixXd table(static_cast<Eigen::Index>(reps), dim);
  for (std::size_t r = 0; r < reps; ++r) {
    if (out[r].size() != dim) throw ValidationError("replications returned vectors of different lengths");
    table.row(static_cast<Eigen::Index>(r)) = out[r].transpose();
  }
  return table;
}

BootstrapResult oracle_bootstrap(const std::function<Eigen::VectorXd(const Dataset&)>& statistic, const Dataset& data,
                                 std::size_t reps, std::uint64_t seed, std::size_t threads) {
  if (reps < 2) throw ValidationError("bootstrap needs at least 2 replications");
  const std::size_t n = data.n_rows();
  if (n == 0) throw ValidationError("bootstrap needs data");

  // Units: clusters in order of first appearance, or single rows.
  std::vector<std::vector<std::size_t>> units;
  if (data.has_clusters()) {
    std::map<std::int64_t, std::size_t> slot;
    for (std::size_t i = 0; i < n; ++i) {
      auto [it, fresh] = slot.try_emplace(data.cluster_ids()[i], units.size());
      if (fresh) units.emplace_back();
      units[it->second].push_back(i);
    }
  } else {
    units.resize(n);
    for (std::size_t i = 0; i < n; ++i) units[i] = {i};
  }

  BootstrapResult res;
  res.draws = run_replications(
      reps, seed,
      [&](std::size_t, std::uint64_t s) {
        CounterRng rng(s);
        std::vector<std::size_t> rows;
        std::vector<std::int64_t> ids;
        rows.reserve(n);
        for (std::size_t u = 0; u < units.size(); ++u) {
          const auto& pick = units[rng.below(units.size())];
          rows.insert(rows.end(), pick.begin(), pick.end());
          ids.insert(ids.end(), pick.size(), static_cast<std::int64_t>(u));
        }
        Dataset sample = data.select_rows(rows);
        if (data.has_clusters()) sample = sample.with_cluster_ids(std::move(ids));
        return statistic(sample);
      },
      threads);

  const Eigen::RowVectorXd mean = res.draws.colwise().mean();
  const Eigen::MatrixXd centered = res.draws.rowwise() - mean;
  res.std_error = (centered.colwise().squaredNorm() / static_cast<double>(reps - 1)).cwiseSqrt().transpose();
  return res;
}

std::vector<std::string> appendix_a3_variants() {
  return {"lasso", "theoretical", "normalization", "iteration_cold", "iteration_warm", "max_iteration", "final"};
}

Eigen::VectorXd fit_appendix_a3_variant(const Dataset& data, const std::string& variant) {
  const Eigen::Index n = static_cast<Eigen::Index>(data.n_rows());
  const Eigen::Index p = static_cast<Eigen::Index>(data.n_cols());
  RieszProblem problem;
  problem.basis.resize(n, p);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto row = data.row(static_cast<std::size_t>(i));
    y[i] = row[0];
    problem.basis(i, 0) = 1.0;
    for (Eigen::Index j = 1; j < p; ++j) problem.basis(i, j) = row[static_cast<std::size_t>(j)];
  }
  problem.moments = problem.basis.array().colwise() * y.array();
  problem.intercepts = {0};

  if (variant == "lasso") {
    return lasso_shooting(problem.basis, y, Eigen::VectorXd::Constant(p, 0.5)).beta;
  }

  LassoMDConfig cfg;
  if (variant == "generalized_lasso") {
    cfg.fixed_r_L = 0.5;
    cfg.normalize = false;
    cfg.low_dim_init = false;
    cfg.intercept_discount = false;
  } else if (variant == "theoretical") {
    cfg.normalize = false;
    cfg.low_dim_init = false;
  } else if (variant == "normalization") {
    cfg.max_outer_iters = 1;
    cfg.ridge_shift = 0.0;
  } else if (variant == "iteration_cold") {
    cfg.warm_start = false;
    cfg.max_outer_iters = 100;
    cfg.ridge_shift = 0.0;
  } else if (variant == "iteration_warm") {
    cfg.max_outer_iters = 100;
    cfg.ridge_shift = 0.0;
  } else if (variant == "max_iteration") {
    cfg.ridge_shift = 0.0;
  } else if (variant != "final") {
    throw ValidationError("unknown variant '" + variant + "'");
  }
  return fit_lasso_md(problem, cfg).coefficients;
}

std::vector<A3Summary> run_appendix_a3(const std::vector<std::string>& variants, std::size_t reps, std::size_t n,
                                       std::uint64_t seed, std::size_t threads) {
  if (reps == 0) throw ValidationError("simulate needs reps >= 1");
  const std::size_t p = 101;
  const std::size_t n_test = 1000;
  const Eigen::VectorXd rho0 = appendix_a3_rho0(p);
  for (const auto& v : variants) {
    const auto known = appendix_a3_variants();
    if (v != "generalized_lasso" && std::find(known.begin(), known.end(), v) == known.end())
      throw ValidationError("unknown variant '" + v + "'");
  }
  const std::size_t V = variants.size();

  const Eigen::MatrixXd table = run_replications(
      reps, seed,
      [&](std::size_t r, std::uint64_t s) {
        const SimData train = generate(AppendixA3Design{n, p, s});
        const SimData test = generate(AppendixA3Design{n_test, p, derive_seed(s, r + 1)});
        Eigen::MatrixXd X(static_cast<Eigen::Index>(n_test), static_cast<Eigen::Index>(p));
        Eigen::VectorXd y(static_cast<Eigen::Index>(n_test));
        for (std::size_t i = 0; i < n_test; ++i) {
          const auto row = test.data.row(i);
          y[static_cast<Eigen::Index>(i)] = row[0];
          X(static_cast<Eigen::Index>(i), 0) = 1.0;
          for (std::size_t j = 1; j < p; ++j) X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = row[j];
        }
        const double tss = (y.array() - y.mean()).square().sum();

        Eigen::VectorXd out(static_cast<Eigen::Index>(2 * V));
        for (std::size_t v = 0; v < V; ++v) {
          const Eigen::VectorXd rho = fit_appendix_a3_variant(train.data, variants[v]);
          out[static_cast<Eigen::Index>(v)] = (rho - rho0).squaredNorm();
          out[static_cast<Eigen::Index>(V + v)] = 1.0 - (y - X * rho).squaredNorm() / tss;
        }
        return out;
      },
      threads);

  auto median = [](std::vector<double> x) {
    std::sort(x.begin(), x.end());
    const std::size_t m = x.size() / 2;
    return x.size() % 2 ? x[m] : 0.5 * (x[m - 1] + x[m]);
  };

  std::vector<A3Summary> out;
  for (std::size_t v = 0; v < V; ++v) {
    A3Summary s;
    s.variant = variants[v];
    std::vector<double> sse(reps);
    s.mse.resize(reps);
    for (std::size_t r = 0; r < reps; ++r) {
      sse[r] = table(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(v));
      s.mse[r] = sse[r] / static_cast<double>(p);
    }
    s.sse_median = median(sse);
    s.mse_median = median(s.mse);
    s.mse_mean = std::accumulate(s.mse.begin(), s.mse.end(), 0.0) / static_cast<double>(reps);
    s.r2_mean = table.col(static_cast<Eigen::Index>(V + v)).mean();
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace autodml
