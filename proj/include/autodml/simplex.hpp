#pragma once

#include <cstddef>

#include <Eigen/Dense>

namespace autodml {

// minimize c'x  subject to  A x <= b,  x >= 0.  Entries of b may be negative.
struct LinearProgram {
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
  Eigen::VectorXd c;
};

enum class LpStatus { optimal, infeasible, unbounded, iteration_limit };

struct LpResult {
  LpStatus status = LpStatus::iteration_limit;
  Eigen::VectorXd x;
  double objective = 0.0;
  std::size_t pivots = 0;
};

struct SimplexOptions {
  double pivot_tolerance = 1e-10;
  double feasibility_tolerance = 1e-9;
  std::size_t max_pivots = 200000;
  // Consecutive degenerate pivots tolerated under the largest-coefficient rule
  // before switching to Bland's rule.
  std::size_t degenerate_streak = 50;
};

// Dense two-phase tableau simplex. Entering column by largest reduced cost,
// falling back to Bland's smallest-index rule on degenerate streaks; ties in
// the ratio test go to the smallest basic index. Basic values are recomputed
// from the original data with an LU solve at the optimum.
LpResult solve_lp(const LinearProgram& lp, const SimplexOptions& options = {});

}  // namespace autodml
