#include "autodml/simplex.hpp"

#include <cmath>
#include <limits>
#include <vector>

#include "autodml/error.hpp"

namespace autodml {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class Tableau {
 public:
  Tableau(const LinearProgram& lp, const SimplexOptions& opt) : opt_(opt) {
    m_ = static_cast<Eigen::Index>(lp.b.size());
    n_ = static_cast<Eigen::Index>(lp.c.size());
    if (lp.A.rows() != m_ || lp.A.cols() != n_) throw ValidationError("linear program dimensions disagree");
    for (Eigen::Index i = 0; i < m_; ++i)
      if (lp.b[i] < 0) ++k_;
    cols_ = n_ + m_ + k_;
    standard_ = Eigen::MatrixXd::Zero(m_, cols_);
    rhs_ = Eigen::VectorXd::Zero(m_);
    T_ = RowMatrix::Zero(m_ + 1, cols_ + 1);
    basis_.resize(static_cast<std::size_t>(m_));
    Eigen::Index art = n_ + m_;
    for (Eigen::Index i = 0; i < m_; ++i) {
      const double sign = lp.b[i] < 0 ? -1.0 : 1.0;
      standard_.row(i).head(n_) = sign * lp.A.row(i);
      standard_(i, n_ + i) = sign;
      rhs_[i] = sign * lp.b[i];
      if (sign < 0) {
        standard_(i, art) = 1.0;
        basis_[static_cast<std::size_t>(i)] = art++;
      } else {
        basis_[static_cast<std::size_t>(i)] = n_ + i;
      }
    }
    T_.topLeftCorner(m_, cols_) = standard_;
    T_.col(cols_).head(m_) = rhs_;
    cost_ = lp.c;
  }

  LpResult solve() {
    LpResult res;
    if (k_ > 0) {
      // Phase 1: minimize the sum of artificials.
      T_.row(m_).setZero();
      T_.row(m_).segment(n_ + m_, k_).setOnes();
      for (Eigen::Index i = 0; i < m_; ++i)
        if (is_artificial(basis_[static_cast<std::size_t>(i)])) T_.row(m_) -= T_.row(i);
      const auto status = iterate(/*allow_artificial=*/true, res.pivots);
      if (status == LpStatus::iteration_limit) {
        res.status = status;
        return res;
      }
      const double infeasibility = -T_(m_, cols_);
      if (infeasibility > opt_.feasibility_tolerance * (1.0 + rhs_.cwiseAbs().maxCoeff())) {
        res.status = LpStatus::infeasible;
        return res;
      }
      drive_out_artificials(res.pivots);
    }
    // Phase 2 reduced costs.
    T_.row(m_).setZero();
    T_.row(m_).head(n_) = cost_.transpose();
    for (Eigen::Index i = 0; i < m_; ++i) {
      const auto b = basis_[static_cast<std::size_t>(i)];
      if (b < n_ && cost_[b] != 0.0) T_.row(m_) -= cost_[b] * T_.row(i);
    }
    res.status = iterate(/*allow_artificial=*/false, res.pivots);
    if (res.status != LpStatus::optimal) return res;
    res.x = extract();
    res.objective = cost_.dot(res.x);
    return res;
  }

 private:
  bool is_artificial(Eigen::Index col) const { return col >= n_ + m_; }

  LpStatus iterate(bool allow_artificial, std::size_t& pivots) {
    const Eigen::Index limit = allow_artificial ? cols_ : n_ + m_;
    std::size_t streak = 0;
    while (pivots < opt_.max_pivots) {
      const bool bland = streak >= opt_.degenerate_streak;
      Eigen::Index enter = -1;
      double best = -opt_.pivot_tolerance;
      for (Eigen::Index j = 0; j < limit; ++j) {
        const double d = T_(m_, j);
        if (d < best) {
          enter = j;
          if (bland) break;
          best = d;
        }
      }
      if (enter < 0) return LpStatus::optimal;

      Eigen::Index leave = -1;
      double best_ratio = std::numeric_limits<double>::infinity();
      for (Eigen::Index i = 0; i < m_; ++i) {
        const double a = T_(i, enter);
        if (a <= opt_.pivot_tolerance) continue;
        const double ratio = std::max(T_(i, cols_), 0.0) / a;
        if (leave < 0) {
          best_ratio = ratio;
          leave = i;
          continue;
        }
        const double slack = 1e-13 * (1.0 + best_ratio);
        if (ratio < best_ratio - slack ||
            (ratio <= best_ratio + slack &&
             basis_[static_cast<std::size_t>(i)] < basis_[static_cast<std::size_t>(leave)])) {
          best_ratio = std::min(ratio, best_ratio);
          leave = i;
        }
      }
      if (leave < 0) return LpStatus::unbounded;
      streak = best_ratio <= opt_.feasibility_tolerance ? streak + 1 : 0;
      pivot(leave, enter);
      ++pivots;
    }
    return LpStatus::iteration_limit;
  }

  void pivot(Eigen::Index r, Eigen::Index c) {
    T_.row(r) /= T_(r, c);
    Eigen::VectorXd column = T_.col(c);
    column[r] = 0.0;
    T_.noalias() -= column * T_.row(r);
    T_(r, c) = 1.0;
    basis_[static_cast<std::size_t>(r)] = c;
  }

  void drive_out_artificials(std::size_t& pivots) {
    for (Eigen::Index i = 0; i < m_; ++i) {
      if (!is_artificial(basis_[static_cast<std::size_t>(i)])) continue;
      Eigen::Index best = -1;
      double mag = opt_.pivot_tolerance;
      for (Eigen::Index j = 0; j < n_ + m_; ++j) {
        if (std::abs(T_(i, j)) > mag) {
          mag = std::abs(T_(i, j));
          best = j;
        }
      }
      // A row with no usable column is redundant; its artificial stays basic at zero.
      if (best >= 0) {
        pivot(i, best);
        ++pivots;
      }
    }
  }

  Eigen::VectorXd extract() const {
    Eigen::VectorXd basic = T_.col(cols_).head(m_);
    Eigen::MatrixXd B(m_, m_);
    for (Eigen::Index i = 0; i < m_; ++i) B.col(i) = standard_.col(basis_[static_cast<std::size_t>(i)]);
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(B);
    if (std::abs(lu.determinant()) > 0.0) {
      const Eigen::VectorXd refined = lu.solve(rhs_);
      if (refined.allFinite() && (B * refined - rhs_).cwiseAbs().maxCoeff() <=
                                     (B * basic - rhs_).cwiseAbs().maxCoeff()) {
        basic = refined;
      }
    }
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n_);
    for (Eigen::Index i = 0; i < m_; ++i) {
      const auto b = basis_[static_cast<std::size_t>(i)];
      if (b < n_) x[b] = std::max(basic[i], 0.0);
    }
    return x;
  }

  SimplexOptions opt_;
  Eigen::Index m_ = 0, n_ = 0, k_ = 0, cols_ = 0;
  Eigen::MatrixXd standard_;
  Eigen::VectorXd rhs_;
  Eigen::VectorXd cost_;
  RowMatrix T_;
  std::vector<Eigen::Index> basis_;
};

}  // namespace

LpResult solve_lp(const LinearProgram& lp, const SimplexOptions& options) {
  return Tableau(lp, options).solve();
}

}  // namespace autodml
