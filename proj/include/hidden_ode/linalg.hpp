#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <string>

#include "hidden_ode/errors.hpp"

namespace hidden_ode {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// (P + P^T) / 2 in place. Afterwards P is bitwise symmetric.
inline void symmetrize(Matrix& p) {
  const Index n = p.rows();
  for (Index j = 0; j < n; ++j) {
    for (Index i = j + 1; i < n; ++i) {
      const double v = 0.5 * (p(i, j) + p(j, i));
      p(i, j) = v;
      p(j, i) = v;
    }
  }
}

/// Cholesky factorization that throws CovarianceError when `a` is not SPD.
inline Eigen::LLT<Matrix> cholesky_or_throw(const Matrix& a,
                                            const std::string& what,
                                            long step = -1) {
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success) {
    throw CovarianceError(what + " is not symmetric positive definite" +
                              (step >= 0 ? " at step " + std::to_string(step)
                                         : std::string{}),
                          step);
  }
  return llt;
}

/// True when the matrix is square and admits a Cholesky factorization.
inline bool is_spd(const Matrix& a) {
  if (a.rows() != a.cols()) return false;
  if (a.size() == 0) return true;
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) return false;
  Eigen::LLT<Matrix> llt(a);
  return llt.info() == Eigen::Success;
}

/// Squared weighted norm ||r||^2_{A^{-1}} = r^T A^{-1} r given the Cholesky
/// factor of A.
inline double weighted_sq_norm(const Eigen::LLT<Matrix>& a_llt, const Vector& r) {
  if (r.size() == 0) return 0.0;
  const Vector z = a_llt.matrixL().solve(r);
  return z.squaredNorm();
}

inline bool all_finite(const Vector& v) { return v.allFinite(); }
inline bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace hidden_ode
