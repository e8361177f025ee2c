#pragma once

// Central-difference Jacobian. Test oracle only; production Jacobians are
// exact.

#include <functional>

#include "hidden_ode/linalg.hpp"

namespace hidden_ode {

inline Matrix fd_jacobian(const std::function<Vector(const Vector&)>& fn, const Vector& point,
                          double step) {
  const Vector f0 = fn(point);
  Matrix j(f0.size(), point.size());
  Vector xp = point;
  for (Index c = 0; c < point.size(); ++c) {
    const double orig = xp[c];
    xp[c] = orig + step;
    const Vector fp = fn(xp);
    xp[c] = orig - step;
    const Vector fm = fn(xp);
    xp[c] = orig;
    j.col(c) = (fp - fm) / (2.0 * step);
  }
  return j;
}

/// max |a - b| / max(1, |b|) entrywise.
inline double max_relative_error(const Matrix& a, const Matrix& b) {
  double worst = 0.0;
  for (Index r = 0; r < a.rows(); ++r)
    for (Index c = 0; c < a.cols(); ++c) {
      const double denom = std::max(1.0, std::abs(b(r, c)));
      worst = std::max(worst, std::abs(a(r, c) - b(r, c)) / denom);
    }
  return worst;
}

}  // namespace hidden_ode
