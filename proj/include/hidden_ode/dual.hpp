#pragma once

// Forward-mode dual numbers with a small fixed-capacity gradient. A known
// vector field written once as a template over its scalar type yields both
// its value (double) and its exact Jacobian (Dual) from the same code.

#include <array>
#include <cmath>
#include <cstddef>

namespace hidden_ode {

inline constexpr std::size_t kMaxDualDim = 8;

struct Dual {
  double v = 0.0;
  std::array<double, kMaxDualDim> d{};

  constexpr Dual() = default;
  constexpr Dual(double value) : v(value) {}  // NOLINT: implicit constant

  /// Independent variable number `slot` with unit seed.
  static Dual variable(double value, std::size_t slot) {
    Dual r(value);
    r.d[slot] = 1.0;
    return r;
  }

  Dual& operator+=(const Dual& o) {
    v += o.v;
    for (std::size_t k = 0; k < kMaxDualDim; ++k) d[k] += o.d[k];
    return *this;
  }
  Dual& operator-=(const Dual& o) {
    v -= o.v;
    for (std::size_t k = 0; k < kMaxDualDim; ++k) d[k] -= o.d[k];
    return *this;
  }
  Dual& operator*=(const Dual& o) {
    for (std::size_t k = 0; k < kMaxDualDim; ++k) d[k] = d[k] * o.v + v * o.d[k];
    v *= o.v;
    return *this;
  }
  Dual& operator/=(const Dual& o) {
    const double inv = 1.0 / o.v;
    const double q = v * inv;
    for (std::size_t k = 0; k < kMaxDualDim; ++k) d[k] = (d[k] - q * o.d[k]) * inv;
    v = q;
    return *this;
  }
};

inline Dual operator+(Dual a, const Dual& b) { return a += b; }
inline Dual operator-(Dual a, const Dual& b) { return a -= b; }
inline Dual operator*(Dual a, const Dual& b) { return a *= b; }
inline Dual operator/(Dual a, const Dual& b) { return a /= b; }
inline Dual operator-(Dual a) {
  a.v = -a.v;
  for (auto& g : a.d) g = -g;
  return a;
}

namespace detail {
// f(a) with f'(a) = dfa
inline Dual chain(const Dual& a, double fa, double dfa) {
  Dual r(fa);
  for (std::size_t k = 0; k < kMaxDualDim; ++k) r.d[k] = dfa * a.d[k];
  return r;
}
}  // namespace detail

inline Dual exp(const Dual& a) {
  const double e = std::exp(a.v);
  return detail::chain(a, e, e);
}
inline Dual sin(const Dual& a) { return detail::chain(a, std::sin(a.v), std::cos(a.v)); }
inline Dual cos(const Dual& a) { return detail::chain(a, std::cos(a.v), -std::sin(a.v)); }
inline Dual tanh(const Dual& a) {
  const double t = std::tanh(a.v);
  return detail::chain(a, t, 1.0 - t * t);
}
inline Dual sqrt(const Dual& a) {
  const double s = std::sqrt(a.v);
  return detail::chain(a, s, 0.5 / s);
}
/// Integer power; exact derivative n * a^(n-1).
inline Dual pow(const Dual& a, int n) {
  return detail::chain(a, std::pow(a.v, n), n * std::pow(a.v, n - 1));
}

inline double value_of(double x) { return x; }
inline double value_of(const Dual& x) { return x.v; }

}  // namespace hidden_ode
