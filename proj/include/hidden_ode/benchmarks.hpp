#pragma once

// Ground-truth systems used in the experiments, their data generation, and
// the learner models built on top of them.

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hidden_ode/dataset.hpp"
#include "hidden_ode/hybrid_model.hpp"
#include "hidden_ode/neural_field.hpp"

namespace hidden_ode {

// ---------------------------------------------------------------------------
// Hodgkin-Huxley. x = (V_m, n, m, h), input I_e. Units follow the classic
// formulation (mV, ms, uA/cm^2, unit capacitance).

namespace hh {

/// rate * z / (1 - exp(-z / 10)) with z = V + shift; the removable
/// singularity at z = 0 is replaced by its series 10 (1 + s/2 + s^2/12),
/// s = z / 10, when |z| < 1e-7.
template <class T>
T vtrap(const T& z, double rate) {
  using std::exp;
  if (std::abs(value_of(z)) < 1e-7) {
    const T s = z / 10.0;
    return rate * 10.0 * (1.0 + s / 2.0 + s * s / 12.0);
  }
  return rate * z / (1.0 - exp(-z / 10.0));
}

template <class T> T alpha_n(const T& v) { return vtrap(v + 55.0, 0.01); }
template <class T> T beta_n(const T& v) { using std::exp; return 0.125 * exp(-(v + 65.0) / 80.0); }
template <class T> T alpha_m(const T& v) { return vtrap(v + 40.0, 0.1); }
template <class T> T beta_m(const T& v) { using std::exp; return 4.0 * exp(-(v + 65.0) / 18.0); }
template <class T> T alpha_h(const T& v) { using std::exp; return 0.07 * exp(-(v + 65.0) / 20.0); }
template <class T> T beta_h(const T& v) { using std::exp; return 1.0 / (1.0 + exp(-(v + 35.0) / 10.0)); }

template <class T>
void field(std::span<const T> x, double current, std::span<T> dx) {
  const T& v = x[0];
  const T& n = x[1];
  const T& m = x[2];
  const T& h = x[3];
  const T n2 = n * n;
  dx[0] = current - 36.0 * (n2 * n2) * (v + 77.0) - 120.0 * (m * m * m) * h * (v - 50.0) -
          0.3 * (v + 54.4);
  dx[1] = alpha_n(v) * (1.0 - n) - beta_n(v) * n;
  dx[2] = alpha_m(v) * (1.0 - m) - beta_m(v) * m;
  dx[3] = alpha_h(v) * (1.0 - h) - beta_h(v) * h;
}

/// Gates at their voltage-dependent steady states.
Vector steady_state(double v);

}  // namespace hh

Vector hh_field(const Vector& x, double current);

// ---------------------------------------------------------------------------
// Cart-pole. x = (z, z', phi, phi'), phi = 0 upright, scalar force input.

struct CartPoleParams {
  double cart_mass = 1.0;   // M, kg
  double pole_mass = 0.1;   // m, kg
  double length = 0.5;      // l, m
  double gravity = 9.81;    // g, m/s^2
};

namespace cartpole {

template <class T>
void field(std::span<const T> x, double u, const CartPoleParams& p, std::span<T> dx) {
  using std::cos;
  using std::sin;
  const double M = p.cart_mass;
  const double m = p.pole_mass;
  const double l = p.length;
  const double g = p.gravity;
  const T& phi = x[2];
  const T& phi_dot = x[3];
  const T s = sin(phi);
  const T c = cos(phi);
  const T denom = M + m - m * c * c;
  dx[0] = x[1];
  dx[1] = (-m * l * s * phi_dot + u + m * g * c * s) / denom;
  dx[2] = phi_dot;
  dx[3] = (-m * l * c * s * phi_dot * phi_dot + u * c + m * g * s + M * g * s) / (l * denom);
}

/// Analytic linearization at the upright equilibrium.
void linearize_upright(const CartPoleParams& p, Matrix& A, Matrix& B);

}  // namespace cartpole

Vector cartpole_field(const Vector& x, double u, const CartPoleParams& p = {});

// ---------------------------------------------------------------------------
// Free harmonic oscillator x' = [[0, 1], [-w^2, 0]] x + [0, 1] u.

Vector ho_field(const Vector& x, const Vector& u, double omega);

// ---------------------------------------------------------------------------
// Yeast glycolysis, seven species. Coefficient names follow the usual
// families c, d, e, f, g, h, j; signs are carried by the values.

struct YeastParams {
  // Values of the standard seven-species glycolytic oscillator
  // parameterization (Ruoff et al. 2003, as tabulated in Mangan et al. 2016
  // and Kaheman et al. 2020). Overridable through the experiment config.
  double c1 = 2.5, c2 = -100.0, c3 = 13.6769;
  double d1 = 200.0, d2 = 13.6769, d3 = -6.0, d4 = 6.0;
  double e1 = 6.0, e2 = -64.0, e3 = 6.0, e4 = 16.0;
  double f1 = 64.0, f2 = -13.0, f3 = 13.0, f4 = -16.0, f5 = -100.0;
  double g1 = 1.3, g2 = -3.1;
  double h1 = -200.0, h2 = 13.6769, h3 = 128.0, h4 = -1.28, h5 = -32.0;
  double j1 = 6.0, j2 = -18.0, j3 = -100.0;
};

namespace yeast {

template <class T>
void field(std::span<const T> x, const YeastParams& p, std::span<T> dx) {
  const T x6_2 = x[5] * x[5];
  const T x6_4 = x6_2 * x6_2;
  dx[0] = p.c1 + p.c2 * x[0] * x[5] / (1.0 + p.c3 * x6_4);
  dx[1] = p.d1 * x[0] * x[5] / (1.0 + p.d2 * x6_4) + p.d3 * x[1] - p.d4 * x[1] * x[6];
  dx[2] = p.e1 * x[1] + p.e2 * x[2] + p.e3 * x[1] * x[6] + p.e4 * x[2] * x[5];
  dx[3] = p.f1 * x[2] + p.f2 * x[3] + p.f3 * x[4] + p.f4 * x[2] * x[5] + p.f5 * x[3] * x[6];
  dx[4] = p.g1 * x[3] + p.g2 * x[4];
  dx[5] = p.h3 * x[2] + p.h5 * x[5] + p.h4 * x[2] * x[5] + p.h1 * x[0] * x[5] / (1.0 + p.h2 * x6_4);
  dx[6] = p.j1 * x[1] + p.j2 * x[1] * x[6] + p.j3 * x[3] * x[6];
}

}  // namespace yeast

Vector yeast_field(const Vector& x, const YeastParams& p = {});

// ---------------------------------------------------------------------------
// LQR.

struct LqrPolicy {
  Matrix gain;                 // d_u x d_x
  Vector linearization_point;  // d_x
  Matrix riccati;              // solution P of the CARE
  double residual = 0.0;       // max-abs Riccati residual

  /// u = -K (x - x*).
  Vector operator()(const Vector& x) const { return -gain * (x - linearization_point); }
};

/// Solves A^T P + P A - P B R^{-1} B^T P + Q = 0 for the stabilizing P
/// (Hamiltonian eigenvectors, then Newton-Kleinman refinement) and returns
/// K = R^{-1} B^T P. Throws NumericalError naming the residual when the
/// residual stays above 1e-8 relative to max(1, |P|).
LqrPolicy lqr_gain(const Matrix& A, const Matrix& B, const Matrix& Qc, const Matrix& Rc);

// ---------------------------------------------------------------------------
// Benchmark descriptions.

/// Hidden-slot layout used when building the learner for a benchmark.
struct SlotLayout {
  MlpSpec net;
  std::vector<Index> input_indices;
  Vector input_offset;
  Vector input_scale;
  bool feeds_control = false;
  double control_scale = 1.0;
};

struct BenchmarkSpec {
  std::string name;
  std::shared_ptr<const KnownField> true_field;
  std::vector<Index> hidden_indices;
  std::vector<Index> measured_indices;
  double dt = 1e-3;
  std::size_t steps = 0;
  Vector initial_state;
  /// u(x, t); empty for external data.
  std::function<Vector(const Vector&, double)> controller;
  SlotLayout slot;
  /// Epoch-1 starting point of initial-condition reconstruction.
  Vector initial_guess;

  Index state_dim() const { return true_field->state_dim(); }
  Index input_dim() const { return true_field->input_dim(); }
  Index output_dim() const { return static_cast<Index>(measured_indices.size()); }
};

struct BenchmarkOptions {
  std::optional<double> dt;
  std::optional<std::size_t> steps;
  std::optional<Vector> initial_state;
  std::optional<MlpSpec> net;
  double omega = 2.0;            // harmonic oscillator
  double hh_current = 10.0;      // I_e, held constant
  CartPoleParams cartpole;
  Vector lqr_state_weights = Vector{{1.0, 1.0, 10.0, 1.0}};
  double lqr_input_weight = 1.0;
  YeastParams yeast;
  bool measure_all = false;      // expose every state in y
};

/// Canonical names: hodgkin_huxley, cartpole, harmonic_oscillator,
/// yeast_glycolysis, external_csv. Short aliases hh, ho, yeast and emps are
/// accepted.
std::string canonical_benchmark_name(std::string_view name);
std::vector<std::string> benchmark_names();

/// Throws ConfigError for unknown names.
BenchmarkSpec make_benchmark(std::string_view name, const BenchmarkOptions& opts = {});

/// Learner: the true field with hidden_indices supplied by the network,
/// measuring measured_indices.
HybridModel make_learner(const BenchmarkSpec& spec);

/// The benchmark's true field as a parameter-free HybridModel with the same
/// measurement map; rolling it out reproduces noiseless data.
HybridModel make_truth_model(const BenchmarkSpec& spec);

/// Training weights that work for a benchmark's learner. Q_x is diagonal:
/// q_known on rows whose physics is known, q_hidden on hidden-slot rows.
struct TrainingDefaults {
  double q_known = 1e-10;
  double q_hidden = 1e-5;
  double q_theta = 1e-2;
  double r_y = 1e-10;
  double P_x0 = 1e-2;
  double P_theta0 = 1e2;
  int epochs = 20;
};

TrainingDefaults recommended_training(std::string_view name);

struct SimulationNoise {
  double process_std = 0.0;      // std of the continuous-time process noise
  double measurement_std = 0.0;  // std of additive measurement noise
};

/// Euler(-Maruyama) rollout of the true field:
///   x_i = x_{i-1} + dt f(x_{i-1}, u_{i-1}) + dt eps,  y_i = h(x_i) + zeta,
/// with u_i = controller(x_i, t_i). Stores the true states. Throws
/// NumericalError with the step index if the trajectory diverges.
Dataset simulate_dataset(const BenchmarkSpec& spec, const SimulationNoise& noise = {},
                         std::uint64_t seed = 0);

}  // namespace hidden_ode
