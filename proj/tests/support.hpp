#pragma once

// Independent oracles and fixtures shared by the unit tests and the
// acceptance runner. The oracles themselves (KalmanOracle, information forms,
// finite differences) never call the code under test; the *_error helpers
// compare the two.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "hidden_ode/benchmarks.hpp"
#include "hidden_ode/fd_jacobian.hpp"
#include "hidden_ode/hybrid_model.hpp"
#include "hidden_ode/recursive_newton.hpp"
#include "hidden_ode/rng.hpp"

namespace hidden_ode::testing {

inline Matrix random_matrix(Rng& rng, Index rows, Index cols, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Index c = 0; c < cols; ++c)
    for (Index r = 0; r < rows; ++r) m(r, c) = scale * rng.uniform(-1.0, 1.0);
  return m;
}

inline Vector random_vector(Rng& rng, Index n, double scale = 1.0) {
  return random_matrix(rng, n, 1, scale).col(0);
}

/// A A^T + eps I with entries of order `scale`.
inline Matrix random_spd(Rng& rng, Index n, double scale = 1.0, double eps = 0.1) {
  const Matrix a = random_matrix(rng, n, n);
  Matrix p = scale * (a * a.transpose() + eps * Matrix::Identity(n, n));
  return 0.5 * (p + p.transpose());
}

/// x' = A x + B u.
class LinearField final : public KnownField {
 public:
  LinearField(Matrix a, Matrix b) : a_(std::move(a)), b_(std::move(b)) {}
  Index state_dim() const override { return a_.rows(); }
  Index input_dim() const override { return b_.cols(); }
  Vector evaluate(const Vector& x, const Vector& u) const override { return a_ * x + b_ * u; }
  Matrix jacobian(const Vector&, const Vector&) const override { return a_; }

 private:
  Matrix a_, b_;
};

/// y = C x.
class LinearMeasurement final : public MeasurementMap {
 public:
  explicit LinearMeasurement(Matrix c) : c_(std::move(c)) {}
  Index state_dim() const override { return c_.cols(); }
  Index output_dim() const override { return c_.rows(); }
  Vector evaluate(const Vector& x) const override { return c_ * x; }
  Matrix jacobian(const Vector&) const override { return c_; }

 private:
  Matrix c_;
};

/// Textbook discrete Kalman filter on x_{k+1} = Phi x_k + G u_k, y = C x,
/// written with explicit inverses and the Joseph-form covariance update.
struct KalmanOracle {
  Matrix Phi, G, C, Q, R;
  Vector x;
  Matrix P;

  void step(const Vector& u, const Vector& y) {
    const Vector x_pred = Phi * x + G * u;
    const Matrix P_pred = Phi * P * Phi.transpose() + Q;
    const Matrix S = C * P_pred * C.transpose() + R;
    const Matrix K = P_pred * C.transpose() * S.inverse();
    x = x_pred + K * (y - C * x_pred);
    const Matrix I_KC = Matrix::Identity(P.rows(), P.cols()) - K * C;
    P = I_KC * P_pred * I_KC.transpose() + K * R * K.transpose();
  }
};

/// The three-state construction with x3 hidden: x1' = x2, x2' = -x1 + 0.5 x3,
/// x3' supplied by a small network; h(x) = (x1, x2).
inline HybridModel three_state_model(double dt = 1e-3) {
  Matrix a(3, 3);
  a << 0, 1, 0, -1, 0, 0.5, 0, 0, 0;
  auto known = std::make_shared<LinearField>(a, Matrix::Zero(3, 1));
  MlpSpec net{{3, 6, 1}, {Activation::kTanh, Activation::kLinear}};
  return HybridModel(known, make_hidden_slot(net, {2}, 3),
                     std::make_shared<SelectionMap>(3, std::vector<Index>{0, 1}), dt);
}

/// Random state inside the region the benchmark visits.
inline Vector sample_state(const std::string& benchmark, Rng& rng) {
  if (benchmark == "hodgkin_huxley") {
    return Vector{{rng.uniform(-80.0, 40.0), rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0),
                   rng.uniform(0.0, 1.0)}};
  }
  if (benchmark == "cartpole") {
    return Vector{{rng.uniform(-1.0, 1.0), rng.uniform(-2.0, 2.0), rng.uniform(-3.0, 3.0),
                   rng.uniform(-4.0, 4.0)}};
  }
  if (benchmark == "yeast_glycolysis") {
    Vector x(7);
    for (Index k = 0; k < 7; ++k) x[k] = rng.uniform(0.05, 2.0);
    return x;
  }
  return Vector{{rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)}};
}

struct JacobianErrors {
  double state = 0.0;
  double params = 0.0;
  double measurement = 0.0;
  double known_field = 0.0;  // the true field alone, dt = 1
  double worst() const { return std::max({state, params, measurement, known_field}); }
};

/// Worst relative error (denominator max(1, |entry|)) of every production
/// Jacobian of the benchmark against central differences with step 1e-6.
inline JacobianErrors jacobian_errors(const std::string& name, int draws, std::uint64_t seed) {
  BenchmarkOptions opts;
  opts.dt = 1e-2;
  const BenchmarkSpec spec = make_benchmark(name, opts);
  const HybridModel learner = make_learner(spec);
  const HybridModel truth = make_truth_model(spec).with_dt(1.0);
  Rng rng(seed);
  JacobianErrors e;
  constexpr double h = 1e-6;
  for (int k = 0; k < draws; ++k) {
    const Vector x = sample_state(spec.name, rng);
    const Vector u = random_vector(rng, spec.input_dim(), 5.0);
    Vector theta = init_params(spec.slot.net, seed + static_cast<std::uint64_t>(k));
    theta += random_vector(rng, theta.size(), 0.1);

    const Matrix fx = learner.jacobian_state(x, u, theta);
    const Matrix fx_fd = fd_jacobian([&](const Vector& z) { return learner.discrete_step(z, u, theta); }, x, h);
    e.state = std::max(e.state, max_relative_error(fx, fx_fd));

    const Matrix ft = learner.jacobian_params(x, u, theta);
    const Matrix ft_fd = fd_jacobian([&](const Vector& p) { return learner.discrete_step(x, u, p); }, theta, h);
    e.params = std::max(e.params, max_relative_error(ft, ft_fd));

    const Matrix hm = learner.jacobian_measurement(x);
    const Matrix hm_fd = fd_jacobian([&](const Vector& z) { return learner.measure(z); }, x, h);
    e.measurement = std::max(e.measurement, max_relative_error(hm, hm_fd));

    const Vector none;
    const Matrix kf = truth.jacobian_state(x, u, none);
    const Matrix kf_fd = fd_jacobian([&](const Vector& z) { return truth.discrete_step(z, u, none); }, x, h);
    e.known_field = std::max(e.known_field, max_relative_error(kf, kf_fd));
  }
  return e;
}

/// Largest absolute difference in x_hat and P_x between `step` (hidden slot
/// disabled) and KalmanOracle over `systems` random linear-Gaussian systems
/// with 1 <= d_x <= 4.
inline double kalman_equivalence_error(int systems, std::uint64_t seed, int steps = 40) {
  Rng rng(seed);
  double worst = 0.0;
  for (int s = 0; s < systems; ++s) {
    const Index nx = 1 + static_cast<Index>(rng.uniform() * 4);
    const Index ny = 1 + static_cast<Index>(rng.uniform() * static_cast<double>(nx));
    const Index nu = 1 + static_cast<Index>(rng.uniform() * 2);
    const double dt = 0.05;
    const Matrix A = random_matrix(rng, nx, nx);
    const Matrix B = random_matrix(rng, nx, nu);
    const Matrix C = random_matrix(rng, ny, nx);
    NoiseConfig noise;
    noise.Q_x = random_spd(rng, nx, 1e-2);
    noise.Q_theta = Matrix(0, 0);
    noise.R_y = random_spd(rng, ny, 1e-1);
    const HybridModel model(std::make_shared<LinearField>(A, B), std::nullopt,
                            std::make_shared<LinearMeasurement>(C), dt);

    KalmanOracle kf{Matrix::Identity(nx, nx) + dt * A, dt * B, C, noise.Q_x, noise.R_y,
                    random_vector(rng, nx), random_spd(rng, nx)};
    FilterState fs;
    fs.x_hat = kf.x;
    fs.P_x = kf.P;
    fs.theta_hat = Vector(0);
    fs.P_theta = Matrix(0, 0);

    // Measurements from a noisy simulation of the same system.
    Vector x_true = random_vector(rng, nx);
    for (int k = 0; k < steps; ++k) {
      const Vector u = random_vector(rng, nu);
      x_true = kf.Phi * x_true + kf.G * u + random_vector(rng, nx, 0.1);
      const Vector y = C * x_true + random_vector(rng, ny, 0.3);
      kf.step(u, y);
      fs = step(fs, model, noise, u, y);
      worst = std::max(worst, (fs.x_hat - kf.x).cwiseAbs().maxCoeff());
      worst = std::max(worst, (fs.P_x - kf.P).cwiseAbs().maxCoeff());
    }
  }
  return worst;
}

struct InformationFormErrors {
  double state = 0.0;  // gain-form P_x against ((P^-)^{-1} + H^T R^{-1} H)^{-1}
  double param = 0.0;  // Woodbury P_theta^- against (P^{-1} + F^T Q_x^{-1} F)^{-1}
};

/// Relative (Frobenius) disagreement of the covariance updates with their
/// information forms over `instances` random SPD problems.
inline InformationFormErrors information_form_errors(int instances, std::uint64_t seed) {
  Rng rng(seed);
  InformationFormErrors e;
  const auto rel = [](const Matrix& a, const Matrix& b) { return (a - b).norm() / b.norm(); };
  for (int k = 0; k < instances; ++k) {
    const Index nx = 1 + static_cast<Index>(rng.uniform() * 6);
    const Index ny = 1 + static_cast<Index>(rng.uniform() * 6);
    const Index nt = 1 + static_cast<Index>(rng.uniform() * 12);
    const Matrix P_minus = random_spd(rng, nx);
    const Matrix H = random_matrix(rng, ny, nx);
    const Matrix R = random_spd(rng, ny, 0.5);
    const StateUpdate su = update_state(Vector::Zero(nx), Vector::Zero(ny), P_minus, H, R,
                                        Vector::Zero(ny));
    const Matrix info_x = (P_minus.inverse() + H.transpose() * R.inverse() * H).inverse();
    e.state = std::max(e.state, rel(su.P_x, info_x));

    const Matrix P_theta = random_spd(rng, nt);
    const Matrix F = random_matrix(rng, nx, nt);
    const Matrix Qx = random_spd(rng, nx, 0.5);
    const ParamCovariance pc = propagate_param_cov(P_theta, F, Qx, Matrix::Identity(nt, nt));
    const Matrix info_t = (P_theta.inverse() + F.transpose() * Qx.inverse() * F).inverse();
    e.param = std::max(e.param, rel(pc.P_theta_minus, info_t));
  }
  return e;
}

}  // namespace hidden_ode::testing
