#include "hidden_ode/benchmarks.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <complex>
#include <string>
#include <type_traits>

#include "hidden_ode/errors.hpp"
#include "hidden_ode/rng.hpp"

namespace hidden_ode {

namespace {

template <class S>
using scalar_of = std::remove_const_t<typename S::element_type>;

std::vector<Index> iota_indices(Index n) {
  std::vector<Index> v(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = i;
  return v;
}

std::vector<Index> complement(Index n, const std::vector<Index>& removed) {
  std::vector<Index> out;
  for (Index i = 0; i < n; ++i) {
    if (std::find(removed.begin(), removed.end(), i) == removed.end()) out.push_back(i);
  }
  return out;
}

MlpSpec mlp(std::vector<Index> widths, std::vector<Activation> acts) {
  MlpSpec s{std::move(widths), std::move(acts)};
  s.validate();
  return s;
}

std::function<Vector(const Vector&, double)> constant_input(Vector u) {
  return [u = std::move(u)](const Vector&, double) { return u; };
}

// Solves A^T X + X A = -C by vectorization; adequate for the small state
// dimensions handled here.
Matrix solve_lyapunov(const Matrix& A, const Matrix& C) {
  const Index n = A.rows();
  const Matrix I = Matrix::Identity(n, n);
  Matrix K = Matrix::Zero(n * n, n * n);
  const Matrix At = A.transpose();
  // vec(A^T X) = (I kron A^T) vec X,  vec(X A) = (A^T kron I) vec X.
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      K.block(i * n, j * n, n, n) += I(i, j) * At + At(i, j) * I;
    }
  }
  const Vector rhs = -Eigen::Map<const Vector>(C.data(), n * n);
  const Vector x = K.fullPivLu().solve(rhs);
  Matrix X = Eigen::Map<const Matrix>(x.data(), n, n);
  symmetrize(X);
  return X;
}

double care_residual(const Matrix& A, const Matrix& G, const Matrix& Q, const Matrix& P) {
  return (A.transpose() * P + P * A - P * G * P + Q).cwiseAbs().maxCoeff();
}

}  // namespace

// ---------------------------------------------------------------------------

Vector hh::steady_state(double v) {
  Vector x(4);
  x[0] = v;
  const double an = alpha_n(v), bn = beta_n(v);
  const double am = alpha_m(v), bm = beta_m(v);
  const double ah = alpha_h(v), bh = beta_h(v);
  x[1] = an / (an + bn);
  x[2] = am / (am + bm);
  x[3] = ah / (ah + bh);
  return x;
}

Vector hh_field(const Vector& x, double current) {
  if (x.size() != 4) throw ConfigError("hodgkin_huxley state has 4 components");
  Vector dx(4);
  hh::field<double>(std::span<const double>(x.data(), 4), current, std::span<double>(dx.data(), 4));
  return dx;
}

void cartpole::linearize_upright(const CartPoleParams& p, Matrix& A, Matrix& B) {
  const double M = p.cart_mass, m = p.pole_mass, l = p.length, g = p.gravity;
  A = Matrix::Zero(4, 4);
  B = Matrix::Zero(4, 1);
  A(0, 1) = 1.0;
  A(1, 2) = m * g / M;
  A(2, 3) = 1.0;
  A(3, 2) = (M + m) * g / (l * M);
  B(1, 0) = 1.0 / M;
  B(3, 0) = 1.0 / (l * M);
}

Vector cartpole_field(const Vector& x, double u, const CartPoleParams& p) {
  if (x.size() != 4) throw ConfigError("cartpole state has 4 components");
  Vector dx(4);
  cartpole::field<double>(std::span<const double>(x.data(), 4), u, p,
                          std::span<double>(dx.data(), 4));
  return dx;
}

Vector ho_field(const Vector& x, const Vector& u, double omega) {
  if (x.size() != 2 || u.size() != 1) throw ConfigError("harmonic oscillator expects x in R^2, u in R^1");
  return Vector{{x[1], -omega * omega * x[0] + u[0]}};
}

Vector yeast_field(const Vector& x, const YeastParams& p) {
  if (x.size() != 7) throw ConfigError("yeast glycolysis state has 7 components");
  Vector dx(7);
  yeast::field<double>(std::span<const double>(x.data(), 7), p, std::span<double>(dx.data(), 7));
  return dx;
}

// ---------------------------------------------------------------------------

LqrPolicy lqr_gain(const Matrix& A, const Matrix& B, const Matrix& Qc, const Matrix& Rc) {
  const Index n = A.rows();
  if (A.cols() != n || B.rows() != n || Qc.rows() != n || Qc.cols() != n ||
      Rc.rows() != B.cols() || Rc.cols() != B.cols()) {
    throw ConfigError("lqr_gain: inconsistent matrix dimensions");
  }
  const auto r_llt = cholesky_or_throw(Rc, "LQR input weight Rc");
  const Matrix Rinv_Bt = r_llt.solve(B.transpose());
  const Matrix G = B * Rinv_Bt;

  // Stable invariant subspace of the Hamiltonian [[A, -G], [-Q, -A^T]].
  Matrix H(2 * n, 2 * n);
  H << A, -G, -Qc, -A.transpose();
  Eigen::EigenSolver<Matrix> es(H);
  if (es.info() != Eigen::Success) throw NumericalError("lqr_gain: Hamiltonian eigensolver failed");
  Eigen::MatrixXcd U(2 * n, n);
  Index k = 0;
  for (Index i = 0; i < 2 * n; ++i) {
    if (es.eigenvalues()[i].real() < 0.0) {
      if (k == n) break;
      U.col(k++) = es.eigenvectors().col(i);
    }
  }
  if (k != n) throw NumericalError("lqr_gain: Hamiltonian has eigenvalues on the imaginary axis");
  const Eigen::MatrixXcd U1 = U.topRows(n);
  const Eigen::MatrixXcd U2 = U.bottomRows(n);
  const Eigen::MatrixXcd Pt = U1.transpose().fullPivLu().solve(U2.transpose());
  Matrix P = Pt.transpose().real();
  symmetrize(P);

  // Newton-Kleinman refinement.
  double res = care_residual(A, G, Qc, P);
  for (int it = 0; it < 50 && res > 1e-13 * std::max(1.0, P.cwiseAbs().maxCoeff()); ++it) {
    const Matrix K = Rinv_Bt * P;
    const Matrix Ak = A - B * K;
    const Matrix C = Qc + K.transpose() * Rc * K;
    const Matrix next = solve_lyapunov(Ak, C);
    const double next_res = care_residual(A, G, Qc, next);
    if (!(next_res < res)) break;
    P = next;
    res = next_res;
  }
  if (!std::isfinite(res) || res > 1e-8 * std::max(1.0, P.cwiseAbs().maxCoeff())) {
    throw NumericalError("lqr_gain: Riccati iteration did not converge (residual " +
                         std::to_string(res) + ")");
  }
  const Matrix K = Rinv_Bt * P;
  const Eigen::VectorXcd closed = (A - B * K).eigenvalues();
  for (Index i = 0; i < n; ++i) {
    if (!(closed[i].real() < 0.0)) {
      throw NumericalError("lqr_gain: no stabilizing solution ((A, B) is not stabilizable)");
    }
  }
  LqrPolicy policy;
  policy.gain = K;
  policy.linearization_point = Vector::Zero(n);
  policy.riccati = P;
  policy.residual = res;
  return policy;
}

// ---------------------------------------------------------------------------

std::string canonical_benchmark_name(std::string_view name) {
  if (name == "hh" || name == "hodgkin_huxley") return "hodgkin_huxley";
  if (name == "cartpole" || name == "cart_pole") return "cartpole";
  if (name == "ho" || name == "harmonic_oscillator") return "harmonic_oscillator";
  if (name == "yeast" || name == "yeast_glycolysis") return "yeast_glycolysis";
  if (name == "external_csv" || name == "emps") return "external_csv";
  throw ConfigError("unknown benchmark '" + std::string(name) +
                    "' (expected hodgkin_huxley, cartpole, harmonic_oscillator, "
                    "yeast_glycolysis or external_csv)");
}

std::vector<std::string> benchmark_names() {
  return {"hodgkin_huxley", "cartpole", "harmonic_oscillator", "yeast_glycolysis", "external_csv"};
}

TrainingDefaults recommended_training(std::string_view name) {
  const std::string canonical = canonical_benchmark_name(name);
  TrainingDefaults d;
  if (canonical == "hodgkin_huxley") {
    // The slot barely moves the voltage near rest; a larger random walk on
    // theta inflates P_theta along unexcited directions until it diverges.
    d.q_theta = 1e-8;
  } else if (canonical == "cartpole" || canonical == "external_csv") {
    // Open-loop rollouts of an unstable plant amplify field errors, and a
    // broad theta prior makes the outcome seed-dependent.
    d.q_theta = 1e-6;
    d.P_theta0 = 1.0;
  } else if (canonical == "yeast_glycolysis") {
    d.q_theta = 1e-6;
  }
  return d;
}

BenchmarkSpec make_benchmark(std::string_view name, const BenchmarkOptions& opts) {
  BenchmarkSpec b;
  b.name = canonical_benchmark_name(name);

  if (b.name == "hodgkin_huxley") {
    b.true_field = make_field(4, 1, [](auto x, std::span<const double> u, auto dx) {
      hh::field<scalar_of<decltype(x)>>(x, u[0], dx);
    });
    b.hidden_indices = {3};
    b.measured_indices = {0, 1, 2};
    b.dt = 1e-3;
    b.steps = 50000;
    b.initial_state = hh::steady_state(-65.0);
    b.controller = constant_input(Vector::Constant(1, opts.hh_current));
    // Three layers of 20 (ELU), 20 (tanh), 10 (sigmoid) and a linear head
    // mapping to the scalar h-gate derivative.
    b.slot.net = mlp({4, 20, 20, 10, 1},
                     {Activation::kElu, Activation::kTanh, Activation::kSigmoid, Activation::kLinear});
    b.slot.input_indices = {0, 1, 2, 3};
    b.slot.input_offset = Vector{{-20.0, 0.5, 0.5, 0.5}};
    b.slot.input_scale = Vector{{0.02, 2.0, 2.0, 2.0}};
  } else if (b.name == "cartpole") {
    const CartPoleParams p = opts.cartpole;
    b.true_field = make_field(4, 1, [p](auto x, std::span<const double> u, auto dx) {
      cartpole::field<scalar_of<decltype(x)>>(x, u[0], p, dx);
    });
    b.hidden_indices = {1, 3};
    b.measured_indices = {0, 2};
    b.dt = 1e-3;
    b.steps = 5000;
    b.initial_state = Vector{{0.0, 0.0, 0.2, 0.0}};
    Matrix A, B;
    cartpole::linearize_upright(p, A, B);
    if (opts.lqr_state_weights.size() != 4) throw ConfigError("cartpole LQR state weights need 4 entries");
    const LqrPolicy policy = lqr_gain(A, B, opts.lqr_state_weights.asDiagonal().toDenseMatrix(),
                                      Matrix::Constant(1, 1, opts.lqr_input_weight));
    b.controller = [policy](const Vector& x, double) { return policy(x); };
    // Both accelerations depend on the applied force, so the slot sees u.
    b.slot.net = mlp({5, 16, 16, 2}, {Activation::kTanh, Activation::kTanh, Activation::kLinear});
    b.slot.input_indices = {0, 1, 2, 3};
    b.slot.input_offset = Vector::Zero(4);
    b.slot.input_scale = Vector::Ones(4);
    b.slot.feeds_control = true;
  } else if (b.name == "harmonic_oscillator") {
    const double omega = opts.omega;
    b.true_field = make_field(2, 1, [omega](auto x, std::span<const double> u, auto dx) {
      dx[0] = x[1];
      dx[1] = -omega * omega * x[0] + u[0];
    });
    b.hidden_indices = {1};
    b.measured_indices = {0};
    b.dt = 1e-3;
    b.steps = 5000;
    b.initial_state = Vector{{1.0, 0.0}};
    b.controller = constant_input(Vector::Zero(1));
    b.slot.net = mlp({2, 8, 1}, {Activation::kTanh, Activation::kLinear});
    b.slot.input_indices = {0, 1};
    b.slot.input_offset = Vector::Zero(2);
    b.slot.input_scale = Vector::Ones(2);
  } else if (b.name == "yeast_glycolysis") {
    const YeastParams p = opts.yeast;
    b.true_field = make_field(7, 1, [p](auto x, std::span<const double>, auto dx) {
      yeast::field<scalar_of<decltype(x)>>(x, p, dx);
    });
    b.hidden_indices = {3};
    b.measured_indices = complement(7, b.hidden_indices);
    b.dt = 1e-3;
    b.steps = 5000;
    b.initial_state = Vector{{1.125, 0.95, 0.075, 0.16, 0.265, 0.7, 0.092}};
    b.controller = constant_input(Vector::Zero(1));
    b.slot.net = mlp({7, 16, 16, 1}, {Activation::kTanh, Activation::kTanh, Activation::kLinear});
    b.slot.input_indices = iota_indices(7);
    b.slot.input_offset = Vector::Zero(7);
    b.slot.input_scale = Vector::Ones(7);
  } else {
    // Electro-mechanical positioning: x = (q_m, q_m'), u = motor force
    // command. Only the kinematic relation is known; the acceleration is the
    // hidden slot and sees the input.
    b.true_field = make_field(2, 1, [](auto x, std::span<const double>, auto dx) {
      dx[0] = x[1];
      dx[1] = x[1] * 0.0;
    });
    b.hidden_indices = {1};
    b.measured_indices = {0};
    b.dt = 1e-3;
    b.steps = 0;
    b.initial_state = Vector::Zero(2);
    b.slot.net = mlp({3, 50, 20, 1}, {Activation::kTanh, Activation::kTanh, Activation::kLinear});
    b.slot.input_indices = {0, 1};
    b.slot.input_offset = Vector::Zero(2);
    b.slot.input_scale = Vector::Ones(2);
    b.slot.feeds_control = true;
  }

  if (opts.dt) b.dt = *opts.dt;
  if (opts.steps) b.steps = *opts.steps;
  if (opts.initial_state) b.initial_state = *opts.initial_state;
  if (opts.net) b.slot.net = *opts.net;
  if (opts.measure_all) b.measured_indices = iota_indices(b.state_dim());

  if (!(b.dt > 0.0)) throw ConfigError("benchmark dt must be positive");
  if (b.initial_state.size() != b.state_dim()) {
    throw ConfigError("initial state has " + std::to_string(b.initial_state.size()) +
                      " components, benchmark " + b.name + " has " +
                      std::to_string(b.state_dim()));
  }
  const Index slot_in = static_cast<Index>(b.slot.input_indices.size()) +
                        (b.slot.feeds_control ? b.input_dim() : 0);
  if (b.slot.net.input_dim() != slot_in ||
      b.slot.net.output_dim() != static_cast<Index>(b.hidden_indices.size())) {
    throw ConfigError("network for " + b.name + " must map " + std::to_string(slot_in) +
                      " inputs to " + std::to_string(b.hidden_indices.size()) + " outputs");
  }
  b.initial_guess = b.initial_state;
  return b;
}

HybridModel make_learner(const BenchmarkSpec& spec) {
  HiddenSlot slot;
  slot.net = spec.slot.net;
  slot.hidden_indices = spec.hidden_indices;
  slot.input_indices = spec.slot.input_indices;
  slot.input_offset = spec.slot.input_offset;
  slot.input_scale = spec.slot.input_scale;
  slot.feeds_control = spec.slot.feeds_control;
  slot.control_scale = spec.slot.control_scale;
  return HybridModel(spec.true_field, std::move(slot),
                     std::make_shared<SelectionMap>(spec.state_dim(), spec.measured_indices), spec.dt);
}

HybridModel make_truth_model(const BenchmarkSpec& spec) {
  return HybridModel(spec.true_field, std::nullopt,
                     std::make_shared<SelectionMap>(spec.state_dim(), spec.measured_indices), spec.dt);
}

Dataset simulate_dataset(const BenchmarkSpec& spec, const SimulationNoise& noise, std::uint64_t seed) {
  if (!spec.controller) {
    throw ConfigError("benchmark " + spec.name + " has no generator; load a dataset instead");
  }
  if (noise.process_std < 0.0 || noise.measurement_std < 0.0) {
    throw ConfigError("noise standard deviations must be nonnegative");
  }
  const HybridModel truth = make_truth_model(spec);
  const Vector no_params;
  Rng rng(seed);
  Dataset d;
  d.times.reserve(spec.steps);
  d.inputs.reserve(spec.steps);
  d.measurements.reserve(spec.steps);
  d.states.reserve(spec.steps);

  Vector x = spec.initial_state;
  for (std::size_t i = 0; i < spec.steps; ++i) {
    const double t = static_cast<double>(i) * spec.dt;
    if (i > 0) {
      Vector next = truth.discrete_step(x, d.inputs.back(), no_params);
      if (noise.process_std > 0.0) {
        for (Index k = 0; k < next.size(); ++k) next[k] += spec.dt * noise.process_std * rng.normal();
      }
      if (!next.allFinite()) {
        throw NumericalError("simulation of " + spec.name + " diverged at step " + std::to_string(i));
      }
      x = std::move(next);
    }
    Vector u = spec.controller(x, t);
    if (u.size() != spec.input_dim() || !u.allFinite()) {
      throw NumericalError("controller output invalid at step " + std::to_string(i));
    }
    Vector y = truth.measure(x);
    if (noise.measurement_std > 0.0) {
      for (Index k = 0; k < y.size(); ++k) y[k] += noise.measurement_std * rng.normal();
    }
    d.times.push_back(t);
    d.inputs.push_back(std::move(u));
    d.measurements.push_back(std::move(y));
    d.states.push_back(x);
  }
  return d;
}

}  // namespace hidden_ode
