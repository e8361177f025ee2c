#include <doctest.h>

#include <cmath>

#include "hidden_ode/benchmarks.hpp"
#include "hidden_ode/recursive_newton.hpp"
#include "../support.hpp"

using namespace hidden_ode;
using namespace hidden_ode::testing;

namespace {

Matrix scalar(double v) { return Matrix::Constant(1, 1, v); }

HybridModel ho_learner() {
  return make_learner(make_benchmark("ho"));
}

// y = x^2 on one state.
struct Square {
  template <class T>
  void operator()(std::span<const T> x, std::span<T> y) const { y[0] = x[0] * x[0]; }
};

// Dense reference for one alternating step, written from the update
// equations with full F_theta and explicit inverses.
FilterState dense_step(const FilterState& fs, const HybridModel& m, const NoiseConfig& n,
                       const Vector& u, const Vector& y, ParamGain gain) {
  const Vector x_pred = m.discrete_step(fs.x_hat, u, fs.theta_hat);
  const Matrix F = m.jacobian_state(fs.x_hat, u, fs.theta_hat);
  const Matrix Ft = m.jacobian_params(fs.x_hat, u, fs.theta_hat);
  const Matrix Pm = F * fs.P_x * F.transpose() + n.Q_x;
  const Matrix H = m.jacobian_measurement(x_pred);
  const Matrix K = Pm * H.transpose() * (H * Pm * H.transpose() + n.R_y).inverse();
  FilterState out = fs;
  out.x_hat = x_pred - K * (m.measure(x_pred) - y);
  out.P_x = Pm - K * H * Pm;
  const Matrix Ptm = fs.P_theta - fs.P_theta * Ft.transpose() *
                                      (n.Q_x + Ft * fs.P_theta * Ft.transpose()).inverse() * Ft *
                                      fs.P_theta;
  Vector r = x_pred - out.x_hat;
  if (gain == ParamGain::kNewton) r = n.Q_x.inverse() * r;
  out.theta_hat = fs.theta_hat - Ptm * Ft.transpose() * r;
  out.P_theta = Ptm + n.Q_theta;
  return out;
}

}  // namespace

TEST_CASE("predict") {
  const HybridModel m = ho_learner();
  FilterState fs;
  fs.x_hat = Vector{{1.0, 0.0}};
  fs.theta_hat = init_params(m.slot()->net, 3);
  const Prediction p = predict(fs, m, Vector{{0.0}});
  CHECK(p.theta_pred == fs.theta_hat);

  const HybridModel truth = make_truth_model(make_benchmark("ho"));
  FilterState ft;
  ft.x_hat = Vector{{1.0, 0.0}};
  ft.theta_hat = Vector(0);
  const Prediction q = predict(ft, truth, Vector{{0.0}});
  CHECK(q.x_pred[0] == 1.0);
  CHECK(q.x_pred[1] == doctest::Approx(-0.004).epsilon(1e-15));

  auto zero = std::make_shared<LinearField>(Matrix::Zero(2, 2), Matrix::Zero(2, 1));
  const HybridModel zm(zero, std::nullopt, identity_measurement(2), 0.1);
  ft.x_hat = Vector{{0.3, -0.7}};
  CHECK(predict(ft, zm, Vector{{1.0}}).x_pred == ft.x_hat);
}

TEST_CASE("propagate_state_cov") {
  CHECK(propagate_state_cov(scalar(1), scalar(1), scalar(1))(0, 0) == 2.0);
  Rng rng(1);
  const Matrix P = random_spd(rng, 3);
  const Matrix Q = random_spd(rng, 3);
  CHECK(propagate_state_cov(P, Matrix::Zero(3, 3), Q) == Q);
  CHECK((propagate_state_cov(P, Matrix::Identity(3, 3), Q) - (P + Q)).cwiseAbs().maxCoeff() < 1e-15);
  const Matrix F = random_matrix(rng, 3, 3);
  const Matrix out = propagate_state_cov(P, F, Q);
  CHECK(out == out.transpose());
  CHECK((out - (F * P * F.transpose() + Q)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("update_state") {
  const StateUpdate s = update_state(Vector{{0.0}}, Vector{{0.0}}, scalar(1), scalar(1), scalar(1), Vector{{2.0}});
  CHECK(s.gain(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(s.x_hat[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(s.P_x(0, 0) == doctest::Approx(0.5).epsilon(1e-15));

  Rng rng(4);
  const Vector x_pred = random_vector(rng, 3);
  const Vector y = random_vector(rng, 3);
  const StateUpdate exact = update_state(x_pred, x_pred, random_spd(rng, 3), Matrix::Identity(3, 3),
                                         1e-12 * Matrix::Identity(3, 3), y);
  CHECK((exact.x_hat - y).cwiseAbs().maxCoeff() < 1e-6);

  const StateUpdate confident = update_state(x_pred, x_pred, Matrix::Zero(3, 3), Matrix::Identity(3, 3),
                                             Matrix::Identity(3, 3), y);
  CHECK(confident.x_hat == x_pred);

  CHECK_THROWS_AS(update_state(x_pred, x_pred, Matrix::Zero(3, 3), Matrix::Identity(3, 3),
                               -Matrix::Identity(3, 3), y, 17),
                  CovarianceError);
  try {
    update_state(x_pred, x_pred, Matrix::Zero(3, 3), Matrix::Identity(3, 3), -Matrix::Identity(3, 3), y, 17);
  } catch (const CovarianceError& e) {
    CHECK(e.step() == 17);
  }
}

TEST_CASE("gain magnitude never grows with R") {
  double prev = std::numeric_limits<double>::infinity();
  for (double r = 1e-6; r < 1e6; r *= 3.0) {
    const double k = std::abs(update_state(Vector{{0.0}}, Vector{{0.0}}, scalar(2.0), scalar(0.7), scalar(r), Vector{{1.0}}).gain(0, 0));
    CHECK(k <= prev);
    prev = k;
  }
}

TEST_CASE("propagate_param_cov") {
  Rng rng(9);
  const Matrix P = random_spd(rng, 4);
  const Matrix Qt = random_spd(rng, 4, 0.01);
  const ParamCovariance z = propagate_param_cov(P, Matrix::Zero(2, 4), random_spd(rng, 2), Qt);
  CHECK((z.P_theta_minus - P).cwiseAbs().maxCoeff() == 0.0);
  CHECK((z.P_theta_new - (P + Qt)).cwiseAbs().maxCoeff() < 1e-15);

  const ParamCovariance s = propagate_param_cov(scalar(2), scalar(1), scalar(2), scalar(0.5));
  CHECK(s.P_theta_minus(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(s.P_theta_new(0, 0) == doctest::Approx(1.5).epsilon(1e-15));
}

TEST_CASE("covariance updates agree with their information forms") {
  const InformationFormErrors e = information_form_errors(100, 2024);
  CHECK(e.state <= 1e-8);
  CHECK(e.param <= 1e-8);
}

TEST_CASE("update_params") {
  Rng rng(12);
  const Vector theta = random_vector(rng, 5);
  const Matrix Pm = random_spd(rng, 5);
  const Matrix F = random_matrix(rng, 3, 5);
  const Vector x = random_vector(rng, 3);
  CHECK(update_params(theta, Pm, F, x, x) == theta);
  CHECK(update_params(theta, Pm, Matrix::Zero(3, 5), x, random_vector(rng, 3)) == theta);

  const Vector out = update_params(Vector{{1.0}}, scalar(2), scalar(0.5), Vector{{0.1}}, Vector{{0.0}});
  CHECK(out[0] == doctest::Approx(0.9).epsilon(1e-15));
  // Newton form divides the residual by Q_x.
  const Vector nw = update_params(Vector{{1.0}}, scalar(2), scalar(0.5), Vector{{0.1}}, Vector{{0.0}}, scalar(0.5));
  CHECK(nw[0] == doctest::Approx(0.8).epsilon(1e-15));
}

TEST_CASE("step reproduces a textbook Kalman filter when the slot is disabled") {
  CHECK(kalman_equivalence_error(50, 77) <= 1e-10);
}

TEST_CASE("step matches the dense update equations") {
  const HybridModel m = three_state_model(0.05);
  Rng rng(31);
  NoiseConfig n;
  n.Q_x = random_spd(rng, 3, 0.1);  // full Q_x exercises the hidden-row reduction
  n.Q_theta = random_spd(rng, m.param_dim(), 1e-3);
  n.R_y = random_spd(rng, 2, 0.1);
  for (ParamGain gain : {ParamGain::kNewton, ParamGain::kLiteral}) {
    FilterState fs;
    fs.x_hat = random_vector(rng, 3);
    fs.theta_hat = random_vector(rng, m.param_dim());
    fs.P_x = random_spd(rng, 3, 0.1);
    fs.P_theta = random_spd(rng, m.param_dim());
    const Vector u{{0.0}};
    const Vector y = random_vector(rng, 2);
    const FilterState got = step(fs, m, n, u, y, nullptr, gain);
    const FilterState want = dense_step(fs, m, n, u, y, gain);
    CHECK((got.x_hat - want.x_hat).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((got.P_x - want.P_x).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((got.theta_hat - want.theta_hat).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((got.P_theta - want.P_theta).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(got.step_index == fs.step_index + 1);
    CHECK(got.P_x == got.P_x.transpose());
    CHECK(got.P_theta == got.P_theta.transpose());
    CHECK(is_spd(got.P_x));
    CHECK(is_spd(got.P_theta));
  }
}

TEST_CASE("zero residual leaves the parameters unchanged") {
  const HybridModel m = three_state_model(0.01);
  const NoiseConfig n = NoiseConfig::isotropic(3, m.param_dim(), 2, 1e-3, 1e-4, 1e-2);
  FilterState fs;
  fs.x_hat = Vector{{0.2, -0.4, 0.9}};
  fs.theta_hat = init_params(m.slot()->net, 5);
  fs.P_x = 0.1 * Matrix::Identity(3, 3);
  fs.P_theta = Matrix::Identity(m.param_dim(), m.param_dim());
  const Vector u{{0.0}};
  const Vector y = m.measure(m.discrete_step(fs.x_hat, u, fs.theta_hat));
  const FilterState out = step(fs, m, n, u, y);
  CHECK(out.theta_hat == fs.theta_hat);
  CHECK(out.x_hat == m.discrete_step(fs.x_hat, u, fs.theta_hat));
}

TEST_CASE("one step on the HH learner moves the parameters") {
  const BenchmarkSpec spec = make_benchmark("hh");
  const HybridModel m = make_learner(spec);
  const NoiseConfig n = NoiseConfig::split(m, 1e-10, 1e-5, 1e-8, 1e-10);
  TrainConfig cfg;
  cfg.noise = n;
  // Start away from the truth in h so the innovation is nonzero.
  Vector start = spec.initial_state;
  start[3] += 0.05;
  const FilterState fs = initial_filter_state(m, cfg, start);
  const Dataset d = simulate_dataset(spec);
  StepTrace trace;
  const FilterState out = step(fs, m, n, d.inputs[0], d.measurements[1], &trace);
  CHECK(out.x_hat.allFinite());
  CHECK(out.P_theta.allFinite());
  CHECK((trace.x_pred - out.x_hat).norm() > 0.0);
  CHECK((out.theta_hat - fs.theta_hat).norm() > 0.0);
  CHECK(trace.P_theta_minus.rows() == m.param_dim());
}

TEST_CASE("initial-state reconstruction") {
  const HybridModel m = three_state_model();
  const GaussNewtonConfig cfg;
  const Matrix R = 1e-2 * Matrix::Identity(2, 2);
  const Reconstruction r = reconstruct_initial_state(m, Vector{{0.0, 0.0, 5.0}}, Vector{{1.5, -2.0}}, R, cfg);
  CHECK(r.iterations == 1);
  CHECK(r.converged);
  CHECK(std::abs(r.x[0] - 1.5) < 1e-7);
  CHECK(std::abs(r.x[1] + 2.0) < 1e-7);
  CHECK(r.x[2] == 5.0);

  const Reconstruction same = reconstruct_initial_state(m, Vector{{1.0, 2.0, 3.0}}, Vector{{1.0, 2.0}}, R, cfg);
  CHECK(same.iterations == 0);
  CHECK(same.x == Vector{{1.0, 2.0, 3.0}});

  auto zero = std::make_shared<LinearField>(Matrix::Zero(1, 1), Matrix::Zero(1, 1));
  const HybridModel sq(zero, std::nullopt, make_measurement(1, 1, Square{}), 0.1);
  const Reconstruction s = reconstruct_initial_state(sq, Vector{{1.0}}, Vector{{4.0}}, scalar(1.0), cfg);
  CHECK(s.converged);
  CHECK(s.iterations <= 20);
  CHECK(std::abs(s.x[0] - 2.0) < 1e-8);

  GaussNewtonConfig tight;
  tight.max_iters = 1;
  tight.tol = 1e-14;
  const Reconstruction cut = reconstruct_initial_state(sq, Vector{{1.0}}, Vector{{4.0}}, scalar(1.0), tight);
  CHECK_FALSE(cut.converged);
}

TEST_CASE("epoch_loss") {
  const HybridModel m = three_state_model(0.1);
  const NoiseConfig n = NoiseConfig::isotropic(3, m.param_dim(), 2, 1.0, 1.0, 1.0);
  const Vector theta = init_params(m.slot()->net, 1);
  Dataset d;
  std::vector<Vector> xs, ts;
  Vector x{{0.5, 0.1, -0.3}};
  for (int i = 0; i < 5; ++i) {
    if (i > 0) x = m.discrete_step(x, Vector{{0.0}}, theta);
    d.times.push_back(0.1 * i);
    d.inputs.push_back(Vector{{0.0}});
    d.measurements.push_back(m.measure(x));
    xs.push_back(x);
    ts.push_back(theta);
  }
  CHECK(epoch_loss(m, n, xs, ts, d) == doctest::Approx(0.0).epsilon(1e-24));

  // A single data residual of 2 with unit weight contributes 1/2 * 4.
  Dataset d1 = d;
  d1.measurements[3][0] += 2.0;
  CHECK(epoch_loss(m, n, xs, ts, d1) == doctest::Approx(2.0).epsilon(1e-12));

  NoiseConfig n2 = n;
  n2.R_y *= 2.0;
  CHECK(epoch_loss(m, n2, xs, ts, d1) == doctest::Approx(1.0).epsilon(1e-12));

  xs.pop_back();
  CHECK_THROWS_AS(epoch_loss(m, n, xs, ts, d), ConfigError);
}

TEST_CASE("epochs, carry-over and training") {
  const BenchmarkSpec spec = make_benchmark("ho");
  const HybridModel m = make_learner(spec);
  const Dataset d = simulate_dataset(spec);
  TrainConfig cfg;
  cfg.noise = NoiseConfig::split(m, 1e-10, 1e-5, 1e-2, 1e-10);
  cfg.epochs = 3;

  Dataset one;
  one.times = {0.0};
  one.inputs = {d.inputs[0]};
  one.measurements = {d.measurements[0]};
  const FilterState fs0 = initial_filter_state(m, cfg, spec.initial_guess);
  const EpochResult single = run_epoch(m, cfg.noise, one, fs0, spec.initial_guess, 1);
  CHECK(single.state.step_index == 1);
  CHECK(single.state.theta_hat == fs0.theta_hat);

  const TrainResult a = train(m, d, cfg, spec.initial_guess);
  const TrainResult b = train(m, d, cfg, spec.initial_guess);
  REQUIRE(a.curve.size() == 3);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(a.curve[k].loss == b.curve[k].loss);
    CHECK(std::isfinite(a.curve[k].loss));
    CHECK(a.curve[k].loss > 0.0);
  }
  CHECK(a.theta == b.theta);
  CHECK(a.x0 == b.x0);
  CHECK(a.curve.back().loss < a.curve.front().loss);

  TrainConfig one_epoch = cfg;
  one_epoch.epochs = 1;
  const TrainResult t1 = train(m, d, one_epoch, spec.initial_guess);
  const EpochResult e1 = run_epoch(m, cfg.noise, d, fs0, spec.initial_guess, 1);
  CHECK(t1.theta == e1.state.theta_hat);
  CHECK(t1.curve[0].loss == e1.record.loss);

  TrainConfig bad = cfg;
  bad.epochs = 0;
  CHECK_THROWS_AS(train(m, d, bad, spec.initial_guess), ConfigError);
  bad = cfg;
  bad.noise.Q_x(0, 0) = -1.0;
  CHECK_THROWS_AS(train(m, d, bad, spec.initial_guess), CovarianceError);
}

TEST_CASE("two epochs on a noiseless linear system do not increase the loss") {
  const BenchmarkSpec spec = make_benchmark("ho");
  const HybridModel truth = make_truth_model(spec);
  const Dataset d = simulate_dataset(spec);
  TrainConfig cfg;
  cfg.noise = NoiseConfig::isotropic(2, 0, 1, 1e-5, 1.0, 1e-6);
  cfg.noise.Q_theta = Matrix(0, 0);
  cfg.epochs = 2;
  const TrainResult r = train(truth, d, cfg, spec.initial_guess);
  CHECK(r.curve[1].loss <= r.curve[0].loss);
}

TEST_CASE("assimilation recovers the state of a known model") {
  const BenchmarkSpec spec = make_benchmark("ho");
  const HybridModel truth = make_truth_model(spec);
  const Dataset d = simulate_dataset(spec);
  NoiseConfig n = NoiseConfig::isotropic(2, 0, 1, 1e-10, 1.0, 1e-10);
  n.Q_theta = Matrix(0, 0);
  const Vector x = assimilate_state(truth, n, d, Vector(0), Vector{{0.0, 0.7}}, 1e-2, 100);
  CHECK((x - d.states[99]).cwiseAbs().maxCoeff() < 1e-3);
  CHECK_THROWS_AS(assimilate_state(truth, n, d, Vector(0), Vector::Zero(2), 1e-2, 0), ConfigError);
}
