#include "hidden_ode/recursive_newton.hpp"

#include <chrono>
#include <cmath>
#include <string>

#include "hidden_ode/neural_field.hpp"

namespace hidden_ode {

namespace {

void require_finite(const Vector& v, const char* what, long step) {
  if (!v.allFinite()) {
    throw NumericalError(std::string(what) + " became non-finite at step " + std::to_string(step));
  }
}

void require_finite(const Matrix& m, const char* what, long step) {
  if (!m.allFinite()) {
    throw NumericalError(std::string(what) + " became non-finite at step " + std::to_string(step));
  }
}

void check_square(const Matrix& m, Index n, const char* what) {
  if (m.rows() != n || m.cols() != n) {
    throw ConfigError(std::string(what) + " must be " + std::to_string(n) + "x" +
                      std::to_string(n) + ", got " + std::to_string(m.rows()) + "x" +
                      std::to_string(m.cols()));
  }
}

// Copies the lower triangle onto the upper one.
void mirror_lower(Matrix& p) {
  const Index n = p.rows();
  for (Index j = 0; j < n; ++j)
    for (Index i = j + 1; i < n; ++i) p(j, i) = p(i, j);
}

// Quadratic form weight for ||r||^2_{A^{-1}}; diagonal matrices skip the
// factorization.
double weighted(const Eigen::LLT<Matrix>& llt, const Vector& r) {
  return weighted_sq_norm(llt, r);
}

Eigen::LLT<Matrix> factor(const Matrix& a, const char* what) {
  if (a.size() == 0) return Eigen::LLT<Matrix>(Matrix(0, 0));
  return cholesky_or_throw(a, what);
}

}  // namespace

NoiseConfig NoiseConfig::isotropic(Index state_dim, Index param_dim, Index output_dim,
                                   double q_x, double q_theta, double r_y) {
  NoiseConfig n;
  n.Q_x = q_x * Matrix::Identity(state_dim, state_dim);
  n.Q_theta = q_theta * Matrix::Identity(param_dim, param_dim);
  n.R_y = r_y * Matrix::Identity(output_dim, output_dim);
  return n;
}

NoiseConfig NoiseConfig::split(const HybridModel& model, double q_known, double q_hidden,
                               double q_theta, double r_y) {
  NoiseConfig n = isotropic(model.state_dim(), model.param_dim(), model.output_dim(), q_known,
                            q_theta, r_y);
  if (model.slot()) {
    for (Index i : model.slot()->hidden_indices) n.Q_x(i, i) = q_hidden;
  }
  return n;
}

void NoiseConfig::validate(const HybridModel& model) const {
  check_square(Q_x, model.state_dim(), "Q_x");
  check_square(Q_theta, model.param_dim(), "Q_theta");
  check_square(R_y, model.output_dim(), "R_y");
  if (!is_spd(Q_x)) throw CovarianceError("Q_x is not symmetric positive definite", -1);
  if (!is_spd(Q_theta)) throw CovarianceError("Q_theta is not symmetric positive definite", -1);
  if (!is_spd(R_y)) throw CovarianceError("R_y is not symmetric positive definite", -1);
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(P_x0_scale > 0.0) || !(P_theta0_scale > 0.0)) {
    throw ConfigError("initial covariance scales must be positive");
  }
  if (ic_solver.max_iters < 0 || !(ic_solver.tol > 0.0)) {
    throw ConfigError("initial-condition solver needs max_iters >= 0 and tol > 0");
  }
}

Prediction predict(const FilterState& fs, const HybridModel& model, const Vector& u) {
  Prediction p;
  p.theta_pred = fs.theta_hat;
  p.x_pred = model.discrete_step(fs.x_hat, u, fs.theta_hat);
  require_finite(p.x_pred, "predicted state", fs.step_index);
  return p;
}

Matrix propagate_state_cov(const Matrix& P_x, const Matrix& F_x, const Matrix& Q_x) {
  Matrix p = F_x * P_x * F_x.transpose() + Q_x;
  symmetrize(p);
  return p;
}

StateUpdate update_state(const Vector& x_pred, const Vector& h_pred, const Matrix& P_x_minus,
                         const Matrix& H, const Matrix& R_y, const Vector& y, long step) {
  const Matrix hp = H * P_x_minus;  // d_y x d_x
  Matrix s = hp * H.transpose() + R_y;
  symmetrize(s);
  const auto s_llt = cholesky_or_throw(s, "innovation covariance", step);
  StateUpdate out;
  out.gain = s_llt.solve(hp).transpose();
  out.x_hat = x_pred - out.gain * (h_pred - y);
  out.P_x = P_x_minus - out.gain * hp;
  symmetrize(out.P_x);
  require_finite(out.x_hat, "state estimate", step);
  require_finite(out.P_x, "state covariance", step);
  return out;
}

ParamCovariance propagate_param_cov(const Matrix& P_theta, const Matrix& F_theta,
                                    const Matrix& Q_x, const Matrix& Q_theta, long step) {
  const Matrix fp = F_theta * P_theta;  // d_x x d_theta
  Matrix inner = Q_x + fp * F_theta.transpose();
  symmetrize(inner);
  const auto llt = cholesky_or_throw(inner, "parameter innovation matrix", step);
  ParamCovariance out;
  out.P_theta_minus = P_theta - fp.transpose() * llt.solve(fp);
  symmetrize(out.P_theta_minus);
  out.P_theta_new = Q_theta + out.P_theta_minus;
  symmetrize(out.P_theta_new);
  require_finite(out.P_theta_new, "parameter covariance", step);
  return out;
}

Vector update_params(const Vector& theta_pred, const Matrix& P_theta_minus,
                     const Matrix& F_theta, const Vector& x_pred, const Vector& x_hat) {
  Vector theta = theta_pred - P_theta_minus * (F_theta.transpose() * (x_pred - x_hat));
  if (!theta.allFinite()) throw NumericalError("parameter estimate became non-finite");
  return theta;
}

Vector update_params(const Vector& theta_pred, const Matrix& P_theta_minus,
                     const Matrix& F_theta, const Vector& x_pred, const Vector& x_hat,
                     const Matrix& Q_x) {
  const auto llt = cholesky_or_throw(Q_x, "Q_x");
  const Vector w = llt.solve(Vector(x_pred - x_hat));
  Vector theta = theta_pred - P_theta_minus * (F_theta.transpose() * w);
  if (!theta.allFinite()) throw NumericalError("parameter estimate became non-finite");
  return theta;
}

FilterState step(const FilterState& fs, const HybridModel& model, const NoiseConfig& noise,
                 const Vector& u, const Vector& y, StepTrace* trace, ParamGain gain) {
  const NewtonRecursion rec(model, noise, gain);
  return rec.step(fs, u, y, trace);
}

NewtonRecursion::NewtonRecursion(const HybridModel& model, const NoiseConfig& noise,
                                 ParamGain gain)
    : model_(&model), noise_(&noise), gain_(gain) {
  check_square(noise.Q_x, model.state_dim(), "Q_x");
  check_square(noise.Q_theta, model.param_dim(), "Q_theta");
  check_square(noise.R_y, model.output_dim(), "R_y");
  if (model.slot()) {
    hidden_rows_ = model.slot()->hidden_indices;
    qx_llt_ = cholesky_or_throw(noise.Q_x, "Q_x");
    const auto& qx_llt = qx_llt_;
    const Index n = model.state_dim();
    const auto k = static_cast<Index>(hidden_rows_.size());
    Matrix sel = Matrix::Zero(n, k);
    for (Index j = 0; j < k; ++j) sel(hidden_rows_[static_cast<std::size_t>(j)], j) = 1.0;
    Matrix info = sel.transpose() * qx_llt.solve(sel);
    symmetrize(info);
    q_hidden_ = cholesky_or_throw(info, "hidden block of Q_x^{-1}").solve(Matrix::Identity(k, k));
    symmetrize(q_hidden_);
    const Matrix& qt = noise.Q_theta;
    q_theta_diagonal_ = (qt - Matrix(qt.diagonal().asDiagonal())).cwiseAbs().maxCoeff() == 0.0;
  }
}

FilterState NewtonRecursion::step(const FilterState& fs, const Vector& u, const Vector& y,
                                  StepTrace* trace) const {
  FilterState out = fs;
  advance(out, u, y, trace);
  mirror_lower(out.P_theta);
  require_finite(out.P_theta, "parameter covariance", out.step_index);
  return out;
}

void NewtonRecursion::advance(FilterState& fs, const Vector& u, const Vector& y,
                              StepTrace* trace) const {
  const HybridModel& model = *model_;
  if (y.size() != model.output_dim()) {
    throw ConfigError("measurement has " + std::to_string(y.size()) + " entries, model expects " +
                      std::to_string(model.output_dim()));
  }

  // Linearize at the previous estimates; x_pred doubles as f_o(x_hat, theta_hat).
  const auto lin = model.linearize_step(fs.x_hat, u, fs.theta_hat);
  const Vector& x_pred = lin.next;
  const long idx = fs.step_index + 1;
  require_finite(x_pred, "predicted state", idx);

  fs.step_index = idx;
  fs.P_x_prior = propagate_state_cov(fs.P_x, lin.F_x, noise_->Q_x);
  const Matrix H = model.jacobian_measurement(x_pred);
  StateUpdate su = update_state(x_pred, model.measure(x_pred), fs.P_x_prior, H, noise_->R_y, y, idx);
  fs.x_hat = std::move(su.x_hat);
  fs.P_x = std::move(su.P_x);
  if (trace) {
    trace->x_pred = x_pred;
    trace->state_gain = std::move(su.gain);
  }

  if (model.param_dim() == 0) {
    if (trace && trace->record_param_cov) trace->P_theta_minus = fs.P_theta;
    return;
  }

  // Reduced parameter recursion over the hidden rows G of F_theta. P_theta
  // is read and written through its lower triangle only.
  const Matrix& G = lin.F_theta_hidden;  // k x d_theta
  const Matrix pg = fs.P_theta.selfadjointView<Eigen::Lower>() * G.transpose();  // d_theta x k
  Matrix inner = q_hidden_ + G * pg;
  symmetrize(inner);
  const auto llt = cholesky_or_throw(inner, "parameter innovation matrix", idx);

  // P_theta^- G^T = pg - pg (inner^{-1} G pg)
  const Matrix pminus_gT = pg - pg * llt.solve(G * pg);
  // F_theta^T r = G^T r[hidden]; the Newton gain weights r by Q_x^{-1} first.
  Vector r = x_pred - fs.x_hat;
  if (gain_ == ParamGain::kNewton) r = qx_llt_.solve(r);
  Vector resid(static_cast<Index>(hidden_rows_.size()));
  for (std::size_t k = 0; k < hidden_rows_.size(); ++k) {
    resid[static_cast<Index>(k)] = r[hidden_rows_[k]];
  }
  fs.theta_hat -= pminus_gT * resid;
  require_finite(fs.theta_hat, "parameter estimate", idx);

  const Matrix l_inv_pgT = llt.matrixL().solve(pg.transpose());  // k x d_theta
  fs.P_theta.selfadjointView<Eigen::Lower>().rankUpdate(l_inv_pgT.transpose(), -1.0);
  if (trace && trace->record_param_cov) {
    trace->P_theta_minus = fs.P_theta;
    mirror_lower(trace->P_theta_minus);
  }
  if (q_theta_diagonal_) {
    fs.P_theta.diagonal() += noise_->Q_theta.diagonal();
  } else {
    fs.P_theta += noise_->Q_theta;
  }
}

FilterState NewtonRecursion::measurement_update(const FilterState& fs, const Vector& y) const {
  const HybridModel& model = *model_;
  FilterState out = fs;
  const Matrix H = model.jacobian_measurement(fs.x_hat);
  StateUpdate su = update_state(fs.x_hat, model.measure(fs.x_hat), fs.P_x_prior, H, noise_->R_y,
                                y, fs.step_index + 1);
  out.x_hat = std::move(su.x_hat);
  out.P_x = std::move(su.P_x);
  out.step_index = fs.step_index + 1;
  return out;
}

Reconstruction reconstruct_initial_state(const HybridModel& model, const Vector& start,
                                         const Vector& y0, const Matrix& R_y,
                                         const GaussNewtonConfig& cfg) {
  if (!y0.allFinite()) throw NumericalError("initial measurement is not finite");
  if (y0.size() != model.output_dim()) throw ConfigError("initial measurement has wrong length");
  constexpr double kDamping = 1e-8;
  const auto r_llt = cholesky_or_throw(R_y, "R_y");
  Reconstruction rec;
  rec.x = start;
  Vector resid = model.measure(rec.x) - y0;
  double best_norm = resid.norm();
  Vector best = rec.x;
  rec.converged = best_norm < cfg.tol;
  while (!rec.converged && rec.iterations < cfg.max_iters) {
    const Matrix H = model.jacobian_measurement(rec.x);
    const Matrix rinv_h = r_llt.solve(H);
    Matrix normal = H.transpose() * rinv_h;
    normal.diagonal().array() += kDamping;
    const Vector grad = rinv_h.transpose() * resid;
    rec.x -= normal.ldlt().solve(grad);
    ++rec.iterations;
    resid = model.measure(rec.x) - y0;
    const double norm = resid.norm();
    if (norm < best_norm) {
      best_norm = norm;
      best = rec.x;
    }
    rec.converged = norm < cfg.tol;
  }
  if (!rec.converged) rec.x = best;
  return rec;
}

double epoch_loss(const HybridModel& model, const NoiseConfig& noise,
                  const std::vector<Vector>& x_hats, const std::vector<Vector>& theta_hats,
                  const Dataset& data) {
  const std::size_t n = data.size();
  if (x_hats.size() != n || theta_hats.size() != n) {
    throw ConfigError("trajectory length does not match the dataset");
  }
  if (n == 0) return 0.0;
  const auto qx = factor(noise.Q_x, "Q_x");
  const auto ry = factor(noise.R_y, "R_y");
  const auto qt = factor(noise.Q_theta, "Q_theta");
  double total = weighted(ry, data.measurements[0] - model.measure(x_hats[0]));
  for (std::size_t i = 1; i < n; ++i) {
    const Vector pred = model.discrete_step(x_hats[i - 1], data.inputs[i - 1], theta_hats[i - 1]);
    total += weighted(qx, x_hats[i] - pred);
    total += weighted(ry, data.measurements[i] - model.measure(x_hats[i]));
    total += weighted(qt, theta_hats[i] - theta_hats[i - 1]);
  }
  return 0.5 * total;
}

EpochRunner::EpochRunner(const HybridModel& model, const NoiseConfig& noise, GaussNewtonConfig ic,
                         ParamGain gain)
    : recursion_(model, noise, gain),
      ic_(ic),
      qx_llt_(factor(noise.Q_x, "Q_x")),
      ry_llt_(factor(noise.R_y, "R_y")),
      qtheta_llt_(factor(noise.Q_theta, "Q_theta")) {}

EpochResult EpochRunner::run(const Dataset& data, const FilterState& fs_in,
                             const Vector& carry_state, int epoch) const {
  if (data.empty()) throw ConfigError("dataset is empty");
  const HybridModel& model = recursion_.model();
  if (data.input_dim() != model.input_dim() || data.output_dim() != model.output_dim()) {
    throw ConfigError("dataset dimensions (u " + std::to_string(data.input_dim()) + ", y " +
                      std::to_string(data.output_dim()) + ") do not match the model (u " +
                      std::to_string(model.input_dim()) + ", y " +
                      std::to_string(model.output_dim()) + ")");
  }
  const auto t_start = std::chrono::steady_clock::now();

  EpochResult res;
  res.reconstruction = reconstruct_initial_state(model, carry_state, data.measurements[0],
                                                 recursion_.noise().R_y, ic_);
  FilterState fs = fs_in;
  fs.x_hat = res.reconstruction.x;
  fs.step_index = 0;
  fs = recursion_.measurement_update(fs, data.measurements[0]);
  res.x0 = fs.x_hat;

  double loss = weighted(ry_llt_, data.measurements[0] - model.measure(fs.x_hat));
  StepTrace trace;
  trace.record_param_cov = false;
  Vector theta_prev;
  for (std::size_t i = 1; i < data.size(); ++i) {
    if (model.param_dim() > 0) theta_prev = fs.theta_hat;
    recursion_.advance(fs, data.inputs[i - 1], data.measurements[i], &trace);
    loss += weighted(qx_llt_, fs.x_hat - trace.x_pred);
    loss += weighted(ry_llt_, data.measurements[i] - model.measure(fs.x_hat));
    if (model.param_dim() > 0) loss += weighted(qtheta_llt_, fs.theta_hat - theta_prev);
  }
  mirror_lower(fs.P_theta);
  require_finite(fs.P_theta, "parameter covariance", fs.step_index);
  loss *= 0.5;
  if (!std::isfinite(loss)) {
    throw NumericalError("epoch " + std::to_string(epoch) + " loss is not finite");
  }

  res.state = std::move(fs);
  res.record.epoch = epoch;
  res.record.loss = loss;
  res.record.wall_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return res;
}

EpochResult run_epoch(const HybridModel& model, const NoiseConfig& noise, const Dataset& data,
                      const FilterState& fs_in, const Vector& carry_state, int epoch,
                      const GaussNewtonConfig& ic, ParamGain gain) {
  const EpochRunner runner(model, noise, ic, gain);
  return runner.run(data, fs_in, carry_state, epoch);
}

FilterState initial_filter_state(const HybridModel& model, const TrainConfig& cfg,
                                 const Vector& initial_guess) {
  if (initial_guess.size() != model.state_dim()) {
    throw ConfigError("initial guess has wrong length");
  }
  FilterState fs;
  fs.x_hat = initial_guess;
  fs.theta_hat = model.slot() ? init_params(model.slot()->net, cfg.seed) : Vector(0);
  const Index nx = model.state_dim();
  const Index nt = model.param_dim();
  fs.P_x = cfg.P_x0_scale * Matrix::Identity(nx, nx);
  fs.P_x_prior = fs.P_x;
  fs.P_theta = cfg.P_theta0_scale * Matrix::Identity(nt, nt);
  return fs;
}

TrainResult train_from(const HybridModel& model, const Dataset& data, const TrainConfig& cfg,
                       const Vector& initial_guess, const Vector& theta0) {
  cfg.validate();
  cfg.noise.validate(model);
  FilterState fs = initial_filter_state(model, cfg, initial_guess);
  if (theta0.size() != model.param_dim()) throw ConfigError("initial parameters have wrong length");
  fs.theta_hat = theta0;

  const EpochRunner runner(model, cfg.noise, cfg.ic_solver, cfg.param_gain);
  TrainResult out;
  Vector carry = initial_guess;
  for (int e = 1; e <= cfg.epochs; ++e) {
    EpochResult er;
    try {
      er = runner.run(data, fs, carry, e);
    } catch (const std::exception& ex) {
      throw TrainingFailure("training failed in epoch " + std::to_string(e) + ": " + ex.what(),
                            out.curve);
    }
    out.curve.push_back(er.record);
    out.x0 = er.x0;
    fs = std::move(er.state);
    carry = cfg.carry_over == CarryOver::kEpochStart ? er.x0 : fs.x_hat;
  }
  out.theta = fs.theta_hat;
  out.final_state = std::move(fs);
  return out;
}

TrainResult train(const HybridModel& model, const Dataset& data, const TrainConfig& cfg,
                  const Vector& initial_guess) {
  const Vector theta0 =
      model.slot() ? init_params(model.slot()->net, cfg.seed) : Vector(0);
  return train_from(model, data, cfg, initial_guess, theta0);
}

Vector assimilate_state(const HybridModel& model, const NoiseConfig& noise, const Dataset& data,
                        const Vector& theta, const Vector& start_guess, double P_x0_scale,
                        std::size_t count, const GaussNewtonConfig& ic) {
  if (count == 0 || count > data.size()) throw ConfigError("assimilation window out of range");
  const Reconstruction rec =
      reconstruct_initial_state(model, start_guess, data.measurements[0], noise.R_y, ic);
  const Index nx = model.state_dim();
  Vector x = rec.x;
  Matrix p_minus = P_x0_scale * Matrix::Identity(nx, nx);
  Matrix p = p_minus;
  for (std::size_t i = 0; i < count; ++i) {
    if (i > 0) {
      const Matrix F = model.jacobian_state(x, data.inputs[i - 1], theta);
      x = model.discrete_step(x, data.inputs[i - 1], theta);
      p_minus = propagate_state_cov(p, F, noise.Q_x);
    }
    const Matrix H = model.jacobian_measurement(x);
    StateUpdate su = update_state(x, model.measure(x), p_minus, H, noise.R_y,
                                  data.measurements[i], static_cast<long>(i));
    x = std::move(su.x_hat);
    p = std::move(su.P_x);
  }
  return x;
}

}  // namespace hidden_ode
