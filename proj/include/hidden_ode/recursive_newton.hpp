#pragma once

// Alternating per-step Newton recursion for states and hidden-slot
// parameters.
//
// Each step takes (x_hat, theta_hat, P_x, P_theta) at t_{i-1} and
//   1. predicts x_pred = f_o(x_hat, theta_hat), theta_pred = theta_hat;
//   2. propagates P_x^- = F_x P_x F_x^T + Q_x;
//   3. corrects the state against y(t_i) with the gain P_x^- H^T S^{-1};
//   4. propagates P_theta^- = P_theta - P_theta F_t^T (Q_x + F_t P_theta F_t^T)^{-1} F_t P_theta;
//   5. moves theta by -P_theta^- F_t^T Q_x^{-1} (x_pred - x_hat_new), the
//      Newton step of the parameter loss (see ParamGain);
//   6. sets P_theta = Q_theta + P_theta^-.
// F_x and F_t are evaluated at the previous estimates, H at x_pred.

#include <cstdint>
#include <optional>
#include <vector>

#include "hidden_ode/dataset.hpp"
#include "hidden_ode/hybrid_model.hpp"
#include "hidden_ode/linalg.hpp"

namespace hidden_ode {

/// Weights of the quadratic cost; all must be SPD.
struct NoiseConfig {
  Matrix Q_x;
  Matrix Q_theta;
  Matrix R_y;

  static NoiseConfig isotropic(Index state_dim, Index param_dim, Index output_dim, double q_x,
                               double q_theta, double r_y);
  /// Diagonal Q_x with q_hidden on the hidden-slot rows and q_known on the
  /// rows whose physics is known; isotropic Q_theta and R_y.
  static NoiseConfig split(const HybridModel& model, double q_known, double q_hidden,
                           double q_theta, double r_y);
  /// Throws ConfigError on a dimension mismatch with `model` and
  /// CovarianceError when a matrix is not SPD.
  void validate(const HybridModel& model) const;
};

struct FilterState {
  Vector x_hat;
  Vector theta_hat;
  Matrix P_x;
  Matrix P_theta;
  /// P_x^- from the most recent prediction; carried into the next epoch.
  Matrix P_x_prior;
  long step_index = 0;
};

/// Parameter gain of the theta update.
///
/// kNewton minimizes the per-step parameter loss
///   1/2 ||x_hat_i - f_o(x_hat_{i-1}, theta)||^2_{Q_x^{-1}} + 1/2 ||theta - theta_{i-1}||^2_{P^{-1}}
/// exactly after linearization: K = P_theta^- F_t^T Q_x^{-1}.
/// kLiteral drops the Q_x^{-1} factor (K = P_theta^- F_t^T); its steps are
/// the Newton steps scaled by Q_x, so with small Q_x the parameters barely
/// move.
enum class ParamGain { kNewton, kLiteral };

struct GaussNewtonConfig {
  int max_iters = 20;
  double tol = 1e-9;
};

/// Which state seeds initial-condition reconstruction on epochs >= 2.
enum class CarryOver {
  kEpochStart,  ///< the previous epoch's estimate at t_0
  kEpochEnd,    ///< the previous epoch's final estimate at t_{N-1}
};

struct TrainConfig {
  int epochs = 20;
  NoiseConfig noise;
  double P_x0_scale = 1e-2;
  double P_theta0_scale = 1e2;
  std::uint64_t seed = 0;
  GaussNewtonConfig ic_solver;
  CarryOver carry_over = CarryOver::kEpochStart;
  ParamGain param_gain = ParamGain::kNewton;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double wall_time = 0.0;  // seconds
};

// ---------------------------------------------------------------------------
// Single-step building blocks.

struct Prediction {
  Vector x_pred;
  Vector theta_pred;
};
Prediction predict(const FilterState& fs, const HybridModel& model, const Vector& u);

/// F P F^T + Q, symmetrized.
Matrix propagate_state_cov(const Matrix& P_x, const Matrix& F_x, const Matrix& Q_x);

struct StateUpdate {
  Vector x_hat;
  Matrix P_x;
  Matrix gain;
};
/// Gain K = P^- H^T S^{-1} with S = H P^- H^T + R solved by Cholesky;
/// x_hat = x_pred - K (h_pred - y); P_x = P^- - K H P^-, symmetrized.
/// `h_pred` is h(x_pred). Throws CovarianceError (tagged with `step`) when S
/// is not SPD.
StateUpdate update_state(const Vector& x_pred, const Vector& h_pred, const Matrix& P_x_minus,
                         const Matrix& H, const Matrix& R_y, const Vector& y, long step = -1);

struct ParamCovariance {
  Matrix P_theta_minus;
  Matrix P_theta_new;
};
ParamCovariance propagate_param_cov(const Matrix& P_theta, const Matrix& F_theta,
                                    const Matrix& Q_x, const Matrix& Q_theta, long step = -1);

/// theta_pred - P_theta^- F_theta^T (x_pred - x_hat).
Vector update_params(const Vector& theta_pred, const Matrix& P_theta_minus,
                     const Matrix& F_theta, const Vector& x_pred, const Vector& x_hat);
/// theta_pred - P_theta^- F_theta^T Q_x^{-1} (x_pred - x_hat).
Vector update_params(const Vector& theta_pred, const Matrix& P_theta_minus,
                     const Matrix& F_theta, const Vector& x_pred, const Vector& x_hat,
                     const Matrix& Q_x);

/// Intermediate values of one step, for loss accounting and diagnostics.
struct StepTrace {
  Vector x_pred;
  Matrix state_gain;
  Matrix P_theta_minus;
  bool record_param_cov = true;  // copying P_theta^- costs O(d_theta^2)
};

/// One full alternating step consuming u(t_{i-1}) and y(t_i).
FilterState step(const FilterState& fs, const HybridModel& model, const NoiseConfig& noise,
                 const Vector& u, const Vector& y, StepTrace* trace = nullptr,
                 ParamGain gain = ParamGain::kNewton);

/// Step engine with the per-model constants (noise factorizations, the
/// hidden-row reduction of Q_x) computed once. `step` above is a thin
/// wrapper around it.
///
/// Only hidden-slot rows of F_theta are nonzero, so the parameter recursion
/// works with those k rows and the equivalent k x k noise block
/// (S^T Q_x^{-1} S)^{-1}; the result equals the dense formula.
class NewtonRecursion {
 public:
  NewtonRecursion(const HybridModel& model, const NoiseConfig& noise,
                  ParamGain gain = ParamGain::kNewton);

  FilterState step(const FilterState& fs, const Vector& u, const Vector& y,
                   StepTrace* trace = nullptr) const;
  /// Measurement update without a transition, used at t_0: the prior is
  /// (fs.x_hat, fs.P_x_prior); theta and P_theta are untouched.
  FilterState measurement_update(const FilterState& fs, const Vector& y) const;

  /// In-place form of `step` for long runs. Only the lower triangle of
  /// fs.P_theta is read and updated; the strict upper triangle is left stale
  /// until the caller restores symmetry.
  void advance(FilterState& fs, const Vector& u, const Vector& y, StepTrace* trace = nullptr) const;

  const HybridModel& model() const { return *model_; }
  const NoiseConfig& noise() const { return *noise_; }

 private:
  const HybridModel* model_;
  const NoiseConfig* noise_;
  ParamGain gain_;
  std::vector<Index> hidden_rows_;
  Matrix q_hidden_;  // (S^T Q_x^{-1} S)^{-1}
  Eigen::LLT<Matrix> qx_llt_;
  bool q_theta_diagonal_ = false;
};

// ---------------------------------------------------------------------------
// Initial conditions, losses, epochs.

struct Reconstruction {
  Vector x;
  int iterations = 0;
  bool converged = true;
};

/// Gauss-Newton on ||y0 - h(x)||^2_{R^{-1}} from `start`:
///   x <- x - (H^T R^{-1} H + 1e-8 I)^{-1} H^T R^{-1} (h(x) - y0)
/// Directions invisible to h keep their starting values. Not converging
/// within the iteration budget returns the best iterate with
/// converged = false.
Reconstruction reconstruct_initial_state(const HybridModel& model, const Vector& start,
                                         const Vector& y0, const Matrix& R_y,
                                         const GaussNewtonConfig& cfg);

/// 1/2 sum of the physics, data and regularization terms over a trajectory
/// aligned with `data` (entry i belongs to t_i). Entry 0 contributes only
/// its data term.
double epoch_loss(const HybridModel& model, const NoiseConfig& noise,
                  const std::vector<Vector>& x_hats, const std::vector<Vector>& theta_hats,
                  const Dataset& data);

struct EpochResult {
  FilterState state;       // at t_{N-1}
  EpochRecord record;
  Vector x0;               // filtered estimate at t_0
  Reconstruction reconstruction;
};

/// Runs one pass over `data`: reconstructs x(t_0) from y(t_0) starting at
/// `carry_state`, applies the t_0 measurement update with the prior
/// covariance fs_in.P_x_prior, then steps through t_1..t_{N-1}. theta and
/// P_theta carry over from fs_in.
class EpochRunner {
 public:
  EpochRunner(const HybridModel& model, const NoiseConfig& noise, GaussNewtonConfig ic = {},
              ParamGain gain = ParamGain::kNewton);

  EpochResult run(const Dataset& data, const FilterState& fs_in, const Vector& carry_state,
                  int epoch) const;

 private:
  NewtonRecursion recursion_;
  GaussNewtonConfig ic_;
  Eigen::LLT<Matrix> qx_llt_;
  bool q_theta_diagonal_ = false;
  Eigen::LLT<Matrix> ry_llt_;
  Eigen::LLT<Matrix> qtheta_llt_;
};

EpochResult run_epoch(const HybridModel& model, const NoiseConfig& noise, const Dataset& data,
                      const FilterState& fs_in, const Vector& carry_state, int epoch,
                      const GaussNewtonConfig& ic = {}, ParamGain gain = ParamGain::kNewton);

/// P_x^- = P_x0_scale I, P_theta = P_theta0_scale I, theta = init_params(seed).
FilterState initial_filter_state(const HybridModel& model, const TrainConfig& cfg,
                                 const Vector& initial_guess);

struct TrainResult {
  Vector theta;
  Vector x0;
  std::vector<EpochRecord> curve;
  FilterState final_state;
};

/// Raised when an epoch fails; keeps the epochs that completed.
class TrainingFailure : public NumericalError {
 public:
  TrainingFailure(const std::string& what, std::vector<EpochRecord> curve)
      : NumericalError(what), curve_(std::move(curve)) {}
  const std::vector<EpochRecord>& curve() const { return curve_; }

 private:
  std::vector<EpochRecord> curve_;
};

TrainResult train(const HybridModel& model, const Dataset& data, const TrainConfig& cfg,
                  const Vector& initial_guess);

/// Same as train but starts from given parameters instead of init_params.
TrainResult train_from(const HybridModel& model, const Dataset& data, const TrainConfig& cfg,
                       const Vector& initial_guess, const Vector& theta0);

/// Runs the state recursion only (parameters frozen) over the first `count`
/// samples and returns x_hat at t_{count-1}. Used to estimate the state of a
/// held-out record before rolling out.
Vector assimilate_state(const HybridModel& model, const NoiseConfig& noise, const Dataset& data,
                        const Vector& theta, const Vector& start_guess, double P_x0_scale,
                        std::size_t count, const GaussNewtonConfig& ic = {});

}  // namespace hidden_ode
