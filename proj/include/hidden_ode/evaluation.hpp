#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hidden_ode/dataset.hpp"
#include "hidden_ode/hybrid_model.hpp"
#include "hidden_ode/recursive_newton.hpp"

namespace hidden_ode {

/// A rollout left the finite range. `partial()` holds the states computed
/// before the failing step.
class RolloutError : public NumericalError {
 public:
  RolloutError(const std::string& what, std::size_t step, std::vector<Vector> partial)
      : NumericalError(what), step_(step), partial_(std::move(partial)) {}
  std::size_t step() const { return step_; }
  const std::vector<Vector>& partial() const { return partial_; }

 private:
  std::size_t step_;
  std::vector<Vector> partial_;
};

/// The truth signal is constant, so its range is zero and nRMSE is undefined.
class DegenerateRangeError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Mean-field Euler rollout: states[0] = x0,
/// states[i] = discrete_step(states[i-1], inputs[i-1], theta).
/// Returns inputs.size() states (one per sample).
std::vector<Vector> rollout(const HybridModel& model, const Vector& theta, const Vector& x0,
                            const std::vector<Vector>& inputs);

/// sqrt(mean((x - x_hat)^2)) / (max(x) - min(x)).
double nrmse(const std::vector<double>& estimate, const std::vector<double>& truth);

/// nRMSE of every component of two aligned trajectories.
Vector nrmse_per_component(const std::vector<Vector>& estimate, const std::vector<Vector>& truth);

struct RolloutResult {
  std::vector<Vector> states;
  Vector per_state_nrmse;           // empty when the data carries no truth
  double overall_nrmse = 0.0;       // unweighted mean over components
  double hidden_nrmse = 0.0;        // mean over hidden components
  bool has_metrics = false;
};

/// Rolls out from x0 with data.inputs and scores against data.states when
/// present. `hidden_indices` selects the components of hidden_nrmse.
RolloutResult evaluate_rollout(const HybridModel& model, const Vector& theta, const Vector& x0,
                               const Dataset& data, const std::vector<Index>& hidden_indices);

/// Joint (augmented-state) EKF parameter gain next to the alternating one.
struct JointGainDiagnostic {
  Matrix product;              // F_theta^T H^T, d_theta x d_y
  double max_abs_entry = 0.0;  // of product
  Matrix joint_gain;           // d_theta x d_y
  double joint_gain_max = 0.0;
  Matrix alternating_gain;     // P_theta F_theta^T, d_theta x d_x
  double alternating_gain_max = 0.0;
};

/// Evaluates the joint-EKF parameter gain
///   K = P F_t^T H^T [H F_t P F_t^T H^T + H Q_x H^T + R_y]^{-1}
/// at (x, u, theta), with P = P_theta, F_t = jacobian_params and
/// H = jacobian_measurement(x). The alternating gain is P F_t^T.
JointGainDiagnostic joint_gain_diagnostic(const HybridModel& model, const Vector& x,
                                          const Vector& u, const Vector& theta,
                                          const NoiseConfig& noise, const Matrix& P_theta);

struct ScalingSample {
  Index param_dim = 0;
  std::size_t steps = 0;
  double seconds = 0.0;  // fastest of the repeats
};

/// Wall time of one training epoch of `model` on `data`, minimum over
/// `repeats` runs. Zero for an empty dataset.
double epoch_seconds(const HybridModel& model, const Dataset& data, const TrainConfig& cfg,
                     const Vector& initial_guess, int repeats = 3);

/// epoch_seconds for each model (same data); Q_theta is rebuilt per model as
/// cfg.noise.Q_theta(0,0) * I.
std::vector<ScalingSample> scaling_probe(const std::vector<HybridModel>& models,
                                         const Dataset& data, const TrainConfig& cfg,
                                         const Vector& initial_guess, int repeats = 3);

/// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace hidden_ode
