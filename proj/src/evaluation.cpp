#include "hidden_ode/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

namespace hidden_ode {

std::vector<Vector> rollout(const HybridModel& model, const Vector& theta, const Vector& x0,
                            const std::vector<Vector>& inputs) {
  std::vector<Vector> states;
  if (inputs.empty()) return states;
  states.reserve(inputs.size());
  states.push_back(x0);
  for (std::size_t i = 1; i < inputs.size(); ++i) {
    Vector next;
    try {
      next = model.discrete_step(states.back(), inputs[i - 1], theta);
    } catch (const NumericalError& e) {
      throw RolloutError("rollout diverged at step " + std::to_string(i) + ": " + e.what(), i,
                         std::move(states));
    }
    states.push_back(std::move(next));
  }
  return states;
}

double nrmse(const std::vector<double>& estimate, const std::vector<double>& truth) {
  if (estimate.size() != truth.size()) throw ConfigError("nrmse: sequences differ in length");
  if (truth.size() < 2) throw ConfigError("nrmse: need at least two samples");
  const auto [lo, hi] = std::minmax_element(truth.begin(), truth.end());
  const double range = *hi - *lo;
  if (!(range > 0.0)) throw DegenerateRangeError("nrmse: truth signal is constant (zero range)");
  double sq = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double d = truth[i] - estimate[i];
    sq += d * d;
  }
  return std::sqrt(sq / static_cast<double>(truth.size())) / range;
}

Vector nrmse_per_component(const std::vector<Vector>& estimate, const std::vector<Vector>& truth) {
  if (estimate.size() != truth.size()) throw ConfigError("nrmse: trajectories differ in length");
  if (truth.empty()) throw ConfigError("nrmse: empty trajectory");
  const Index n = truth.front().size();
  Vector out(n);
  std::vector<double> a(truth.size()), b(truth.size());
  for (Index k = 0; k < n; ++k) {
    for (std::size_t i = 0; i < truth.size(); ++i) {
      a[i] = estimate[i][k];
      b[i] = truth[i][k];
    }
    try {
      out[k] = nrmse(a, b);
    } catch (const DegenerateRangeError&) {
      throw DegenerateRangeError("nrmse: truth component " + std::to_string(k) + " is constant");
    }
  }
  return out;
}

RolloutResult evaluate_rollout(const HybridModel& model, const Vector& theta, const Vector& x0,
                               const Dataset& data, const std::vector<Index>& hidden_indices) {
  RolloutResult r;
  r.states = rollout(model, theta, x0, data.inputs);
  if (!data.has_states()) return r;
  r.per_state_nrmse = nrmse_per_component(r.states, data.states);
  r.overall_nrmse = r.per_state_nrmse.mean();
  double h = 0.0;
  for (Index i : hidden_indices) h += r.per_state_nrmse[i];
  r.hidden_nrmse = hidden_indices.empty() ? 0.0 : h / static_cast<double>(hidden_indices.size());
  r.has_metrics = true;
  return r;
}

JointGainDiagnostic joint_gain_diagnostic(const HybridModel& model, const Vector& x,
                                          const Vector& u, const Vector& theta,
                                          const NoiseConfig& noise, const Matrix& P_theta) {
  const Matrix Ft = model.jacobian_params(x, u, theta);
  const Matrix H = model.jacobian_measurement(x);
  JointGainDiagnostic d;
  d.product = Ft.transpose() * H.transpose();
  d.max_abs_entry = d.product.size() ? d.product.cwiseAbs().maxCoeff() : 0.0;
  const Matrix PFH = P_theta * d.product;
  Matrix S = d.product.transpose() * PFH + H * noise.Q_x * H.transpose() + noise.R_y;
  symmetrize(S);
  const auto llt = cholesky_or_throw(S, "joint innovation matrix");
  d.joint_gain = llt.solve(PFH.transpose()).transpose();
  d.joint_gain_max = d.joint_gain.size() ? d.joint_gain.cwiseAbs().maxCoeff() : 0.0;
  d.alternating_gain = P_theta * Ft.transpose();
  d.alternating_gain_max = d.alternating_gain.size() ? d.alternating_gain.cwiseAbs().maxCoeff() : 0.0;
  return d;
}

double epoch_seconds(const HybridModel& model, const Dataset& data, const TrainConfig& cfg,
                     const Vector& initial_guess, int repeats) {
  if (data.empty()) return 0.0;
  const FilterState fs = initial_filter_state(model, cfg, initial_guess);
  const EpochRunner runner(model, cfg.noise, cfg.ic_solver, cfg.param_gain);
  double best = std::numeric_limits<double>::infinity();
  for (int r = 0; r < std::max(1, repeats); ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    const EpochResult res = runner.run(data, fs, initial_guess, 1);
    const auto t1 = std::chrono::steady_clock::now();
    (void)res;
    best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
  }
  return best;
}

std::vector<ScalingSample> scaling_probe(const std::vector<HybridModel>& models,
                                         const Dataset& data, const TrainConfig& cfg,
                                         const Vector& initial_guess, int repeats) {
  std::vector<ScalingSample> out;
  for (const HybridModel& m : models) {
    TrainConfig c = cfg;
    c.noise.Q_theta = cfg.noise.Q_theta(0, 0) * Matrix::Identity(m.param_dim(), m.param_dim());
    out.push_back({m.param_dim(), data.size(), epoch_seconds(m, data, c, initial_guess, repeats)});
  }
  return out;
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ConfigError("loglog_slope: need >= 2 paired points");
  const std::size_t n = x.size();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw ConfigError("loglog_slope: values must be positive");
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

}  // namespace hidden_ode
