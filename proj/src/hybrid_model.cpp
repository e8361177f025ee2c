#include "hidden_ode/hybrid_model.hpp"

#include <cmath>
#include <set>
#include <string>

namespace hidden_ode {

namespace {

void check_finite(const Vector& v, const char* what) {
  for (Index i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw NumericalError(std::string(what) + " component " + std::to_string(i) +
                           " is not finite");
    }
  }
}

void check_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw NumericalError(std::string(what) + " has non-finite entries");
}

}  // namespace

SelectionMap::SelectionMap(Index state_dim, std::vector<Index> indices)
    : nx_(state_dim), indices_(std::move(indices)) {
  for (Index i : indices_) {
    if (i < 0 || i >= nx_) throw ConfigError("measured index out of range");
  }
}

Vector SelectionMap::evaluate(const Vector& x) const {
  if (x.size() != nx_) throw ConfigError("measurement map received a state of wrong length");
  Vector y(static_cast<Index>(indices_.size()));
  for (std::size_t k = 0; k < indices_.size(); ++k) y[static_cast<Index>(k)] = x[indices_[k]];
  check_finite(y, "measurement");
  return y;
}

Matrix SelectionMap::jacobian(const Vector& x) const {
  check_finite(x, "state");
  Matrix h = Matrix::Zero(static_cast<Index>(indices_.size()), nx_);
  for (std::size_t k = 0; k < indices_.size(); ++k) h(static_cast<Index>(k), indices_[k]) = 1.0;
  return h;
}

std::shared_ptr<const MeasurementMap> identity_measurement(Index state_dim) {
  std::vector<Index> all(static_cast<std::size_t>(state_dim));
  for (Index i = 0; i < state_dim; ++i) all[static_cast<std::size_t>(i)] = i;
  return std::make_shared<SelectionMap>(state_dim, std::move(all));
}

HiddenSlot make_hidden_slot(MlpSpec net, std::vector<Index> hidden_indices, Index state_dim) {
  HiddenSlot s;
  s.net = std::move(net);
  s.hidden_indices = std::move(hidden_indices);
  for (Index i = 0; i < state_dim; ++i) s.input_indices.push_back(i);
  s.input_offset = Vector::Zero(state_dim);
  s.input_scale = Vector::Ones(state_dim);
  return s;
}

HybridModel::HybridModel(std::shared_ptr<const KnownField> known, std::optional<HiddenSlot> slot,
                         std::shared_ptr<const MeasurementMap> measurement, double dt)
    : known_(std::move(known)),
      slot_(std::move(slot)),
      measurement_(std::move(measurement)),
      dt_(dt) {
  if (!known_ || !measurement_) throw ConfigError("model needs a known field and a measurement map");
  if (!(dt_ >= 0.0) || !std::isfinite(dt_)) throw ConfigError("time step must be finite and >= 0");
  if (measurement_->state_dim() != known_->state_dim()) {
    throw ConfigError("measurement map and known field disagree on the state dimension");
  }
  if (slot_) {
    const Index nx = known_->state_dim();
    slot_->net.validate();
    std::set<Index> seen;
    for (Index i : slot_->hidden_indices) {
      if (i < 0 || i >= nx) throw ConfigError("hidden index " + std::to_string(i) + " out of range");
      if (!seen.insert(i).second) throw ConfigError("hidden indices must be distinct");
    }
    for (Index i : slot_->input_indices) {
      if (i < 0 || i >= nx) throw ConfigError("hidden-slot input index out of range");
    }
    const auto n_in = static_cast<Index>(slot_->input_indices.size());
    if (slot_->input_offset.size() != n_in || slot_->input_scale.size() != n_in) {
      throw ConfigError("hidden-slot input offset/scale length must match its input indices");
    }
    const Index expected_in = n_in + (slot_->feeds_control ? known_->input_dim() : 0);
    if (slot_->net.input_dim() != expected_in) {
      throw ConfigError("hidden-slot network takes " + std::to_string(slot_->net.input_dim()) +
                        " inputs, model provides " + std::to_string(expected_in));
    }
    if (slot_->net.output_dim() != static_cast<Index>(slot_->hidden_indices.size())) {
      throw ConfigError("hidden-slot network must have one output per hidden index");
    }
  }
}

HybridModel HybridModel::with_dt(double dt) const {
  return HybridModel(known_, slot_, measurement_, dt);
}

void HybridModel::check_dims(const Vector& x, const Vector& u, const Vector& theta) const {
  if (x.size() != state_dim()) {
    throw ConfigError("state has " + std::to_string(x.size()) + " entries, model expects " +
                      std::to_string(state_dim()));
  }
  if (u.size() != input_dim()) {
    throw ConfigError("input has " + std::to_string(u.size()) + " entries, model expects " +
                      std::to_string(input_dim()));
  }
  if (theta.size() != param_dim()) {
    throw ConfigError("parameter vector has " + std::to_string(theta.size()) +
                      " entries, model expects " + std::to_string(param_dim()));
  }
}

Vector HybridModel::slot_input(const Vector& x, const Vector& u) const {
  const auto n_in = static_cast<Index>(slot_->input_indices.size());
  Vector in(slot_->net.input_dim());
  for (Index k = 0; k < n_in; ++k) {
    in[k] = slot_->input_scale[k] * (x[slot_->input_indices[k]] - slot_->input_offset[k]);
  }
  if (slot_->feeds_control) in.tail(u.size()) = slot_->control_scale * u;
  return in;
}

Vector HybridModel::eval_field(const Vector& x, const Vector& u, const Vector& theta) const {
  check_dims(x, u, theta);
  Vector dx = known_->evaluate(x, u);
  if (slot_) {
    const Vector a = forward(slot_->net, theta, slot_input(x, u));
    for (std::size_t k = 0; k < slot_->hidden_indices.size(); ++k) {
      dx[slot_->hidden_indices[k]] = a[static_cast<Index>(k)];
    }
  }
  check_finite(dx, "vector field");
  return dx;
}

Vector HybridModel::discrete_step(const Vector& x, const Vector& u, const Vector& theta) const {
  return x + dt_ * eval_field(x, u, theta);
}

Vector HybridModel::measure(const Vector& x) const {
  check_finite(x, "state");
  Vector y = measurement_->evaluate(x);
  check_finite(y, "measurement");
  return y;
}

Matrix HybridModel::jacobian_state(const Vector& x, const Vector& u, const Vector& theta) const {
  check_dims(x, u, theta);
  Matrix df = known_->jacobian(x, u);
  if (slot_) {
    const Matrix da_in = hidden_ode::jacobian_input(slot_->net, theta, slot_input(x, u));
    const auto n_in = static_cast<Index>(slot_->input_indices.size());
    for (std::size_t k = 0; k < slot_->hidden_indices.size(); ++k) {
      const Index row = slot_->hidden_indices[k];
      df.row(row).setZero();
      for (Index c = 0; c < n_in; ++c) {
        df(row, slot_->input_indices[c]) += da_in(static_cast<Index>(k), c) * slot_->input_scale[c];
      }
    }
  }
  Matrix fx = dt_ * df;
  fx.diagonal().array() += 1.0;
  check_finite(fx, "state Jacobian");
  return fx;
}

Matrix HybridModel::hidden_param_jacobian(const Vector& x, const Vector& u,
                                          const Vector& theta) const {
  check_dims(x, u, theta);
  if (!slot_) return Matrix(0, 0);
  Matrix g = dt_ * hidden_ode::jacobian_params(slot_->net, theta, slot_input(x, u));
  check_finite(g, "parameter Jacobian");
  return g;
}

Matrix HybridModel::jacobian_params(const Vector& x, const Vector& u, const Vector& theta) const {
  Matrix f = Matrix::Zero(state_dim(), param_dim());
  if (!slot_) {
    check_dims(x, u, theta);
    return f;
  }
  const Matrix g = hidden_param_jacobian(x, u, theta);
  for (std::size_t k = 0; k < slot_->hidden_indices.size(); ++k) {
    f.row(slot_->hidden_indices[k]) = g.row(static_cast<Index>(k));
  }
  return f;
}

HybridModel::StepLinearization HybridModel::linearize_step(const Vector& x, const Vector& u,
                                                          const Vector& theta) const {
  check_dims(x, u, theta);
  StepLinearization out;
  Vector dx = known_->evaluate(x, u);
  Matrix df = known_->jacobian(x, u);
  if (slot_) {
    const MlpLinearization lin = linearize(slot_->net, theta, slot_input(x, u));
    const auto n_in = static_cast<Index>(slot_->input_indices.size());
    for (std::size_t k = 0; k < slot_->hidden_indices.size(); ++k) {
      const Index row = slot_->hidden_indices[k];
      const auto kk = static_cast<Index>(k);
      dx[row] = lin.output[kk];
      df.row(row).setZero();
      for (Index c = 0; c < n_in; ++c) {
        df(row, slot_->input_indices[c]) += lin.d_input(kk, c) * slot_->input_scale[c];
      }
    }
    out.F_theta_hidden = dt_ * lin.d_params;
  } else {
    out.F_theta_hidden = Matrix(0, 0);
  }
  check_finite(dx, "vector field");
  out.next = x + dt_ * dx;
  out.F_x = dt_ * df;
  out.F_x.diagonal().array() += 1.0;
  check_finite(out.F_x, "state Jacobian");
  check_finite(out.F_theta_hidden, "parameter Jacobian");
  return out;
}

Matrix HybridModel::jacobian_measurement(const Vector& x) const {
  check_finite(x, "state");
  Matrix h = measurement_->jacobian(x);
  check_finite(h, "measurement Jacobian");
  return h;
}

}  // namespace hidden_ode
