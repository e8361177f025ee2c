#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hidden_ode/dual.hpp"
#include "hidden_ode/linalg.hpp"
#include "hidden_ode/neural_field.hpp"

namespace hidden_ode {

/// Known part of a continuous-time vector field, x' = f(x, u).
///
/// Components later replaced by a hidden slot may return anything finite;
/// HybridModel overwrites them.
class KnownField {
 public:
  virtual ~KnownField() = default;
  virtual Index state_dim() const = 0;
  virtual Index input_dim() const = 0;
  virtual Vector evaluate(const Vector& x, const Vector& u) const = 0;
  /// Exact d f / d x, state_dim x state_dim.
  virtual Matrix jacobian(const Vector& x, const Vector& u) const = 0;
};

/// Measurement map y = h(x) with its exact Jacobian.
class MeasurementMap {
 public:
  virtual ~MeasurementMap() = default;
  virtual Index state_dim() const = 0;
  virtual Index output_dim() const = 0;
  virtual Vector evaluate(const Vector& x) const = 0;
  virtual Matrix jacobian(const Vector& x) const = 0;
};

/// Adapts a functor templated on its scalar type,
///   template <class T> void operator()(std::span<const T> x,
///                                      std::span<const double> u,
///                                      std::span<T> dx) const;
/// into a KnownField whose Jacobian comes from forward-mode dual numbers.
template <class Fn>
class AutoDiffField final : public KnownField {
 public:
  AutoDiffField(Index state_dim, Index input_dim, Fn fn)
      : nx_(state_dim), nu_(input_dim), fn_(std::move(fn)) {
    if (nx_ > static_cast<Index>(kMaxDualDim)) {
      throw ConfigError("autodiff fields support at most " + std::to_string(kMaxDualDim) +
                        " states");
    }
  }

  Index state_dim() const override { return nx_; }
  Index input_dim() const override { return nu_; }

  Vector evaluate(const Vector& x, const Vector& u) const override {
    Vector out(nx_);
    fn_(std::span<const double>(x.data(), x.size()), std::span<const double>(u.data(), u.size()),
        std::span<double>(out.data(), out.size()));
    return out;
  }

  Matrix jacobian(const Vector& x, const Vector& u) const override {
    std::vector<Dual> xd(nx_), out(nx_);
    for (Index i = 0; i < nx_; ++i) xd[i] = Dual::variable(x[i], static_cast<std::size_t>(i));
    fn_(std::span<const Dual>(xd), std::span<const double>(u.data(), u.size()),
        std::span<Dual>(out));
    Matrix j(nx_, nx_);
    for (Index r = 0; r < nx_; ++r)
      for (Index c = 0; c < nx_; ++c) j(r, c) = out[r].d[c];
    return j;
  }

 private:
  Index nx_;
  Index nu_;
  Fn fn_;
};

template <class Fn>
std::shared_ptr<const KnownField> make_field(Index state_dim, Index input_dim, Fn fn) {
  return std::make_shared<AutoDiffField<Fn>>(state_dim, input_dim, std::move(fn));
}

/// Measurement counterpart of AutoDiffField; the functor has the form
///   template <class T> void operator()(std::span<const T> x, std::span<T> y) const;
template <class Fn>
class AutoDiffMeasurement final : public MeasurementMap {
 public:
  AutoDiffMeasurement(Index state_dim, Index output_dim, Fn fn)
      : nx_(state_dim), ny_(output_dim), fn_(std::move(fn)) {
    if (nx_ > static_cast<Index>(kMaxDualDim)) {
      throw ConfigError("autodiff measurement maps support at most " +
                        std::to_string(kMaxDualDim) + " states");
    }
  }
  Index state_dim() const override { return nx_; }
  Index output_dim() const override { return ny_; }
  Vector evaluate(const Vector& x) const override {
    Vector y(ny_);
    fn_(std::span<const double>(x.data(), x.size()), std::span<double>(y.data(), y.size()));
    return y;
  }
  Matrix jacobian(const Vector& x) const override {
    std::vector<Dual> xd(nx_), y(ny_);
    for (Index i = 0; i < nx_; ++i) xd[i] = Dual::variable(x[i], static_cast<std::size_t>(i));
    fn_(std::span<const Dual>(xd), std::span<Dual>(y));
    Matrix j(ny_, nx_);
    for (Index r = 0; r < ny_; ++r)
      for (Index c = 0; c < nx_; ++c) j(r, c) = y[r].d[c];
    return j;
  }

 private:
  Index nx_;
  Index ny_;
  Fn fn_;
};

template <class Fn>
std::shared_ptr<const MeasurementMap> make_measurement(Index state_dim, Index output_dim, Fn fn) {
  return std::make_shared<AutoDiffMeasurement<Fn>>(state_dim, output_dim, std::move(fn));
}

/// y = x[indices].
class SelectionMap final : public MeasurementMap {
 public:
  SelectionMap(Index state_dim, std::vector<Index> indices);
  Index state_dim() const override { return nx_; }
  Index output_dim() const override { return static_cast<Index>(indices_.size()); }
  Vector evaluate(const Vector& x) const override;
  Matrix jacobian(const Vector& x) const override;
  const std::vector<Index>& indices() const { return indices_; }

 private:
  Index nx_;
  std::vector<Index> indices_;
};

std::shared_ptr<const MeasurementMap> identity_measurement(Index state_dim);

/// Neural network a(x, theta) that supplies whole derivative components.
///
/// The network input is scale .* (x[input_indices] - offset), optionally
/// followed by control_scale * u when `feeds_control` is set. Its outputs
/// become the derivatives of the states listed in `hidden_indices`.
struct HiddenSlot {
  MlpSpec net;
  std::vector<Index> hidden_indices;
  std::vector<Index> input_indices;
  Vector input_offset;
  Vector input_scale;
  bool feeds_control = false;
  double control_scale = 1.0;

  Index param_count() const { return net.param_count(); }
};

/// Convenience: all states as inputs with unit scaling.
HiddenSlot make_hidden_slot(MlpSpec net, std::vector<Index> hidden_indices, Index state_dim);

/// Known physics with a neural hidden slot, its Euler discretization
///   f_o(x, u, theta) = x + dt * f(x, u, a(x, theta)),
/// and a measurement map. All evaluations are deterministic.
class HybridModel {
 public:
  /// `slot` may be empty (no hidden dynamics, zero parameters).
  HybridModel(std::shared_ptr<const KnownField> known, std::optional<HiddenSlot> slot,
              std::shared_ptr<const MeasurementMap> measurement, double dt);

  Index state_dim() const { return known_->state_dim(); }
  Index input_dim() const { return known_->input_dim(); }
  Index output_dim() const { return measurement_->output_dim(); }
  Index param_dim() const { return slot_ ? slot_->param_count() : 0; }
  double dt() const { return dt_; }
  const std::optional<HiddenSlot>& slot() const { return slot_; }
  const KnownField& known_field() const { return *known_; }
  const MeasurementMap& measurement_map() const { return *measurement_; }
  std::shared_ptr<const KnownField> known_field_ptr() const { return known_; }
  std::shared_ptr<const MeasurementMap> measurement_ptr() const { return measurement_; }
  /// Copy with a different step size; dt = 0 is accepted here for tests.
  HybridModel with_dt(double dt) const;

  Vector eval_field(const Vector& x, const Vector& u, const Vector& theta) const;
  Vector discrete_step(const Vector& x, const Vector& u, const Vector& theta) const;
  Vector measure(const Vector& x) const;
  /// d discrete_step / d x = I + dt * df/dx.
  Matrix jacobian_state(const Vector& x, const Vector& u, const Vector& theta) const;
  /// d discrete_step / d theta. Rows outside hidden_indices are exactly zero.
  Matrix jacobian_params(const Vector& x, const Vector& u, const Vector& theta) const;
  Matrix jacobian_measurement(const Vector& x) const;

  /// Hidden-slot rows only: dt * d a / d theta, one row per hidden index.
  /// Equals jacobian_params restricted to those rows.
  Matrix hidden_param_jacobian(const Vector& x, const Vector& u, const Vector& theta) const;

  /// discrete_step, jacobian_state and hidden_param_jacobian from one
  /// network pass.
  struct StepLinearization {
    Vector next;
    Matrix F_x;
    Matrix F_theta_hidden;
  };
  StepLinearization linearize_step(const Vector& x, const Vector& u, const Vector& theta) const;

 private:
  void check_dims(const Vector& x, const Vector& u, const Vector& theta) const;
  Vector slot_input(const Vector& x, const Vector& u) const;

  std::shared_ptr<const KnownField> known_;
  std::optional<HiddenSlot> slot_;
  std::shared_ptr<const MeasurementMap> measurement_;
  double dt_;
};

}  // namespace hidden_ode
