#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "hidden_ode/linalg.hpp"

namespace hidden_ode {

/// Uniformly sampled record of inputs and measurements.
///
/// Row i holds t_i, u(t_i) and y(t_i). Ground-truth states are optional and
/// only ever used for evaluation.
struct Dataset {
  std::vector<double> times;
  std::vector<Vector> inputs;
  std::vector<Vector> measurements;
  std::vector<Vector> states;  // empty when ground truth is unavailable

  std::size_t size() const { return times.size(); }
  bool empty() const { return times.empty(); }
  bool has_states() const { return !states.empty(); }
  Index input_dim() const { return inputs.empty() ? 0 : inputs.front().size(); }
  Index output_dim() const { return measurements.empty() ? 0 : measurements.front().size(); }
  Index state_dim() const { return states.empty() ? 0 : states.front().size(); }
  /// t_1 - t_0, or 0 for fewer than two samples.
  double dt() const { return times.size() < 2 ? 0.0 : times[1] - times[0]; }

  /// Throws ConfigError on ragged rows or non-uniform spacing beyond
  /// `rel_tol` (relative to dt).
  void validate(double rel_tol = 1e-9) const;
};

/// CSV with header t,u_0..,y_0..[,x_0..]; values written with 17
/// significant digits, LF line endings.
void write_dataset(const Dataset& data, const std::filesystem::path& path);
std::string dataset_to_csv(const Dataset& data);

/// Parses the CSV contract. Throws ParseError naming the line or the missing
/// column, and ParseError for non-uniform time spacing beyond 1e-9 relative.
Dataset load_dataset(const std::filesystem::path& path);
Dataset parse_dataset(const std::string& text);

/// Formats a double with 17 significant digits (round-trip exact).
std::string format_double(double v);

}  // namespace hidden_ode
