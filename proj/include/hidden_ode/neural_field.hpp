#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "hidden_ode/linalg.hpp"

namespace hidden_ode {

enum class Activation { kElu, kTanh, kSigmoid, kLinear };

std::string_view to_string(Activation a);
/// Throws ConfigError for unknown names.
Activation activation_from_string(std::string_view name);

/// Layer-wise description of a feed-forward network.
///
/// `widths` holds the input width followed by each layer's output width, so a
/// network with L layers has L+1 widths and L activations. ELU uses alpha = 1.
struct MlpSpec {
  std::vector<Index> widths;
  std::vector<Activation> activations;

  Index input_dim() const { return widths.front(); }
  Index output_dim() const { return widths.back(); }
  Index num_layers() const { return static_cast<Index>(activations.size()); }
  /// sum over layers of out * in + out.
  Index param_count() const;
  /// Throws ConfigError unless there is at least one layer, every width is
  /// positive and there is one activation per layer.
  void validate() const;

  bool operator==(const MlpSpec&) const = default;
};

/// Flattened parameters. Order: layer by layer, the weight matrix (out x in)
/// row-major, then the bias vector.
using FlatWeights = Vector;

/// Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
/// Deterministic for a given seed (see Rng).
FlatWeights init_params(const MlpSpec& spec, std::uint64_t seed);

Vector forward(const MlpSpec& spec, const FlatWeights& w, const Vector& input);

/// d output / d input, shape out x in.
Matrix jacobian_input(const MlpSpec& spec, const FlatWeights& w, const Vector& input);

/// d output / d w in flattening order, shape out x param_count.
Matrix jacobian_params(const MlpSpec& spec, const FlatWeights& w, const Vector& input);

/// Output together with both Jacobians from a single forward pass.
struct MlpLinearization {
  Vector output;
  Matrix d_input;
  Matrix d_params;
};
MlpLinearization linearize(const MlpSpec& spec, const FlatWeights& w, const Vector& input);

/// JSON array of the weights at round-trip precision.
std::string serialize(const FlatWeights& w);
/// Inverse of serialize. Throws ParseError (with byte offset in the message)
/// on malformed text.
FlatWeights deserialize(std::string_view text);

}  // namespace hidden_ode
