#include "hidden_ode/neural_field.hpp"

#include <cmath>
#include <string>

#include <json.hpp>

#include "hidden_ode/rng.hpp"

namespace hidden_ode {

namespace {

double activate(Activation a, double z) {
  switch (a) {
    case Activation::kElu:
      return z > 0.0 ? z : std::expm1(z);
    case Activation::kTanh:
      return std::tanh(z);
    case Activation::kSigmoid:
      return 1.0 / (1.0 + std::exp(-z));
    case Activation::kLinear:
      return z;
  }
  return z;
}

// Derivative expressed through the pre-activation z and the activation y.
double activate_prime(Activation a, double z, double y) {
  switch (a) {
    case Activation::kElu:
      return z > 0.0 ? 1.0 : y + 1.0;
    case Activation::kTanh:
      return 1.0 - y * y;
    case Activation::kSigmoid:
      return y * (1.0 - y);
    case Activation::kLinear:
      return 1.0;
  }
  return 1.0;
}

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstWeightMap = Eigen::Map<const RowMajor>;

struct ForwardTrace {
  std::vector<Vector> pre;   // z_l
  std::vector<Vector> post;  // a_l, post[0] is the input
};

void check_shapes(const MlpSpec& spec, const FlatWeights& w, const Vector& input) {
  spec.validate();
  if (w.size() != spec.param_count()) {
    throw ConfigError("weight vector has " + std::to_string(w.size()) +
                      " entries, network expects " + std::to_string(spec.param_count()));
  }
  if (input.size() != spec.input_dim()) {
    throw ConfigError("network input has " + std::to_string(input.size()) +
                      " entries, expected " + std::to_string(spec.input_dim()));
  }
}

ForwardTrace run_forward(const MlpSpec& spec, const FlatWeights& w, const Vector& input) {
  check_shapes(spec, w, input);
  ForwardTrace tr;
  tr.post.push_back(input);
  Index offset = 0;
  for (Index l = 0; l < spec.num_layers(); ++l) {
    const Index in = spec.widths[l];
    const Index out = spec.widths[l + 1];
    ConstWeightMap wm(w.data() + offset, out, in);
    offset += out * in;
    Vector z = wm * tr.post.back() + w.segment(offset, out);
    offset += out;
    Vector y(out);
    for (Index k = 0; k < out; ++k) y[k] = activate(spec.activations[l], z[k]);
    tr.pre.push_back(std::move(z));
    tr.post.push_back(std::move(y));
  }
  const Vector& y = tr.post.back();
  for (Index k = 0; k < y.size(); ++k) {
    if (!std::isfinite(y[k])) {
      throw NumericalError("network output " + std::to_string(k) + " is not finite");
    }
  }
  return tr;
}

// Reverse sweep for every output row. Fills whichever of d_input / d_params
// is non-null.
void backprop(const MlpSpec& spec, const FlatWeights& w, const ForwardTrace& tr,
              Matrix* d_input, Matrix* d_params) {
  const Index layers = spec.num_layers();
  const Index outs = spec.output_dim();
  std::vector<Index> offsets(layers);
  Index offset = 0;
  for (Index l = 0; l < layers; ++l) {
    offsets[l] = offset;
    offset += spec.widths[l + 1] * spec.widths[l] + spec.widths[l + 1];
  }
  if (d_input) d_input->setZero(outs, spec.input_dim());
  if (d_params) d_params->setZero(outs, spec.param_count());

  for (Index row = 0; row < outs; ++row) {
    Vector delta = Vector::Zero(outs);
    delta[row] = 1.0;
    for (Index l = layers - 1; l >= 0; --l) {
      const Index in = spec.widths[l];
      const Index out = spec.widths[l + 1];
      for (Index k = 0; k < out; ++k) {
        delta[k] *= activate_prime(spec.activations[l], tr.pre[l][k], tr.post[l + 1][k]);
      }
      if (d_params) {
        const Vector& a_prev = tr.post[l];
        double* g = d_params->data();
        const Index stride = d_params->rows();  // column-major
        for (Index k = 0; k < out; ++k) {
          if (delta[k] == 0.0) continue;
          for (Index j = 0; j < in; ++j) {
            g[(offsets[l] + k * in + j) * stride + row] = delta[k] * a_prev[j];
          }
          g[(offsets[l] + out * in + k) * stride + row] = delta[k];
        }
      }
      if (l > 0 || d_input) {
        ConstWeightMap wm(w.data() + offsets[l], out, in);
        delta = wm.transpose() * delta;
      }
    }
    if (d_input) d_input->row(row) = delta.transpose();
  }
}

}  // namespace

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::kElu:
      return "elu";
    case Activation::kTanh:
      return "tanh";
    case Activation::kSigmoid:
      return "sigmoid";
    case Activation::kLinear:
      return "linear";
  }
  return "linear";
}

Activation activation_from_string(std::string_view name) {
  if (name == "elu") return Activation::kElu;
  if (name == "tanh") return Activation::kTanh;
  if (name == "sigmoid") return Activation::kSigmoid;
  if (name == "linear") return Activation::kLinear;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

Index MlpSpec::param_count() const {
  Index n = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) n += widths[l + 1] * widths[l] + widths[l + 1];
  return n;
}

void MlpSpec::validate() const {
  if (activations.empty()) throw ConfigError("network needs at least one layer");
  if (widths.size() != activations.size() + 1) {
    throw ConfigError("network has " + std::to_string(widths.size()) + " widths for " +
                      std::to_string(activations.size()) + " layers");
  }
  for (Index wd : widths) {
    if (wd < 1) throw ConfigError("layer widths must be positive");
  }
}

FlatWeights init_params(const MlpSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  FlatWeights w = FlatWeights::Zero(spec.param_count());
  Index offset = 0;
  for (Index l = 0; l < spec.num_layers(); ++l) {
    const Index in = spec.widths[l];
    const Index out = spec.widths[l + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    for (Index k = 0; k < out * in; ++k) w[offset + k] = rng.uniform(-limit, limit);
    offset += out * in + out;
  }
  return w;
}

Vector forward(const MlpSpec& spec, const FlatWeights& w, const Vector& input) {
  return run_forward(spec, w, input).post.back();
}

Matrix jacobian_input(const MlpSpec& spec, const FlatWeights& w, const Vector& input) {
  const ForwardTrace tr = run_forward(spec, w, input);
  Matrix j;
  backprop(spec, w, tr, &j, nullptr);
  return j;
}

Matrix jacobian_params(const MlpSpec& spec, const FlatWeights& w, const Vector& input) {
  const ForwardTrace tr = run_forward(spec, w, input);
  Matrix j;
  backprop(spec, w, tr, nullptr, &j);
  return j;
}

MlpLinearization linearize(const MlpSpec& spec, const FlatWeights& w, const Vector& input) {
  const ForwardTrace tr = run_forward(spec, w, input);
  MlpLinearization lin;
  lin.output = tr.post.back();
  backprop(spec, w, tr, &lin.d_input, &lin.d_params);
  return lin;
}

std::string serialize(const FlatWeights& w) {
  nlohmann::json arr = nlohmann::json::array();
  for (Index k = 0; k < w.size(); ++k) arr.push_back(w[k]);
  return arr.dump();
}

FlatWeights deserialize(std::string_view text) {
  nlohmann::json arr;
  try {
    arr = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("malformed weight payload at byte ") +
                     std::to_string(e.byte) + ": " + e.what());
  }
  if (!arr.is_array()) throw ParseError("weight payload must be a JSON array");
  FlatWeights w(static_cast<Index>(arr.size()));
  for (std::size_t k = 0; k < arr.size(); ++k) {
    if (!arr[k].is_number()) {
      throw ParseError("weight entry " + std::to_string(k) + " is not a number");
    }
    w[static_cast<Index>(k)] = arr[k].get<double>();
  }
  return w;
}

}  // namespace hidden_ode
