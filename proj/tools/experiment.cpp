#include "experiment.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace hidden_ode::cli {

using nlohmann::json;

namespace {

json vector_json(const Vector& v) {
  json a = json::array();
  for (Index k = 0; k < v.size(); ++k) a.push_back(v[k]);
  return a;
}

Vector vector_from(const json& a, const std::string& what) {
  if (!a.is_array()) throw ParseError(what + " must be an array");
  Vector v(static_cast<Index>(a.size()));
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (!a[k].is_number()) throw ParseError(what + "[" + std::to_string(k) + "] is not a number");
    v[static_cast<Index>(k)] = a[k].get<double>();
  }
  return v;
}

json net_json(const MlpSpec& net) {
  json widths = json::array();
  for (Index w : net.widths) widths.push_back(w);
  json acts = json::array();
  for (Activation a : net.activations) acts.push_back(std::string(to_string(a)));
  return {{"widths", widths}, {"activations", acts}};
}

MlpSpec net_from(const json& j) {
  MlpSpec net;
  for (const auto& w : j.at("widths")) net.widths.push_back(w.get<Index>());
  for (const auto& a : j.at("activations")) {
    net.activations.push_back(activation_from_string(a.get<std::string>()));
  }
  net.validate();
  return net;
}

json system_json(const SystemConstants& s) {
  return {{"omega", s.omega},
          {"hh_current", s.hh_current},
          {"cart_mass", s.cartpole.cart_mass},
          {"pole_mass", s.cartpole.pole_mass},
          {"pole_length", s.cartpole.length},
          {"gravity", s.cartpole.gravity}};
}

SystemConstants system_from(const json& j, SystemConstants s) {
  s.omega = j.value("omega", s.omega);
  s.hh_current = j.value("hh_current", s.hh_current);
  s.cartpole.cart_mass = j.value("cart_mass", s.cartpole.cart_mass);
  s.cartpole.pole_mass = j.value("pole_mass", s.cartpole.pole_mass);
  s.cartpole.length = j.value("pole_length", s.cartpole.length);
  s.cartpole.gravity = j.value("gravity", s.cartpole.gravity);
  return s;
}

json training_json(const TrainingSettings& t) {
  return {{"epochs", t.epochs},
          {"seed", t.seed},
          {"P_x0", t.P_x0},
          {"P_theta0", t.P_theta0},
          {"q_known", t.q_known},
          {"q_hidden", t.q_hidden},
          {"q_theta", t.q_theta},
          {"r_y", t.r_y},
          {"param_gain", t.param_gain == ParamGain::kNewton ? "newton" : "literal"},
          {"carry_over", t.carry_over == CarryOver::kEpochStart ? "epoch_start" : "epoch_end"},
          {"ic_iters", t.ic_iters},
          {"ic_tol", t.ic_tol}};
}

TrainingSettings training_from(const json& j, TrainingSettings t) {
  t.epochs = j.value("epochs", t.epochs);
  t.seed = j.value("seed", t.seed);
  t.P_x0 = j.value("P_x0", t.P_x0);
  t.P_theta0 = j.value("P_theta0", t.P_theta0);
  t.q_known = j.value("q_known", t.q_known);
  t.q_hidden = j.value("q_hidden", t.q_hidden);
  t.q_theta = j.value("q_theta", t.q_theta);
  t.r_y = j.value("r_y", t.r_y);
  if (j.contains("param_gain")) {
    const auto g = j.at("param_gain").get<std::string>();
    if (g == "newton") t.param_gain = ParamGain::kNewton;
    else if (g == "literal") t.param_gain = ParamGain::kLiteral;
    else throw ConfigError("param_gain must be 'newton' or 'literal', got '" + g + "'");
  }
  if (j.contains("carry_over")) {
    const auto c = j.at("carry_over").get<std::string>();
    if (c == "epoch_start") t.carry_over = CarryOver::kEpochStart;
    else if (c == "epoch_end") t.carry_over = CarryOver::kEpochEnd;
    else throw ConfigError("carry_over must be 'epoch_start' or 'epoch_end', got '" + c + "'");
  }
  t.ic_iters = j.value("ic_iters", t.ic_iters);
  t.ic_tol = j.value("ic_tol", t.ic_tol);
  return t;
}

json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError("malformed " + what + " at byte " + std::to_string(e.byte) + ": " + e.what());
  }
}

void check_version(const json& j, const std::string& what) {
  if (!j.is_object()) throw ParseError(what + " must be a JSON object");
  if (!j.contains("format_version")) throw ParseError(what + " lacks format_version");
  const int v = j.at("format_version").get<int>();
  if (v != kFormatVersion) {
    throw ParseError(what + " has format_version " + std::to_string(v) + ", expected " +
                     std::to_string(kFormatVersion));
  }
}

// Wraps nlohmann type errors (wrong field types) as parse errors.
template <class Fn>
auto guarded(const std::string& what, Fn fn) {
  try {
    return fn();
  } catch (const json::exception& e) {
    throw ParseError("invalid " + what + ": " + e.what());
  }
}

}  // namespace

ExperimentConfig ExperimentConfig::for_benchmark(const std::string& name) {
  ExperimentConfig cfg;
  cfg.benchmark = canonical_benchmark_name(name);
  const TrainingDefaults d = recommended_training(cfg.benchmark);
  cfg.training.epochs = d.epochs;
  cfg.training.P_x0 = d.P_x0;
  cfg.training.P_theta0 = d.P_theta0;
  cfg.training.q_known = d.q_known;
  cfg.training.q_hidden = d.q_hidden;
  cfg.training.q_theta = d.q_theta;
  cfg.training.r_y = d.r_y;
  return cfg;
}

BenchmarkOptions ExperimentConfig::benchmark_options() const {
  BenchmarkOptions o;
  o.dt = simulation.dt;
  o.steps = simulation.steps;
  o.net = net;
  o.omega = system.omega;
  o.hh_current = system.hh_current;
  o.cartpole = system.cartpole;
  o.measure_all = measure_all;
  return o;
}

TrainConfig ExperimentConfig::train_config(const HybridModel& model) const {
  TrainConfig c;
  c.epochs = training.epochs;
  c.seed = training.seed;
  c.P_x0_scale = training.P_x0;
  c.P_theta0_scale = training.P_theta0;
  c.noise = NoiseConfig::split(model, training.q_known, training.q_hidden, training.q_theta,
                               training.r_y);
  c.param_gain = training.param_gain;
  c.carry_over = training.carry_over;
  c.ic_solver.max_iters = training.ic_iters;
  c.ic_solver.tol = training.ic_tol;
  c.validate();
  c.noise.validate(model);
  return c;
}

std::string to_json(const ExperimentConfig& cfg) {
  json sim = {{"process_std", cfg.simulation.process_std},
              {"measurement_std", cfg.simulation.measurement_std},
              {"seed", cfg.simulation.seed}};
  if (cfg.simulation.dt) sim["dt"] = *cfg.simulation.dt;
  if (cfg.simulation.steps) sim["steps"] = *cfg.simulation.steps;
  json j = {{"format_version", kFormatVersion},
            {"benchmark", cfg.benchmark},
            {"measure_all", cfg.measure_all},
            {"system", system_json(cfg.system)},
            {"training", training_json(cfg.training)},
            {"simulation", sim},
            {"paths",
             {{"data", cfg.paths.data},
              {"checkpoint", cfg.paths.checkpoint},
              {"curve", cfg.paths.curve},
              {"report", cfg.paths.report},
              {"trajectory", cfg.paths.trajectory}}}};
  if (cfg.net) j["net"] = net_json(*cfg.net);
  return j.dump(2) + "\n";
}

ExperimentConfig config_from_json(const std::string& text) {
  const json j = parse_json(text, "experiment config");
  check_version(j, "experiment config");
  return guarded("experiment config", [&] {
    ExperimentConfig cfg = ExperimentConfig::for_benchmark(j.value("benchmark", "harmonic_oscillator"));
    if (j.contains("net")) cfg.net = net_from(j.at("net"));
    cfg.measure_all = j.value("measure_all", false);
    if (j.contains("system")) cfg.system = system_from(j.at("system"), cfg.system);
    if (j.contains("training")) cfg.training = training_from(j.at("training"), cfg.training);
    if (j.contains("simulation")) {
      const json& s = j.at("simulation");
      if (s.contains("dt")) cfg.simulation.dt = s.at("dt").get<double>();
      if (s.contains("steps")) cfg.simulation.steps = s.at("steps").get<std::size_t>();
      cfg.simulation.process_std = s.value("process_std", 0.0);
      cfg.simulation.measurement_std = s.value("measurement_std", 0.0);
      cfg.simulation.seed = s.value("seed", std::uint64_t{0});
    }
    if (j.contains("paths")) {
      const json& p = j.at("paths");
      cfg.paths.data = p.value("data", "");
      cfg.paths.checkpoint = p.value("checkpoint", "");
      cfg.paths.curve = p.value("curve", "");
      cfg.paths.report = p.value("report", "");
      cfg.paths.trajectory = p.value("trajectory", "");
    }
    return cfg;
  });
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  return config_from_json(read_file(path));
}

std::string to_json(const Checkpoint& ck) {
  json training = training_json(ck.training);
  if (ck.final_loss) training["final_loss"] = *ck.final_loss;
  json j = {{"format_version", kFormatVersion},
            {"benchmark", ck.benchmark},
            {"model", ck.truth_model ? "truth" : "hybrid"},
            {"dt", ck.dt},
            {"measure_all", ck.measure_all},
            {"system", system_json(ck.system)},
            {"x0", vector_json(ck.x0)},
            {"training", training}};
  if (!ck.truth_model) {
    j["net"] = net_json(ck.net);
    j["weights"] = json::parse(serialize(ck.weights));
  }
  return j.dump(2) + "\n";
}

Checkpoint checkpoint_from_json(const std::string& text) {
  const json j = parse_json(text, "checkpoint");
  check_version(j, "checkpoint");
  return guarded("checkpoint", [&] {
    Checkpoint ck;
    ck.benchmark = canonical_benchmark_name(j.at("benchmark").get<std::string>());
    const std::string model = j.value("model", "hybrid");
    if (model != "hybrid" && model != "truth") {
      throw ParseError("checkpoint model must be 'hybrid' or 'truth', got '" + model + "'");
    }
    ck.truth_model = model == "truth";
    ck.dt = j.at("dt").get<double>();
    ck.measure_all = j.value("measure_all", false);
    if (j.contains("system")) ck.system = system_from(j.at("system"), ck.system);
    ck.x0 = vector_from(j.at("x0"), "x0");
    if (j.contains("training")) {
      ck.training = training_from(j.at("training"), ck.training);
      if (j.at("training").contains("final_loss")) {
        ck.final_loss = j.at("training").at("final_loss").get<double>();
      }
    }
    if (!ck.truth_model) {
      ck.net = net_from(j.at("net"));
      ck.weights = deserialize(j.at("weights").dump());
      if (ck.weights.size() != ck.net.param_count()) {
        throw ParseError("checkpoint has " + std::to_string(ck.weights.size()) +
                         " weights, its network needs " + std::to_string(ck.net.param_count()));
      }
    }
    return ck;
  });
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_json(read_file(path));
}

BenchmarkSpec checkpoint_benchmark(const Checkpoint& ck) {
  BenchmarkOptions o;
  o.dt = ck.dt;
  if (!ck.truth_model) o.net = ck.net;
  o.omega = ck.system.omega;
  o.hh_current = ck.system.hh_current;
  o.cartpole = ck.system.cartpole;
  o.measure_all = ck.measure_all;
  BenchmarkSpec spec = make_benchmark(ck.benchmark, o);
  if (ck.x0.size() != spec.state_dim()) {
    throw ConfigError("checkpoint x0 has " + std::to_string(ck.x0.size()) +
                      " components, benchmark " + spec.name + " has " +
                      std::to_string(spec.state_dim()));
  }
  return spec;
}

HybridModel checkpoint_model(const Checkpoint& ck) {
  const BenchmarkSpec spec = checkpoint_benchmark(ck);
  return ck.truth_model ? make_truth_model(spec) : make_learner(spec);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write to " + path.string() + " failed");
}

std::string curve_csv(const std::vector<EpochRecord>& curve) {
  std::string s = "epoch,loss,wall_time_s\n";
  for (const auto& r : curve) {
    s += std::to_string(r.epoch) + "," + format_double(r.loss) + "," + format_double(r.wall_time) +
         "\n";
  }
  return s;
}

std::string trajectory_csv(const Dataset& data, const std::vector<Vector>& estimates) {
  Dataset head = data;
  const std::size_t n = std::min(data.size(), estimates.size());
  head.times.resize(n);
  head.inputs.resize(n);
  head.measurements.resize(n);
  if (head.has_states()) head.states.resize(n);
  std::istringstream base(dataset_to_csv(head));
  const Index dx = estimates.empty() ? 0 : estimates.front().size();
  std::string out;
  std::string line;
  std::size_t row = 0;
  while (std::getline(base, line)) {
    out += line;
    if (row == 0) {
      for (Index k = 0; k < dx; ++k) out += ",xhat_" + std::to_string(k);
    } else {
      for (Index k = 0; k < dx; ++k) out += "," + format_double(estimates[row - 1][k]);
    }
    out += "\n";
    ++row;
  }
  return out;
}

}  // namespace hidden_ode::cli
