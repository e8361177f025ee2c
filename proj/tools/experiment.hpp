#pragma once

// Experiment configuration and checkpoint files for the command-line tool.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hidden_ode/benchmarks.hpp"
#include "hidden_ode/recursive_newton.hpp"

namespace hidden_ode::cli {

inline constexpr int kFormatVersion = 1;

/// Physical constants that change the benchmark's true field.
struct SystemConstants {
  double omega = 2.0;
  double hh_current = 10.0;
  CartPoleParams cartpole;
};

struct TrainingSettings {
  int epochs = 20;
  std::uint64_t seed = 0;
  double P_x0 = 1e-2;
  double P_theta0 = 1e2;
  double q_known = 1e-10;
  double q_hidden = 1e-5;
  double q_theta = 1e-2;
  double r_y = 1e-10;
  ParamGain param_gain = ParamGain::kNewton;
  CarryOver carry_over = CarryOver::kEpochStart;
  int ic_iters = 20;
  double ic_tol = 1e-9;
};

struct SimulationSettings {
  std::optional<double> dt;
  std::optional<std::size_t> steps;
  double process_std = 0.0;
  double measurement_std = 0.0;
  std::uint64_t seed = 0;
};

struct ExperimentPaths {
  std::string data;
  std::string checkpoint;
  std::string curve;
  std::string report;
  std::string trajectory;
};

struct ExperimentConfig {
  std::string benchmark = "harmonic_oscillator";
  std::optional<MlpSpec> net;  // benchmark default when empty
  bool measure_all = false;
  SystemConstants system;
  TrainingSettings training;
  SimulationSettings simulation;
  ExperimentPaths paths;

  /// Benchmark defaults with training weights from recommended_training.
  static ExperimentConfig for_benchmark(const std::string& name);

  BenchmarkOptions benchmark_options() const;
  /// Q_x split between known and hidden rows, isotropic Q_theta and R_y.
  TrainConfig train_config(const HybridModel& model) const;
};

std::string to_json(const ExperimentConfig& cfg);
/// Throws ParseError on malformed JSON or a wrong format_version, ConfigError
/// on invalid values.
ExperimentConfig config_from_json(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

struct Checkpoint {
  std::string benchmark;
  /// True for the parameter-free true dynamics (no network).
  bool truth_model = false;
  MlpSpec net;
  FlatWeights weights;
  Vector x0;
  double dt = 0.0;
  bool measure_all = false;
  SystemConstants system;
  TrainingSettings training;
  std::optional<double> final_loss;
};

std::string to_json(const Checkpoint& ck);
Checkpoint checkpoint_from_json(const std::string& text);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// The benchmark description a checkpoint was trained against, with its dt.
BenchmarkSpec checkpoint_benchmark(const Checkpoint& ck);
/// Learner (or truth model) matching the checkpoint.
HybridModel checkpoint_model(const Checkpoint& ck);

std::string read_file(const std::filesystem::path& path);
/// Throws std::runtime_error when the file cannot be written.
void write_file(const std::filesystem::path& path, const std::string& text);

/// Learning-curve CSV: epoch,loss,wall_time_s.
std::string curve_csv(const std::vector<EpochRecord>& curve);

/// Dataset columns followed by xhat_0..xhat_{dx-1}; rows past the end of
/// `estimates` (a diverged rollout) are dropped.
std::string trajectory_csv(const Dataset& data, const std::vector<Vector>& estimates);

}  // namespace hidden_ode::cli
