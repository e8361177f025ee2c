// hidden_ode: simulate | train | eval | diagnose | sweep
//
// Exit codes: 0 success, 1 runtime or I/O failure, 2 usage or configuration
// error.

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "experiment.hpp"
#include "hidden_ode/evaluation.hpp"

namespace {

using namespace hidden_ode;
using namespace hidden_ode::cli;
using nlohmann::json;

constexpr int kOk = 0;
constexpr int kRuntime = 1;
constexpr int kUsage = 2;

// Flags shared by the commands that build a benchmark.
struct CommonFlags {
  std::string config_path;
  std::string system;
  bool measure_all = false;
};

ExperimentConfig resolve_config(const CommonFlags& f) {
  ExperimentConfig cfg;
  if (!f.config_path.empty()) {
    cfg = load_config(f.config_path);
    if (!f.system.empty() && canonical_benchmark_name(f.system) != cfg.benchmark) {
      cfg.benchmark = canonical_benchmark_name(f.system);
    }
  } else {
    cfg = ExperimentConfig::for_benchmark(f.system.empty() ? "harmonic_oscillator" : f.system);
  }
  if (f.measure_all) cfg.measure_all = true;
  return cfg;
}

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_path, "Experiment config JSON");
  cmd->add_option("--system", f.system,
                  "Benchmark: hh, cartpole, ho, yeast, emps (or canonical names)");
  cmd->add_flag("--measure-all", f.measure_all, "Measure every state");
}

// Training flags that override the config file when given.
struct TrainFlags {
  std::optional<int> epochs;
  std::optional<std::uint64_t> seed;
  std::optional<double> P_x0, P_theta0, q_known, q_hidden, q_theta, r_y;
  std::optional<std::string> param_gain;

  void add(CLI::App* cmd) {
    cmd->add_option("--epochs", epochs, "Training epochs");
    cmd->add_option("--seed", seed, "Weight initialization seed");
    cmd->add_option("--px0", P_x0, "Initial state covariance scale");
    cmd->add_option("--ptheta0", P_theta0, "Initial parameter covariance scale");
    cmd->add_option("--q-known", q_known, "Q_x on rows with known physics");
    cmd->add_option("--q-hidden", q_hidden, "Q_x on hidden-slot rows");
    cmd->add_option("--q-theta", q_theta, "Q_theta scale");
    cmd->add_option("--r-y", r_y, "R_y scale");
    cmd->add_option("--param-gain", param_gain, "newton (default) or literal");
  }
  void apply(TrainingSettings& t) const {
    if (epochs) t.epochs = *epochs;
    if (seed) t.seed = *seed;
    if (P_x0) t.P_x0 = *P_x0;
    if (P_theta0) t.P_theta0 = *P_theta0;
    if (q_known) t.q_known = *q_known;
    if (q_hidden) t.q_hidden = *q_hidden;
    if (q_theta) t.q_theta = *q_theta;
    if (r_y) t.r_y = *r_y;
    if (param_gain) {
      if (*param_gain == "newton") t.param_gain = ParamGain::kNewton;
      else if (*param_gain == "literal") t.param_gain = ParamGain::kLiteral;
      else throw ConfigError("--param-gain must be newton or literal");
    }
  }
};

std::string pick(const std::string& flag, const std::string& fallback, const char* what) {
  const std::string& p = flag.empty() ? fallback : flag;
  if (p.empty()) throw ConfigError(std::string("missing ") + what + " path");
  return p;
}

// Benchmark rebuilt around a dataset: dt and length come from the data and
// its dimensions must match.
BenchmarkSpec benchmark_for_data(const ExperimentConfig& cfg, const Dataset& data) {
  if (data.size() < 2) throw ConfigError("dataset needs at least two rows");
  BenchmarkOptions o = cfg.benchmark_options();
  o.dt = data.dt();
  o.steps = data.size();
  BenchmarkSpec spec = make_benchmark(cfg.benchmark, o);
  if (data.input_dim() != spec.input_dim()) {
    throw ConfigError("dataset has " + std::to_string(data.input_dim()) + " input columns, " +
                      spec.name + " expects " + std::to_string(spec.input_dim()));
  }
  if (data.output_dim() != spec.output_dim()) {
    throw ConfigError("dataset has " + std::to_string(data.output_dim()) +
                      " measurement columns, " + spec.name + " expects " +
                      std::to_string(spec.output_dim()) +
                      (cfg.measure_all ? "" : " (use --measure-all for fully measured data)"));
  }
  if (data.has_states() && data.state_dim() != spec.state_dim()) {
    throw ConfigError("dataset has " + std::to_string(data.state_dim()) + " state columns, " +
                      spec.name + " has " + std::to_string(spec.state_dim()) + " states");
  }
  return spec;
}

// Epoch-1 guess: measured components from y(t_0), the rest from the
// benchmark's declared initial state (reconstruction refines it).
Vector initial_guess_for(const BenchmarkSpec& spec, const Dataset& data) {
  Vector g = spec.initial_guess;
  for (std::size_t k = 0; k < spec.measured_indices.size(); ++k) {
    g[spec.measured_indices[k]] = data.measurements.front()[static_cast<Index>(k)];
  }
  return g;
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
  CommonFlags common;
  std::optional<double> dt;
  std::optional<std::size_t> steps;
  std::optional<std::uint64_t> seed;
  std::optional<double> process_std, measurement_std;
  std::string out;
  std::string oracle_checkpoint;
};

int cmd_simulate(const SimulateArgs& a) {
  ExperimentConfig cfg = resolve_config(a.common);
  if (a.dt) cfg.simulation.dt = *a.dt;
  if (a.steps) cfg.simulation.steps = *a.steps;
  if (a.seed) cfg.simulation.seed = *a.seed;
  if (a.process_std) cfg.simulation.process_std = *a.process_std;
  if (a.measurement_std) cfg.simulation.measurement_std = *a.measurement_std;
  const std::string out = pick(a.out, cfg.paths.data, "--out");

  const BenchmarkSpec spec = make_benchmark(cfg.benchmark, cfg.benchmark_options());
  const Dataset data = simulate_dataset(
      spec, {cfg.simulation.process_std, cfg.simulation.measurement_std}, cfg.simulation.seed);
  write_dataset(data, out);
  std::cout << "wrote " << data.size() << " rows to " << out << " (dt=" << format_double(spec.dt)
            << ")\n";

  if (!a.oracle_checkpoint.empty()) {
    Checkpoint ck;
    ck.benchmark = spec.name;
    ck.truth_model = true;
    ck.x0 = spec.initial_state;
    ck.dt = spec.dt;
    ck.measure_all = cfg.measure_all;
    ck.system = cfg.system;
    write_file(a.oracle_checkpoint, to_json(ck));
    std::cout << "wrote true-dynamics checkpoint to " << a.oracle_checkpoint << "\n";
  }
  return kOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  CommonFlags common;
  TrainFlags train;
  std::string data, checkpoint, curve;
};

int cmd_train(const TrainArgs& a) {
  ExperimentConfig cfg = resolve_config(a.common);
  a.train.apply(cfg.training);
  const std::string data_path = pick(a.data, cfg.paths.data, "--data");
  const std::string ck_path = pick(a.checkpoint, cfg.paths.checkpoint, "--checkpoint");
  const std::string curve_path = a.curve.empty() ? cfg.paths.curve : a.curve;

  const Dataset data = load_dataset(data_path);
  const BenchmarkSpec spec = benchmark_for_data(cfg, data);
  const HybridModel model = make_learner(spec);
  const TrainConfig tc = cfg.train_config(model);

  TrainResult result;
  try {
    result = train(model, data, tc, initial_guess_for(spec, data));
  } catch (const TrainingFailure& f) {
    if (!curve_path.empty()) write_file(curve_path, curve_csv(f.curve()));
    throw;
  }

  Checkpoint ck;
  ck.benchmark = spec.name;
  ck.net = spec.slot.net;
  ck.weights = result.theta;
  ck.x0 = result.x0;
  ck.dt = spec.dt;
  ck.measure_all = cfg.measure_all;
  ck.system = cfg.system;
  ck.training = cfg.training;
  ck.final_loss = result.curve.back().loss;
  write_file(ck_path, to_json(ck));
  if (!curve_path.empty()) write_file(curve_path, curve_csv(result.curve));

  std::cout << "trained " << spec.name << " (d_theta=" << model.param_dim() << ", "
            << data.size() << " samples, " << result.curve.size() << " epochs)\n"
            << "final loss " << format_double(result.curve.back().loss) << "\n"
            << "checkpoint " << ck_path << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  CommonFlags common;
  std::string checkpoint, data, trajectory, report;
};

int cmd_eval(const EvalArgs& a) {
  ExperimentConfig cfg;
  if (!a.common.config_path.empty()) cfg = load_config(a.common.config_path);
  const Checkpoint ck = load_checkpoint(pick(a.checkpoint, cfg.paths.checkpoint, "--checkpoint"));
  if (!a.common.system.empty() && canonical_benchmark_name(a.common.system) != ck.benchmark) {
    throw ConfigError("checkpoint was trained on " + ck.benchmark + ", not " +
                      canonical_benchmark_name(a.common.system));
  }
  const Dataset data = load_dataset(pick(a.data, cfg.paths.data, "--data"));

  ExperimentConfig view;
  view.benchmark = ck.benchmark;
  view.measure_all = ck.measure_all;
  view.system = ck.system;
  if (!ck.truth_model) view.net = ck.net;
  const BenchmarkSpec spec = benchmark_for_data(view, data);
  const HybridModel model = ck.truth_model ? make_truth_model(spec) : make_learner(spec);
  if (std::abs(data.dt() - ck.dt) > 1e-9 * ck.dt) {
    std::cerr << "note: data dt " << format_double(data.dt()) << " differs from training dt "
              << format_double(ck.dt) << "\n";
  }

  json report = {{"benchmark", spec.name}, {"samples", data.size()}};
  json hidden = json::array();
  for (Index h : spec.hidden_indices) hidden.push_back(h);
  report["hidden_indices"] = hidden;

  int code = kOk;
  std::vector<Vector> states;
  try {
    const RolloutResult r = evaluate_rollout(model, ck.truth_model ? Vector() : ck.weights, ck.x0,
                                             data, spec.hidden_indices);
    states = r.states;
    if (r.has_metrics) {
      json per = json::array();
      for (Index k = 0; k < r.per_state_nrmse.size(); ++k) per.push_back(r.per_state_nrmse[k]);
      report["per_state_nrmse"] = per;
      report["overall_nrmse"] = r.overall_nrmse;
      report["hidden_nrmse"] = r.hidden_nrmse;
    } else {
      report["note"] = "dataset has no ground-truth states; nRMSE omitted";
    }
  } catch (const RolloutError& e) {
    states = e.partial();
    report["diverged_at_step"] = e.step();
    report["error"] = e.what();
    code = kRuntime;
  }

  const std::string traj = a.trajectory.empty() ? cfg.paths.trajectory : a.trajectory;
  const std::string rep = a.report.empty() ? cfg.paths.report : a.report;
  if (!traj.empty()) write_file(traj, trajectory_csv(data, states));
  const std::string text = report.dump(2) + "\n";
  if (!rep.empty()) write_file(rep, text);
  std::cout << text;
  return code;
}

// ---------------------------------------------------------------------------

struct DiagnoseArgs {
  CommonFlags common;
  bool json_out = false;
  std::uint64_t seed = 0;
};

int cmd_diagnose(const DiagnoseArgs& a) {
  const ExperimentConfig cfg = resolve_config(a.common);
  const BenchmarkSpec spec = make_benchmark(cfg.benchmark, cfg.benchmark_options());
  const HybridModel model = make_learner(spec);
  const TrainConfig tc = cfg.train_config(model);
  const Vector theta = init_params(spec.slot.net, a.seed);
  const Vector u = spec.controller ? spec.controller(spec.initial_state, 0.0)
                                   : Vector::Zero(spec.input_dim());
  const Matrix P = tc.P_theta0_scale * Matrix::Identity(model.param_dim(), model.param_dim());
  const JointGainDiagnostic d =
      joint_gain_diagnostic(model, spec.initial_state, u, theta, tc.noise, P);
  const bool vanishes = d.max_abs_entry == 0.0;

  if (a.json_out) {
    json j = {{"benchmark", spec.name},
              {"measure_all", cfg.measure_all},
              {"product_rows", d.product.rows()},
              {"product_cols", d.product.cols()},
              {"max_abs_entry", d.max_abs_entry},
              {"joint_gain_max_abs", d.joint_gain_max},
              {"alternating_gain_max_abs", d.alternating_gain_max},
              {"vanishing", vanishes}};
    std::cout << j.dump(2) << "\n";
  } else {
    std::cout << "benchmark " << spec.name << (cfg.measure_all ? " (all states measured)" : "")
              << "\n"
              << "max |F_theta^T H^T|     " << format_double(d.max_abs_entry) << "\n"
              << "max |joint gain|        " << format_double(d.joint_gain_max) << "\n"
              << "max |alternating gain|  " << format_double(d.alternating_gain_max) << "\n"
              << (vanishes ? "joint parameter gain vanishes\n"
                           : "joint parameter gain does not vanish\n");
  }
  return vanishes ? kOk : kRuntime;
}

// ---------------------------------------------------------------------------

struct SweepArgs {
  CommonFlags common;
  TrainFlags train;
  std::string data;
  std::vector<std::uint64_t> seeds;
  std::string out;
};

unsigned sweep_threads(std::size_t jobs) {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("HIDDEN_ODE_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v < 1) throw ConfigError("HIDDEN_ODE_THREADS must be a positive integer");
    n = static_cast<unsigned>(v);
  }
  return static_cast<unsigned>(std::min<std::size_t>(n, jobs));
}

int cmd_sweep(const SweepArgs& a) {
  ExperimentConfig cfg = resolve_config(a.common);
  a.train.apply(cfg.training);
  if (a.seeds.empty()) throw ConfigError("--seeds needs at least one value");

  Dataset data;
  if (!a.data.empty() || !cfg.paths.data.empty()) {
    data = load_dataset(a.data.empty() ? cfg.paths.data : a.data);
  } else {
    const BenchmarkSpec gen = make_benchmark(cfg.benchmark, cfg.benchmark_options());
    data = simulate_dataset(gen, {cfg.simulation.process_std, cfg.simulation.measurement_std},
                            cfg.simulation.seed);
  }
  const BenchmarkSpec spec = benchmark_for_data(cfg, data);
  const HybridModel model = make_learner(spec);
  const Vector guess = initial_guess_for(spec, data);

  struct Row {
    bool ok = false;
    double final_loss = 0.0;
    double overall = 0.0;
    double hidden = 0.0;
    bool metrics = false;
    std::string error;
  };
  std::vector<Row> rows(a.seeds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < a.seeds.size(); k = next++) {
      Row& row = rows[k];
      try {
        TrainingSettings t = cfg.training;
        t.seed = a.seeds[k];
        ExperimentConfig local = cfg;
        local.training = t;
        const TrainResult r = train(model, data, local.train_config(model), guess);
        row.final_loss = r.curve.back().loss;
        const RolloutResult ev = evaluate_rollout(model, r.theta, r.x0, data, spec.hidden_indices);
        row.metrics = ev.has_metrics;
        row.overall = ev.overall_nrmse;
        row.hidden = ev.hidden_nrmse;
        row.ok = true;
      } catch (const std::exception& e) {
        row.error = e.what();
      }
    }
  };
  const unsigned threads = sweep_threads(a.seeds.size());
  std::vector<std::thread> pool;
  for (unsigned i = 1; i < threads; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  std::string csv = "seed,status,final_loss,overall_nrmse,hidden_nrmse\n";
  bool all_ok = true;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const Row& r = rows[k];
    all_ok = all_ok && r.ok;
    csv += std::to_string(a.seeds[k]) + "," + (r.ok ? "ok" : "failed") + ",";
    csv += r.ok ? format_double(r.final_loss) : "";
    csv += ",";
    csv += r.ok && r.metrics ? format_double(r.overall) : "";
    csv += ",";
    csv += r.ok && r.metrics ? format_double(r.hidden) : "";
    csv += "\n";
    if (!r.ok) std::cerr << "seed " << a.seeds[k] << ": " << r.error << "\n";
  }
  if (!a.out.empty()) write_file(a.out, csv);
  std::cout << csv;
  return all_ok ? kOk : kRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hybrid neural ODE training with alternating recursive Newton updates"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "Generate a dataset from a benchmark's true dynamics");
  add_common(s, sim.common);
  s->add_option("--dt", sim.dt, "Time step in seconds");
  s->add_option("--steps", sim.steps, "Number of samples");
  s->add_option("--seed", sim.seed, "Noise seed");
  s->add_option("--process-noise", sim.process_std, "Process noise standard deviation");
  s->add_option("--measurement-noise", sim.measurement_std, "Measurement noise standard deviation");
  s->add_option("--out", sim.out, "Dataset CSV to write");
  s->add_option("--oracle-checkpoint", sim.oracle_checkpoint,
                "Also write a checkpoint of the true dynamics");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train the hidden slot on a dataset");
  add_common(t, tr.common);
  tr.train.add(t);
  t->add_option("--data", tr.data, "Dataset CSV");
  t->add_option("--checkpoint", tr.checkpoint, "Checkpoint JSON to write");
  t->add_option("--curve", tr.curve, "Learning-curve CSV to write");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Roll out a checkpoint and score it against a dataset");
  e->add_option("--config", ev.common.config_path, "Experiment config JSON");
  e->add_option("--system", ev.common.system, "Expected benchmark (checked against checkpoint)");
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint JSON");
  e->add_option("--data", ev.data, "Dataset CSV");
  e->add_option("--trajectory", ev.trajectory, "Trajectory CSV to write");
  e->add_option("--report", ev.report, "Report JSON to write");

  DiagnoseArgs dg;
  auto* d = app.add_subcommand("diagnose", "Joint-EKF parameter gain versus the alternating gain");
  add_common(d, dg.common);
  d->add_flag("--json", dg.json_out, "Print JSON");
  d->add_option("--seed", dg.seed, "Weight initialization seed");

  SweepArgs sw;
  auto* w = app.add_subcommand("sweep", "Train over several seeds in parallel");
  add_common(w, sw.common);
  sw.train.add(w);
  w->add_option("--data", sw.data, "Dataset CSV (simulated when omitted)");
  w->add_option("--seeds", sw.seeds, "Seeds to train")->delimiter(',');
  w->add_option("--out", sw.out, "Summary CSV to write");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*s) return cmd_simulate(sim);
    if (*t) return cmd_train(tr);
    if (*e) return cmd_eval(ev);
    if (*d) return cmd_diagnose(dg);
    if (*w) return cmd_sweep(sw);
  } catch (const ConfigError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kUsage;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}
