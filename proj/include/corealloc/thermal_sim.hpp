#pragma once

// Lumped RC multi-core thermal/energy simulator. Each core i obeys
//
//   C_i dT_i/dt = P_i - (T_i - ambient) / R_i - sum_j g_ij (T_i - T_j)
//
// integrated with forward Euler. g is a symmetric conductance matrix with a
// zero diagonal; its block structure plants the inter-core correlation that
// the filter stage later recovers. Defaults favour clear correlation
// structure over physical fidelity.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "corealloc/correlation.hpp"
#include "corealloc/error.hpp"
#include "corealloc/keyvalue.hpp"
#include "corealloc/random.hpp"
#include "corealloc/trace.hpp"

namespace corealloc {

struct SimConfig {
  std::size_t cores = 0;
  double ambient = 25.0;
  /// W/degC between core pairs; symmetric, zero diagonal.
  Eigen::MatrixXd coupling;
  std::vector<double> thermal_resistance;  // degC/W to ambient
  std::vector<double> heat_capacity;       // J/degC
  std::vector<double> idle_power;          // W
  std::vector<double> max_power;           // W
  /// Peak utilisation of system activity per core, in [0, 1]. The actual
  /// level is redrawn uniformly in [0, peak] every background_period seconds.
  std::vector<double> background_util;
  double background_period = 2.0;
  /// One draw per period scales every core's peak instead of a draw per core,
  /// so background-loaded cores fluctuate together.
  bool shared_background = false;
  double throttle_temp = 100.0;
  double cooldown_temp = 70.0;
  double dt = 0.1;
  /// Std-dev (degC) of white noise added to recorded sensor readings.
  double sensor_noise = 0.0;
  std::uint64_t seed = 0;

  /// Uniform cores with no coupling.
  static SimConfig uniform(std::size_t m) {
    SimConfig c;
    c.cores = m;
    c.coupling = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
    c.thermal_resistance.assign(m, 2.0);
    c.heat_capacity.assign(m, 4.0);
    c.idle_power.assign(m, 1.0);
    c.max_power.assign(m, 15.0);
    c.background_util.assign(m, 0.0);
    return c;
  }

  /// Seven cores: core 0 carries system load; clusters {1, 2, 3} and
  /// {4, 5, 6} each hold a tightly coupled pair under shared background load
  /// plus one quiet core loosely attached to the pair. No conductance crosses
  /// clusters. The quiet cores 1 and 4 are the least correlated and coolest.
  static SimConfig two_cluster() {
    auto c = uniform(7);
    c.background_util[0] = 0.8;
    for (std::size_t quiet : {1, 4}) {
      c.set_coupling(quiet, quiet + 1, 0.1);
      c.set_coupling(quiet, quiet + 2, 0.1);
      c.set_coupling(quiet + 1, quiet + 2, 0.8);
      c.background_util[quiet + 1] = 0.8;
      c.background_util[quiet + 2] = 0.8;
    }
    c.shared_background = true;
    c.background_period = 20.0;
    c.sensor_noise = 0.05;
    return c;
  }

  void set_coupling(std::size_t i, std::size_t j, double g) {
    coupling(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = g;
    coupling(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = g;
  }

  double g(std::size_t i, std::size_t j) const {
    return coupling(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }

  /// Throws DataError on any violated invariant, including the step-size
  /// limits dt < min(R C) / 2 and dt (1/R_i + sum_j g_ij) / C_i <= 1. The
  /// second keeps every Euler update a convex combination, so temperatures
  /// never drop below ambient.
  void validate() const {
    const auto m = cores;
    if (m == 0) throw DataError("sim config: cores must be >= 1");
    auto check_len = [&](const std::vector<double>& v, const char* name) {
      if (v.size() != m) throw DataError(std::string("sim config: ") + name + " needs " + std::to_string(m) + " values");
    };
    check_len(thermal_resistance, "thermal_resistance");
    check_len(heat_capacity, "heat_capacity");
    check_len(idle_power, "idle_power");
    check_len(max_power, "max_power");
    check_len(background_util, "background_util");
    if (coupling.rows() != static_cast<Eigen::Index>(m) || coupling.cols() != static_cast<Eigen::Index>(m)) {
      throw DataError("sim config: coupling must be m x m");
    }
    for (std::size_t i = 0; i < m; ++i) {
      if (g(i, i) != 0.0) throw DataError("sim config: coupling diagonal must be zero");
      for (std::size_t j = 0; j < m; ++j) {
        if (g(i, j) < 0.0) throw DataError("sim config: coupling must be nonnegative");
        if (g(i, j) != g(j, i)) throw DataError("sim config: coupling must be symmetric");
      }
      if (!(thermal_resistance[i] > 0.0)) throw DataError("sim config: thermal_resistance must be > 0");
      if (!(heat_capacity[i] > 0.0)) throw DataError("sim config: heat_capacity must be > 0");
      if (idle_power[i] < 0.0 || max_power[i] < idle_power[i]) {
        throw DataError("sim config: need 0 <= idle_power <= max_power");
      }
      if (background_util[i] < 0.0 || background_util[i] > 1.0) {
        throw DataError("sim config: background_util must lie in [0, 1]");
      }
      if (idle_power[i] * thermal_resistance[i] >= cooldown_temp - ambient) {
        throw DataError("sim config: idle steady state of core " + std::to_string(i) +
                        " does not fall below cooldown_temp");
      }
    }
    if (!(cooldown_temp < throttle_temp)) throw DataError("sim config: cooldown_temp must be < throttle_temp");
    if (!(dt > 0.0)) throw DataError("sim config: dt must be > 0");
    if (!(background_period > 0.0)) throw DataError("sim config: background_period must be > 0");
    if (sensor_noise < 0.0) throw DataError("sim config: sensor_noise must be >= 0");
    double min_rc = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < m; ++i) {
      min_rc = std::min(min_rc, thermal_resistance[i] * heat_capacity[i]);
      double out = 1.0 / thermal_resistance[i];
      for (std::size_t j = 0; j < m; ++j) out += g(i, j);
      if (dt * out / heat_capacity[i] > 1.0) {
        throw DataError("sim config: dt too large for core " + std::to_string(i) + " (Euler positivity)");
      }
    }
    if (!(dt < min_rc / 2.0)) throw DataError("sim config: dt must be < min(R*C)/2");
  }
};

/// One forward-Euler step.
inline std::vector<double> step(std::span<const double> temps, std::span<const double> powers,
                                const SimConfig& cfg) {
  const std::size_t m = cfg.cores;
  std::vector<double> next(m);
  for (std::size_t i = 0; i < m; ++i) {
    double flow = powers[i] - (temps[i] - cfg.ambient) / cfg.thermal_resistance[i];
    for (std::size_t j = 0; j < m; ++j) {
      const double gij = cfg.g(i, j);
      if (gij != 0.0) flow -= gij * (temps[i] - temps[j]);
    }
    next[i] = temps[i] + cfg.dt * flow / cfg.heat_capacity[i];
  }
  return next;
}

struct TaskSpec {
  double compute_intensity = 1.0;  // fraction of the core's dynamic power range
  double duration = 1.0;           // seconds of unthrottled execution
  double noise_scale = 0.0;        // std-dev of the multiplicative power noise

  void validate() const {
    if (compute_intensity < 0.0 || compute_intensity > 1.0) throw DataError("task: intensity must lie in [0, 1]");
    if (!(duration > 0.0)) throw DataError("task: duration must be > 0");
    if (noise_scale < 0.0) throw DataError("task: noise_scale must be >= 0");
  }
};

struct SimTrace {
  /// temperatures[k] is the state before step k; one extra final row.
  std::vector<std::vector<double>> temperatures;
  /// powers[k] is the per-core power applied during step k.
  std::vector<std::vector<double>> powers;
  std::vector<double> task_energy;
  std::vector<std::size_t> task_steps;  // steps until each task finished
  double total_energy = 0.0;
  double dt = 0.0;
  std::size_t steps = 0;
  std::size_t throttle_steps = 0;  // core-steps spent clamped to idle
  std::size_t busy_steps = 0;      // task-steps that made progress

  double makespan() const noexcept { return static_cast<double>(steps) * dt; }
  double workload_energy() const {
    double e = 0.0;
    for (double v : task_energy) e += v;
    return e;
  }
  double average_power() const noexcept { return steps ? total_energy / makespan() : 0.0; }
  double busy_fraction() const noexcept {
    return steps && !task_steps.empty()
               ? static_cast<double>(busy_steps) / static_cast<double>(steps * task_steps.size())
               : 0.0;
  }
  double peak_temperature() const {
    double peak = -std::numeric_limits<double>::infinity();
    for (const auto& row : temperatures) {
      for (double t : row) peak = std::max(peak, t);
    }
    return peak;
  }
};

namespace detail {

/// Mutable simulation state shared by workload runs and idle phases.
class ThermalEngine {
 public:
  ThermalEngine(const SimConfig& cfg, std::uint64_t seed, std::span<const double> initial)
      : cfg_(cfg),
        power_rng_(derive_seed(seed, 1)),
        background_rng_(derive_seed(seed, 2)),
        sensor_rng_(derive_seed(seed, 3)),
        temps_(cfg.cores, cfg.ambient),
        throttled_(cfg.cores, false),
        background_(cfg.cores, 0.0) {
    if (!initial.empty()) {
      if (initial.size() != cfg.cores) throw DataError("initial state arity mismatch");
      temps_.assign(initial.begin(), initial.end());
    }
    redraw_background();
  }

  const std::vector<double>& temps() const noexcept { return temps_; }

  /// Advances one step. `intensity[i]` < 0 marks a core without a task.
  /// Returns the applied powers; `progressed[i]` reports unthrottled work.
  std::vector<double> advance(std::span<const double> intensity, std::span<const double> noise,
                              std::vector<bool>& progressed, std::size_t& throttled_count) {
    const std::size_t m = cfg_.cores;
    std::vector<double> power(m);
    progressed.assign(m, false);
    for (std::size_t i = 0; i < m; ++i) {
      if (temps_[i] >= cfg_.throttle_temp) throttled_[i] = true;
      if (throttled_[i] && temps_[i] < cfg_.cooldown_temp) throttled_[i] = false;
      if (throttled_[i]) {
        power[i] = cfg_.idle_power[i];
        ++throttled_count;
        continue;
      }
      const bool has_task = intensity[i] >= 0.0;
      const double util = std::min(1.0, (has_task ? intensity[i] : 0.0) + background_[i]);
      double p = cfg_.idle_power[i] + util * (cfg_.max_power[i] - cfg_.idle_power[i]);
      if (has_task && noise[i] > 0.0) p = std::max(0.0, p * (1.0 + noise[i] * standard_normal(power_rng_)));
      power[i] = p;
      progressed[i] = has_task;
    }
    temps_ = step(temps_, power, cfg_);
    clock_ += cfg_.dt;
    if (clock_ >= cfg_.background_period) {
      clock_ -= cfg_.background_period;
      redraw_background();
    }
    return power;
  }

  std::vector<double> sensor_reading() {
    std::vector<double> r = temps_;
    if (cfg_.sensor_noise > 0.0) {
      for (auto& t : r) t += cfg_.sensor_noise * standard_normal(sensor_rng_);
    }
    return r;
  }

  bool all_below(double limit) const {
    return std::all_of(temps_.begin(), temps_.end(), [&](double t) { return t < limit; });
  }

 private:
  void redraw_background() {
    const double shared = cfg_.shared_background ? uniform_unit(background_rng_) : 0.0;
    for (std::size_t i = 0; i < cfg_.cores; ++i) {
      if (cfg_.background_util[i] <= 0.0) {
        background_[i] = 0.0;
      } else {
        background_[i] = cfg_.background_util[i] * (cfg_.shared_background ? shared : uniform_unit(background_rng_));
      }
    }
  }

  const SimConfig& cfg_;
  Rng power_rng_;
  Rng background_rng_;
  Rng sensor_rng_;
  std::vector<double> temps_;
  std::vector<bool> throttled_;
  std::vector<double> background_;
  double clock_ = 0.0;
};

inline constexpr std::size_t kMaxSimSteps = 50'000'000;

/// Runs tasks to completion on `engine`; task t executes on plan.cores[t].
/// `on_step` receives the engine after every step.
template <typename OnStep>
SimTrace run_on_engine(ThermalEngine& engine, const SimConfig& cfg, const AllocationPlan& plan,
                       std::span<const TaskSpec> tasks, OnStep&& on_step) {
  if (tasks.size() > plan.cores.size()) {
    throw DataError("run_workload: " + std::to_string(tasks.size()) + " tasks but plan has " +
                    std::to_string(plan.cores.size()) + " cores");
  }
  std::set<int> used;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    tasks[t].validate();
    const int core = plan.cores[t];
    if (core < 0 || static_cast<std::size_t>(core) >= cfg.cores) {
      throw DataError("run_workload: invalid core id " + std::to_string(core));
    }
    if (!used.insert(core).second) throw DataError("run_workload: core " + std::to_string(core) + " assigned twice");
  }

  SimTrace trace;
  trace.dt = cfg.dt;
  trace.task_energy.assign(tasks.size(), 0.0);
  trace.task_steps.assign(tasks.size(), 0);
  if (tasks.empty()) return trace;

  std::vector<std::size_t> remaining(tasks.size());
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    remaining[t] = static_cast<std::size_t>(std::ceil(tasks[t].duration / cfg.dt - 1e-9));
    remaining[t] = std::max<std::size_t>(remaining[t], 1);
  }
  std::vector<double> intensity(cfg.cores);
  std::vector<double> noise(cfg.cores);
  std::vector<bool> progressed;
  std::size_t active = tasks.size();
  trace.temperatures.push_back(engine.temps());
  while (active > 0) {
    if (trace.steps >= kMaxSimSteps) throw NumericError("run_workload: step limit exceeded");
    std::fill(intensity.begin(), intensity.end(), -1.0);
    std::fill(noise.begin(), noise.end(), 0.0);
    for (std::size_t t = 0; t < tasks.size(); ++t) {
      if (remaining[t] == 0) continue;
      const auto core = static_cast<std::size_t>(plan.cores[t]);
      intensity[core] = tasks[t].compute_intensity;
      noise[core] = tasks[t].noise_scale;
    }
    auto power = engine.advance(intensity, noise, progressed, trace.throttle_steps);
    for (std::size_t i = 0; i < cfg.cores; ++i) trace.total_energy += power[i] * cfg.dt;
    ++trace.steps;
    for (std::size_t t = 0; t < tasks.size(); ++t) {
      if (remaining[t] == 0) continue;
      const auto core = static_cast<std::size_t>(plan.cores[t]);
      trace.task_energy[t] += power[core] * cfg.dt;
      if (progressed[core]) {
        ++trace.busy_steps;
        if (--remaining[t] == 0) {
          trace.task_steps[t] = trace.steps;
          --active;
        }
      }
    }
    trace.powers.push_back(std::move(power));
    trace.temperatures.push_back(engine.temps());
    on_step(engine);
  }
  return trace;
}

}  // namespace detail

/// Executes tasks concurrently from `initial` (ambient when empty). Deterministic
/// for a fixed seed.
inline SimTrace run_workload(const SimConfig& cfg, const AllocationPlan& plan, std::span<const TaskSpec> tasks,
                             std::span<const double> initial = {}, std::optional<std::uint64_t> seed = std::nullopt) {
  cfg.validate();
  detail::ThermalEngine engine(cfg, seed.value_or(cfg.seed), initial);
  return detail::run_on_engine(engine, cfg, plan, tasks, [](const detail::ThermalEngine&) {});
}

// ---------------------------------------------------------------------------
// Dataset generation

/// Random workload shape used when generating datasets.
struct WorkloadSpec {
  std::size_t tasks_per_run = 2;
  std::set<int> reserved = {0};
  double intensity_min = 0.3;
  double intensity_max = 1.0;
  double duration_min = 5.0;
  double duration_max = 30.0;
  double noise_scale = 0.05;
  /// Idle seconds after every core has cooled below cooldown_temp.
  double rest_seconds = 5.0;
  std::size_t buffer_capacity = TemperatureBuffer::kDefaultCapacity;

  void validate(std::size_t cores) const {
    std::size_t eligible = 0;
    for (std::size_t c = 0; c < cores; ++c) eligible += reserved.contains(static_cast<int>(c)) ? 0 : 1;
    if (tasks_per_run > eligible) throw DataError("workload: tasks_per_run exceeds eligible cores");
    if (intensity_min < 0.0 || intensity_max > 1.0 || intensity_min > intensity_max) {
      throw DataError("workload: need 0 <= intensity_min <= intensity_max <= 1");
    }
    if (!(duration_min > 0.0) || duration_min > duration_max) {
      throw DataError("workload: need 0 < duration_min <= duration_max");
    }
    if (rest_seconds < 0.0) throw DataError("workload: rest_seconds must be >= 0");
  }
};

struct GeneratedDataset {
  FeatureMatrix features;
  TemperatureBuffer temperatures;
  std::vector<AllocationPlan> plans;
};

/// Column layout of generate_dataset rows, target last.
inline std::vector<std::string> dataset_columns(std::size_t cores, std::size_t tasks) {
  std::vector<std::string> names;
  for (std::size_t c = 0; c < cores; ++c) names.push_back("alloc_core_" + std::to_string(c));
  for (std::size_t t = 0; t < tasks; ++t) {
    names.push_back("task" + std::to_string(t) + "_core");
    names.push_back("task" + std::to_string(t) + "_intensity");
    names.push_back("task" + std::to_string(t) + "_duration");
  }
  for (std::size_t c = 0; c < cores; ++c) names.push_back("temp_before_core_" + std::to_string(c));
  for (std::size_t c = 0; c < cores; ++c) names.push_back("temp_after_core_" + std::to_string(c));
  for (std::size_t c = 0; c < cores; ++c) names.push_back("delta_temp_core_" + std::to_string(c));
  for (const char* n : {"avg_temp_before", "avg_temp_after", "peak_temp", "avg_power", "busy_fraction", "step_count",
                        "throttle_steps", "energy"}) {
    names.emplace_back(n);
  }
  return names;
}

/// Columns of a generate_dataset row that are known before the run starts:
/// allocation, task parameters, and starting temperatures.
inline bool is_pre_run_column(const std::string& name) {
  return name.rfind("alloc_core_", 0) == 0 || name.rfind("task", 0) == 0 || name.rfind("temp_before_core_", 0) == 0 ||
         name == "avg_temp_before";
}

/// Runs n_runs back-to-back workloads. Between runs the machine idles until
/// every core is below cooldown_temp, then for rest_seconds. Every step's
/// sensor reading goes to the temperature buffer; one feature row per run.
inline GeneratedDataset generate_dataset(const SimConfig& cfg, const WorkloadSpec& work, std::size_t n_runs,
                                         AllocationPolicy policy) {
  cfg.validate();
  work.validate(cfg.cores);
  if (n_runs == 0) throw DataError("generate_dataset: n_runs must be >= 1");

  const std::size_t m = cfg.cores;
  const std::size_t tasks_per_run = work.tasks_per_run;
  detail::ThermalEngine engine(cfg, cfg.seed, {});
  Rng workload_rng(derive_seed(cfg.seed, 10));
  auto buffer = TemperatureBuffer::for_cores(m, work.buffer_capacity);
  buffer.push(engine.sensor_reading());
  auto record = [&](const detail::ThermalEngine& e) { buffer.push(const_cast<detail::ThermalEngine&>(e).sensor_reading()); };

  const auto columns = dataset_columns(m, tasks_per_run);
  Eigen::MatrixXd rows(static_cast<Eigen::Index>(n_runs), static_cast<Eigen::Index>(columns.size()));
  std::vector<AllocationPlan> plans;

  std::vector<double> idle(m, -1.0), no_noise(m, 0.0);
  std::vector<bool> progressed;
  std::size_t ignored = 0;

  for (std::size_t run = 0; run < n_runs; ++run) {
    AllocationPlan plan;
    if (policy == AllocationPolicy::Correlation && buffer.size() >= 2) {
      plan = allocate_by_correlation(buffer, tasks_per_run, work.reserved);
    } else {
      plan = allocate_random(m, tasks_per_run, work.reserved, derive_seed(cfg.seed, 1000 + run));
    }
    std::vector<TaskSpec> tasks(tasks_per_run);
    for (auto& t : tasks) {
      t.compute_intensity = uniform_real(workload_rng, work.intensity_min, work.intensity_max);
      t.duration = uniform_real(workload_rng, work.duration_min, work.duration_max);
      t.noise_scale = work.noise_scale;
    }
    const auto before = engine.temps();
    const auto trace = detail::run_on_engine(engine, cfg, plan, tasks, record);
    const auto after = engine.temps();

    std::vector<double> row;
    row.reserve(columns.size());
    for (std::size_t c = 0; c < m; ++c) {
      const bool on = std::find(plan.cores.begin(), plan.cores.end(), static_cast<int>(c)) != plan.cores.end();
      row.push_back(on ? 1.0 : 0.0);
    }
    for (std::size_t t = 0; t < tasks_per_run; ++t) {
      row.push_back(plan.cores[t]);
      row.push_back(tasks[t].compute_intensity);
      row.push_back(tasks[t].duration);
    }
    for (double v : before) row.push_back(v);
    for (double v : after) row.push_back(v);
    for (std::size_t c = 0; c < m; ++c) row.push_back(after[c] - before[c]);
    auto mean = [](const std::vector<double>& v) {
      double s = 0.0;
      for (double x : v) s += x;
      return s / static_cast<double>(v.size());
    };
    row.push_back(mean(before));
    row.push_back(mean(after));
    row.push_back(trace.peak_temperature());
    row.push_back(trace.average_power());
    row.push_back(trace.busy_fraction());
    row.push_back(static_cast<double>(trace.steps));
    row.push_back(static_cast<double>(trace.throttle_steps));
    row.push_back(trace.workload_energy());
    for (std::size_t c = 0; c < row.size(); ++c) rows(static_cast<Eigen::Index>(run), static_cast<Eigen::Index>(c)) = row[c];
    plans.push_back(std::move(plan));

    // Cooldown, then rest.
    std::size_t guard = 0;
    while (!engine.all_below(cfg.cooldown_temp)) {
      if (++guard > detail::kMaxSimSteps) throw NumericError("generate_dataset: cooldown did not converge");
      engine.advance(idle, no_noise, progressed, ignored);
      record(engine);
    }
    const auto rest_steps = static_cast<std::size_t>(std::llround(work.rest_seconds / cfg.dt));
    for (std::size_t s = 0; s < rest_steps; ++s) {
      engine.advance(idle, no_noise, progressed, ignored);
      record(engine);
    }
  }
  return {FeatureMatrix(columns, std::move(rows), std::string("energy")), std::move(buffer), std::move(plans)};
}

// ---------------------------------------------------------------------------
// Config files

/// Documented keys of a simulator config file (SI units). Per-core keys take a
/// single value (broadcast) or one value per core. `coupling` is a list of
/// `i-j:g` edges.
inline const std::set<std::string>& sim_config_keys() {
  static const std::set<std::string> keys = {
      "preset",        "cores",        "ambient",         "coupling",          "thermal_resistance",
      "heat_capacity", "idle_power",   "max_power",       "background_util",   "background_period", "shared_background",
      "throttle_temp", "cooldown_temp", "dt",             "sensor_noise",
      "tasks_per_run", "reserved",     "intensity_min",   "intensity_max",     "duration_min",
      "duration_max",  "noise_scale",  "rest_seconds",    "buffer_capacity",   "runs"};
  return keys;
}

struct SimSetup {
  SimConfig config;
  WorkloadSpec workload;
  std::size_t runs = 200;
};

inline SimSetup parse_sim_config(const KeyValueFile& kv) {
  kv.require_known(sim_config_keys());
  SimSetup setup;
  const auto preset = kv.get_string("preset", "");
  if (preset == "two-cluster") {
    setup.config = SimConfig::two_cluster();
  } else if (preset.empty() || preset == "uniform") {
    const auto m = kv.get_uint("cores", 4);
    if (m == 0) kv.fail(kv.line_of("cores"), "cores must be >= 1");
    setup.config = SimConfig::uniform(m);
  } else {
    kv.fail(kv.line_of("preset"), "unknown preset '" + preset + "'");
  }
  auto& c = setup.config;
  if (kv.contains("cores") && kv.get_uint("cores", 0) != c.cores) {
    kv.fail(kv.line_of("cores"), "cores conflicts with preset");
  }
  const auto m = c.cores;
  auto per_core = [&](const std::string& key, std::vector<double>& dst) {
    if (!kv.contains(key)) return;
    auto v = kv.get_doubles(key);
    if (v.size() == 1) v.assign(m, v[0]);
    if (v.size() != m) kv.fail(kv.line_of(key), "key '" + key + "' needs 1 or " + std::to_string(m) + " values");
    dst = v;
  };
  c.ambient = kv.get_double("ambient", c.ambient);
  per_core("thermal_resistance", c.thermal_resistance);
  per_core("heat_capacity", c.heat_capacity);
  per_core("idle_power", c.idle_power);
  per_core("max_power", c.max_power);
  per_core("background_util", c.background_util);
  c.background_period = kv.get_double("background_period", c.background_period);
  if (kv.contains("shared_background")) {
    const auto v = kv.get_string("shared_background", "");
    if (v != "true" && v != "false") kv.fail(kv.line_of("shared_background"), "shared_background must be true or false");
    c.shared_background = v == "true";
  }
  c.throttle_temp = kv.get_double("throttle_temp", c.throttle_temp);
  c.cooldown_temp = kv.get_double("cooldown_temp", c.cooldown_temp);
  c.dt = kv.get_double("dt", c.dt);
  c.sensor_noise = kv.get_double("sensor_noise", c.sensor_noise);
  if (kv.contains("coupling")) {
    c.coupling.setZero();
    for (const auto& edge : KeyValueFile::list_items(kv.get_string("coupling", ""))) {
      const auto dash = edge.find('-');
      const auto colon = edge.find(':');
      if (dash == std::string::npos || colon == std::string::npos || colon < dash) {
        kv.fail(kv.line_of("coupling"), "coupling edge '" + edge + "' is not of the form i-j:g");
      }
      const auto i = detail::parse_double(edge.substr(0, dash));
      const auto j = detail::parse_double(edge.substr(dash + 1, colon - dash - 1));
      const auto g = detail::parse_double(edge.substr(colon + 1));
      if (!i || !j || !g || *i < 0 || *j < 0 || *i >= static_cast<double>(m) || *j >= static_cast<double>(m) ||
          *i == *j) {
        kv.fail(kv.line_of("coupling"), "invalid coupling edge '" + edge + "'");
      }
      c.set_coupling(static_cast<std::size_t>(*i), static_cast<std::size_t>(*j), *g);
    }
  }

  auto& w = setup.workload;
  w.tasks_per_run = kv.get_uint("tasks_per_run", w.tasks_per_run);
  if (kv.contains("reserved")) {
    w.reserved.clear();
    for (auto r : kv.get_uints("reserved")) w.reserved.insert(static_cast<int>(r));
  }
  w.intensity_min = kv.get_double("intensity_min", w.intensity_min);
  w.intensity_max = kv.get_double("intensity_max", w.intensity_max);
  w.duration_min = kv.get_double("duration_min", w.duration_min);
  w.duration_max = kv.get_double("duration_max", w.duration_max);
  w.noise_scale = kv.get_double("noise_scale", w.noise_scale);
  w.rest_seconds = kv.get_double("rest_seconds", w.rest_seconds);
  w.buffer_capacity = kv.get_uint("buffer_capacity", w.buffer_capacity);
  setup.runs = kv.get_uint("runs", setup.runs);
  try {
    c.validate();
    w.validate(m);
  } catch (const DataError& e) {
    throw UsageError(kv.source() + ": " + e.what());
  }
  return setup;
}

}  // namespace corealloc
