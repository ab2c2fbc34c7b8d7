#pragma once

// End-to-end pipeline: simulate or ingest, RF reduction, stepwise refinement,
// correlation ranking and allocation, FCN training and evaluation. Every
// stage writes its outputs plus a manifest under the output directory.

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "corealloc/correlation.hpp"
#include "corealloc/error.hpp"
#include "corealloc/fcn.hpp"
#include "corealloc/forest.hpp"
#include "corealloc/keyvalue.hpp"
#include "corealloc/ols.hpp"
#include "corealloc/random.hpp"
#include "corealloc/stats.hpp"
#include "corealloc/thermal_sim.hpp"
#include "corealloc/trace.hpp"

namespace corealloc {

inline constexpr const char* kVersion = "1.0.0";

/// Seed streams derived from the global seed, one per consumer.
enum class SeedStream : std::uint64_t {
  Simulate = 1,
  Split = 2,
  Forest = 3,
  TopK = 4,
  Stepwise = 5,
  RandomPlan = 6,
  Trials = 7,
  Init = 8,
  Train = 9,
  Bootstrap = 10,
};

inline std::uint64_t stage_seed(std::uint64_t global, SeedStream s) {
  return derive_seed(global, static_cast<std::uint64_t>(s));
}

enum class FeaturePool { PreRun, All };

inline const char* to_string(FeaturePool p) { return p == FeaturePool::PreRun ? "pre-run" : "all"; }

struct PipelineConfig {
  // Sources. A simulator setup takes precedence over an external trace.
  std::optional<SimSetup> sim;
  std::string trace_path;
  std::string temperatures_path;
  std::string target = "energy";
  /// Candidate predictors for simulator data; external traces use every
  /// non-target column.
  FeaturePool pool = FeaturePool::PreRun;
  std::uint64_t seed = 1;
  std::string out_dir = "out";

  // select
  std::size_t n_trees = kDefaultTrees;
  std::size_t cv_trees = 50;
  std::vector<std::size_t> k_grid;  // empty: 1..d
  double alpha = 0.05;
  std::size_t folds = 5;
  double k_tolerance = 0.05;
  bool stepwise_full = false;

  // allocate
  std::size_t tasks = 2;
  std::set<int> reserved = default_reserved();
  AllocationPolicy policy = AllocationPolicy::Correlation;
  std::size_t trials = 200;
  std::size_t history_runs = 20;
  std::size_t window = 0;

  // train
  std::vector<std::size_t> hidden = {64};
  TrainConfig train = [] {
    TrainConfig t;
    t.batch_size = 32;
    t.epochs = 200;
    t.learning_rate = 0.01;
    t.patience = 20;
    return t;
  }();
  std::size_t bootstrap = 100;
  BootstrapMode bootstrap_mode = BootstrapMode::Augment;
  double train_fraction = 0.8;
  double val_fraction = 0.2;

  std::filesystem::path out(const std::string& file) const { return std::filesystem::path(out_dir) / file; }

  std::filesystem::path features_path() const {
    return trace_path.empty() || sim ? out("features.csv") : std::filesystem::path(trace_path);
  }

  std::filesystem::path temperature_path() const {
    return temperatures_path.empty() || sim ? out("temperatures.csv") : std::filesystem::path(temperatures_path);
  }

  void validate() const {
    if (!sim && trace_path.empty() && temperatures_path.empty()) {
      throw UsageError("no input: give a simulator config or a trace CSV");
    }
    if (target.empty()) throw UsageError("target column must be named");
    if (n_trees == 0 || cv_trees == 0) throw UsageError("n_trees and cv_trees must be >= 1");
    if (!(alpha > 0.0 && alpha < 1.0)) throw UsageError("alpha must lie in (0, 1)");
    if (folds < 2) throw UsageError("folds must be >= 2");
    if (k_tolerance < 0.0) throw UsageError("k_tolerance must be >= 0");
    if (tasks == 0) throw UsageError("tasks must be >= 1");
    if (trials < 2) throw UsageError("trials must be >= 2");
    if (history_runs == 0) throw UsageError("history_runs must be >= 1");
    if (hidden.empty()) throw UsageError("hidden needs at least one layer width");
    if (bootstrap == 0) throw UsageError("bootstrap must be >= 1");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw UsageError("train_fraction must lie in (0, 1)");
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw UsageError("val_fraction must lie in (0, 1)");
    try {
      train.validate();
    } catch (const DataError& e) {
      throw UsageError(e.what());
    }
  }
};

// ---------------------------------------------------------------------------
// Config file

inline const std::set<std::string>& pipeline_top_keys() {
  static const std::set<std::string> keys = {"seed", "out_dir", "target", "pool", "trace", "temperatures", "sim_config"};
  return keys;
}

inline const std::set<std::string>& pipeline_select_keys() {
  static const std::set<std::string> keys = {"n_trees", "cv_trees", "k_grid", "alpha", "folds", "k_tolerance",
                                             "stepwise_full"};
  return keys;
}

inline const std::set<std::string>& pipeline_allocate_keys() {
  static const std::set<std::string> keys = {"tasks", "reserved", "policy", "trials", "history_runs", "window"};
  return keys;
}

inline const std::set<std::string>& pipeline_train_keys() {
  static const std::set<std::string> keys = {"hidden",    "epochs",         "batch_size",     "learning_rate", "patience",
                                             "bootstrap", "bootstrap_mode", "train_fraction", "val_fraction"};
  return keys;
}

inline bool parse_bool(const std::string& v, const KeyValueFile& kv, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  kv.fail(kv.line_of(key), "key '" + key + "': expected true or false");
}

inline AllocationPolicy parse_policy(const std::string& v) {
  if (v == "correlation") return AllocationPolicy::Correlation;
  if (v == "random") return AllocationPolicy::Random;
  throw UsageError("unknown policy '" + v + "' (expected correlation or random)");
}

inline FeaturePool parse_pool(const std::string& v) {
  if (v == "pre-run") return FeaturePool::PreRun;
  if (v == "all") return FeaturePool::All;
  throw UsageError("unknown feature pool '" + v + "' (expected pre-run or all)");
}

inline BootstrapMode parse_bootstrap_mode(const std::string& v) {
  if (v == "augment") return BootstrapMode::Augment;
  if (v == "ensemble") return BootstrapMode::Ensemble;
  throw UsageError("unknown bootstrap mode '" + v + "' (expected augment or ensemble)");
}

/// Reads a pipeline config. Top-level keys plus [simulate], [select],
/// [allocate] and [train] sections; relative paths resolve against the
/// config file's directory.
inline PipelineConfig parse_pipeline_config(const KeyValueFile& kv, const std::filesystem::path& base_dir = {}) {
  for (const auto& [key, entry] : kv.entries()) {
    const auto dot = key.find('.');
    if (dot == std::string::npos) continue;
    const auto section = key.substr(0, dot);
    if (section != "simulate" && section != "select" && section != "allocate" && section != "train") {
      kv.fail(entry.line, "unknown section '" + section + "'");
    }
  }
  const auto top = kv.top_level();
  top.require_known(pipeline_top_keys());
  kv.require_known(pipeline_select_keys(), "select.");
  kv.require_known(pipeline_allocate_keys(), "allocate.");
  kv.require_known(pipeline_train_keys(), "train.");

  auto resolve = [&](const std::string& p) {
    if (p.empty()) return p;
    const std::filesystem::path path(p);
    return path.is_absolute() || base_dir.empty() ? p : (base_dir / path).string();
  };

  PipelineConfig cfg;
  cfg.seed = top.get_uint("seed", cfg.seed);
  cfg.out_dir = resolve(top.get_string("out_dir", cfg.out_dir));
  cfg.target = top.get_string("target", cfg.target);
  try {
    cfg.pool = parse_pool(top.get_string("pool", to_string(cfg.pool)));
  } catch (const UsageError& e) {
    kv.fail(kv.line_of("pool"), e.what());
  }
  cfg.trace_path = resolve(top.get_string("trace", ""));
  cfg.temperatures_path = resolve(top.get_string("temperatures", ""));

  const auto sim_section = kv.section("simulate");
  if (top.contains("sim_config")) {
    if (!sim_section.entries().empty()) kv.fail(kv.line_of("sim_config"), "sim_config conflicts with a [simulate] section");
    const auto path = resolve(top.get_string("sim_config", ""));
    cfg.sim = parse_sim_config(KeyValueFile::load(path));
  } else if (!sim_section.entries().empty()) {
    cfg.sim = parse_sim_config(sim_section);
  }

  const auto sel = kv.section("select");
  cfg.n_trees = sel.get_uint("n_trees", cfg.n_trees);
  cfg.cv_trees = sel.get_uint("cv_trees", cfg.cv_trees);
  for (auto k : sel.get_uints("k_grid")) cfg.k_grid.push_back(static_cast<std::size_t>(k));
  cfg.alpha = sel.get_double("alpha", cfg.alpha);
  cfg.folds = sel.get_uint("folds", cfg.folds);
  cfg.k_tolerance = sel.get_double("k_tolerance", cfg.k_tolerance);
  if (sel.contains("stepwise_full")) cfg.stepwise_full = parse_bool(sel.get_string("stepwise_full", ""), sel, "stepwise_full");

  const auto alloc = kv.section("allocate");
  cfg.tasks = alloc.get_uint("tasks", cfg.tasks);
  if (alloc.contains("reserved")) {
    cfg.reserved.clear();
    for (auto r : alloc.get_uints("reserved")) cfg.reserved.insert(static_cast<int>(r));
  }
  if (alloc.contains("policy")) {
    try {
      cfg.policy = parse_policy(alloc.get_string("policy", ""));
    } catch (const UsageError& e) {
      alloc.fail(alloc.line_of("policy"), e.what());
    }
  }
  cfg.trials = alloc.get_uint("trials", cfg.trials);
  cfg.history_runs = alloc.get_uint("history_runs", cfg.history_runs);
  cfg.window = alloc.get_uint("window", cfg.window);

  const auto tr = kv.section("train");
  if (tr.contains("hidden")) {
    cfg.hidden.clear();
    for (auto h : tr.get_uints("hidden")) cfg.hidden.push_back(static_cast<std::size_t>(h));
  }
  cfg.train.epochs = tr.get_uint("epochs", cfg.train.epochs);
  cfg.train.batch_size = tr.get_uint("batch_size", cfg.train.batch_size);
  cfg.train.learning_rate = tr.get_double("learning_rate", cfg.train.learning_rate);
  cfg.train.patience = tr.get_uint("patience", cfg.train.patience);
  cfg.bootstrap = tr.get_uint("bootstrap", cfg.bootstrap);
  if (tr.contains("bootstrap_mode")) {
    try {
      cfg.bootstrap_mode = parse_bootstrap_mode(tr.get_string("bootstrap_mode", ""));
    } catch (const UsageError& e) {
      tr.fail(tr.line_of("bootstrap_mode"), e.what());
    }
  }
  cfg.train_fraction = tr.get_double("train_fraction", cfg.train_fraction);
  cfg.val_fraction = tr.get_double("val_fraction", cfg.val_fraction);
  return cfg;
}

inline PipelineConfig load_pipeline_config(const std::string& path) {
  const auto kv = KeyValueFile::load(path);
  return parse_pipeline_config(kv, std::filesystem::path(path).parent_path());
}

/// Canonical description of everything that influences outputs. Paths are
/// reduced to file names and the output directory is omitted, so runs in
/// different directories hash identically.
inline nlohmann::json to_json(const PipelineConfig& c) {
  nlohmann::json j;
  j["seed"] = c.seed;
  j["target"] = c.target;
  j["pool"] = to_string(c.pool);
  if (c.sim) {
    const auto& s = c.sim->config;
    nlohmann::json sim;
    sim["cores"] = s.cores;
    sim["ambient"] = s.ambient;
    std::vector<std::vector<double>> g(s.cores, std::vector<double>(s.cores));
    for (std::size_t i = 0; i < s.cores; ++i) {
      for (std::size_t k = 0; k < s.cores; ++k) g[i][k] = s.g(i, k);
    }
    sim["coupling"] = g;
    sim["thermal_resistance"] = s.thermal_resistance;
    sim["heat_capacity"] = s.heat_capacity;
    sim["idle_power"] = s.idle_power;
    sim["max_power"] = s.max_power;
    sim["background_util"] = s.background_util;
    sim["background_period"] = s.background_period;
    sim["shared_background"] = s.shared_background;
    sim["throttle_temp"] = s.throttle_temp;
    sim["cooldown_temp"] = s.cooldown_temp;
    sim["dt"] = s.dt;
    sim["sensor_noise"] = s.sensor_noise;
    const auto& w = c.sim->workload;
    sim["tasks_per_run"] = w.tasks_per_run;
    sim["reserved"] = w.reserved;
    sim["intensity"] = {w.intensity_min, w.intensity_max};
    sim["duration"] = {w.duration_min, w.duration_max};
    sim["noise_scale"] = w.noise_scale;
    sim["rest_seconds"] = w.rest_seconds;
    sim["buffer_capacity"] = w.buffer_capacity;
    sim["runs"] = c.sim->runs;
    j["simulate"] = sim;
  } else {
    j["trace"] = std::filesystem::path(c.trace_path).filename().string();
    j["temperatures"] = std::filesystem::path(c.temperatures_path).filename().string();
  }
  j["select"] = {{"n_trees", c.n_trees}, {"cv_trees", c.cv_trees},       {"k_grid", c.k_grid},
                 {"alpha", c.alpha},     {"folds", c.folds},             {"k_tolerance", c.k_tolerance},
                 {"stepwise_full", c.stepwise_full}};
  j["allocate"] = {{"tasks", c.tasks},   {"reserved", c.reserved},         {"policy", to_string(c.policy)},
                   {"trials", c.trials}, {"history_runs", c.history_runs}, {"window", c.window}};
  j["train"] = {{"hidden", c.hidden},
                {"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"learning_rate", c.train.learning_rate},
                {"patience", c.train.patience},
                {"bootstrap", c.bootstrap},
                {"bootstrap_mode", to_string(c.bootstrap_mode)},
                {"train_fraction", c.train_fraction},
                {"val_fraction", c.val_fraction}};
  return j;
}

// ---------------------------------------------------------------------------
// Output files and manifests

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing file '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Records inputs and outputs of one stage and writes manifest_<stage>.json.
class StageWriter {
 public:
  StageWriter(const PipelineConfig& cfg, std::string stage) : cfg_(cfg), stage_(std::move(stage)) {
    std::filesystem::create_directories(cfg_.out_dir);
  }

  void input(const std::filesystem::path& path) {
    inputs_[path.filename().string()] = hex64(fnv1a64(read_file(path)));
  }

  void write(const std::string& file, const std::string& content) {
    const auto path = cfg_.out(file);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    out << content;
    if (!out) throw DataError("write failed for '" + path.string() + "'");
    outputs_[file] = hex64(fnv1a64(content));
  }

  void note(const std::string& key, nlohmann::json value) { notes_[key] = std::move(value); }

  void finish() {
    nlohmann::json m;
    m["stage"] = stage_;
    m["version"] = kVersion;
    m["seed"] = cfg_.seed;
    m["config_fnv1a64"] = hex64(fnv1a64(to_json(cfg_).dump()));
    m["inputs"] = inputs_;
    m["outputs"] = outputs_;
    if (!notes_.empty()) m["notes"] = notes_;
    const auto path = cfg_.out("manifest_" + stage_ + ".json");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    out << m.dump(2) << '\n';
  }

 private:
  const PipelineConfig& cfg_;
  std::string stage_;
  std::map<std::string, std::string> inputs_;
  std::map<std::string, std::string> outputs_;
  nlohmann::json notes_ = nlohmann::json::object();
};

template <typename Fn>
std::string render(Fn&& fn) {
  std::ostringstream ss;
  fn(ss);
  return ss.str();
}

// ---------------------------------------------------------------------------
// Shared data plumbing

struct PipelineSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;

  /// train and val together, sorted; the rows feature selection may see.
  std::vector<std::size_t> fit_rows() const {
    std::vector<std::size_t> out = train;
    out.insert(out.end(), val.begin(), val.end());
    std::sort(out.begin(), out.end());
    return out;
  }
};

inline PipelineSplit pipeline_split(std::size_t n, const PipelineConfig& cfg) {
  const auto outer = split_indices(n, {cfg.train_fraction, stage_seed(cfg.seed, SeedStream::Split)});
  const auto inner = split_indices(outer.train.size(), {1.0 - cfg.val_fraction, derive_seed(stage_seed(cfg.seed, SeedStream::Split), 1)});
  PipelineSplit s;
  for (auto i : inner.train) s.train.push_back(outer.train[i]);
  for (auto i : inner.test) s.val.push_back(outer.train[i]);
  s.test = outer.test;
  return s;
}

inline FeatureMatrix load_features(const PipelineConfig& cfg) {
  const auto loaded = load_trace(cfg.features_path().string());
  if (!loaded.matrix.has_column(cfg.target)) {
    throw DataError("target column '" + cfg.target + "' not found in " + cfg.features_path().filename().string());
  }
  return loaded.matrix.with_target(cfg.target);
}

/// Candidate predictors: simulator rows honour the configured pool, external
/// traces offer every non-target column.
inline std::vector<std::string> candidate_features(const FeatureMatrix& data, const PipelineConfig& cfg) {
  std::vector<std::string> out;
  for (const auto& name : data.feature_names()) {
    if (cfg.sim && cfg.pool == FeaturePool::PreRun && !is_pre_run_column(name)) continue;
    out.push_back(name);
  }
  if (out.empty()) throw DataError("no candidate features besides the target");
  return out;
}

// ---------------------------------------------------------------------------
// simulate

inline SimConfig seeded_sim_config(const PipelineConfig& cfg) {
  if (!cfg.sim) throw UsageError("simulate needs a simulator config");
  SimConfig sc = cfg.sim->config;
  sc.seed = stage_seed(cfg.seed, SeedStream::Simulate);
  return sc;
}

inline void run_simulate(const PipelineConfig& cfg) {
  const auto sc = seeded_sim_config(cfg);
  const auto data = generate_dataset(sc, cfg.sim->workload, cfg.sim->runs, AllocationPolicy::Random);
  StageWriter w(cfg, "simulate");
  w.write("features.csv", render([&](std::ostream& o) { write_csv(o, data.features); }));
  w.write("temperatures.csv", render([&](std::ostream& o) { write_temperature_csv(o, data.temperatures); }));
  w.note("runs", cfg.sim->runs);
  w.note("samples", data.temperatures.size());
  w.finish();
}

// ---------------------------------------------------------------------------
// select

struct SelectionReport {
  std::string target;
  std::vector<std::string> candidates;
  ForestModel forest;
  std::vector<std::size_t> ranking;  // candidate positions by importance
  TopKSelection topk;
  std::vector<std::string> stepwise_input;
  std::vector<std::string> dependent_dropped;
  StepwiseTrace stepwise;
};

struct SelectionOptions {
  std::size_t n_trees = kDefaultTrees;
  std::size_t cv_trees = 50;
  std::vector<std::size_t> k_grid;
  double alpha = 0.05;
  std::size_t folds = 5;
  double k_tolerance = 0.05;
  bool stepwise_full = false;
  std::uint64_t seed = 0;
};

/// RF importance and top-k sweep over the candidates, then backward stepwise
/// on the RF-reduced set (or on every candidate with stepwise_full). Columns
/// that are constant or linearly dependent on more important ones are removed
/// before stepwise.
inline SelectionReport select_features(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                       const std::vector<std::string>& names, const SelectionOptions& opt) {
  SelectionReport rep;
  rep.candidates = names;
  const auto d = names.size();
  rep.forest = fit_forest(x, y, opt.n_trees, TreeParams{}, derive_seed(opt.seed, 1), names);
  rep.ranking = importance_ranking(rep.forest.importance);

  auto grid = opt.k_grid;
  if (grid.empty()) {
    for (std::size_t k = 1; k <= d; ++k) grid.push_back(k);
  }
  TopKOptions topk;
  topk.folds = opt.folds;
  topk.seed = derive_seed(opt.seed, 2);
  topk.n_trees = opt.cv_trees;
  topk.tolerance = opt.k_tolerance;
  rep.topk = select_top_k(x, y, names, rep.forest.importance, grid, topk);

  std::vector<std::size_t> pool;
  if (opt.stepwise_full) {
    pool = rep.ranking;
  } else {
    pool = rep.topk.feature_positions;
  }
  Eigen::MatrixXd sub(x.rows(), static_cast<Eigen::Index>(pool.size()));
  for (std::size_t c = 0; c < pool.size(); ++c) sub.col(static_cast<Eigen::Index>(c)) = x.col(static_cast<Eigen::Index>(pool[c]));
  const auto keep = independent_columns(sub);
  std::vector<bool> kept(pool.size(), false);
  for (auto c : keep) kept[c] = true;
  Eigen::MatrixXd sx(x.rows(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t c = 0; c < pool.size(); ++c) {
    if (!kept[c]) rep.dependent_dropped.push_back(names[pool[c]]);
  }
  for (std::size_t c = 0; c < keep.size(); ++c) {
    sx.col(static_cast<Eigen::Index>(c)) = sub.col(static_cast<Eigen::Index>(keep[c]));
    rep.stepwise_input.push_back(names[pool[keep[c]]]);
  }
  if (rep.stepwise_input.empty()) throw DataError("select: no usable (non-constant) features for stepwise");
  StepwiseOptions so;
  so.alpha = opt.alpha;
  so.folds = opt.folds;
  so.seed = derive_seed(opt.seed, 3);
  rep.stepwise = backward_stepwise(sx, y, rep.stepwise_input, so);
  return rep;
}

inline nlohmann::json to_json(const SelectionReport& r) {
  nlohmann::json j;
  j["target"] = r.target;
  j["candidates"] = r.candidates;
  std::vector<std::string> ranked;
  for (auto p : r.ranking) ranked.push_back(r.candidates[p]);
  j["importance_ranking"] = ranked;
  j["best_k"] = r.topk.best_k;
  j["rf_features"] = r.topk.features;
  j["stepwise_input"] = r.stepwise_input;
  j["dependent_dropped"] = r.dependent_dropped;
  j["stepwise_features"] = r.stepwise.final_features;
  nlohmann::json coef = nlohmann::json::array();
  const auto& fit = r.stepwise.final_fit;
  for (Eigen::Index i = 0; i < fit.coef.size(); ++i) {
    coef.push_back({{"term", i == 0 ? std::string("(intercept)") : fit.feature_names[static_cast<std::size_t>(i - 1)]},
                    {"estimate", fit.coef(i)},
                    {"se", fit.se(i)},
                    {"t", fit.t(i)},
                    {"p", fit.p(i)}});
  }
  j["stepwise_coefficients"] = coef;
  j["stepwise_adj_r2"] = fit.adj_r2;
  return j;
}

inline SelectionReport run_select(const PipelineConfig& cfg) {
  StageWriter w(cfg, "select");
  const auto data = load_features(cfg);
  w.input(cfg.features_path());
  const auto names = candidate_features(data, cfg);
  const auto split = pipeline_split(data.rows(), cfg);
  const auto rows = split.fit_rows();
  const Eigen::MatrixXd x = take_rows(data.select_columns(names).values(), rows);
  const Eigen::VectorXd y = take_rows(Eigen::VectorXd(data.target()), rows);

  SelectionOptions opt;
  opt.n_trees = cfg.n_trees;
  opt.cv_trees = cfg.cv_trees;
  opt.k_grid = cfg.k_grid;
  opt.alpha = cfg.alpha;
  opt.folds = cfg.folds;
  opt.k_tolerance = cfg.k_tolerance;
  opt.stepwise_full = cfg.stepwise_full;
  opt.seed = stage_seed(cfg.seed, SeedStream::Forest);
  auto rep = select_features(x, y, names, opt);
  rep.target = cfg.target;

  w.write("importance.csv", render([&](std::ostream& o) {
            o << "feature,importance,rank\n";
            for (std::size_t r = 0; r < rep.ranking.size(); ++r) {
              const auto p = rep.ranking[r];
              o << names[p] << ',' << format_double(rep.forest.importance[p]) << ',' << r + 1 << '\n';
            }
          }));
  w.write("cv_curve.csv", render([&](std::ostream& o) {
            o << "k,cv_error\n";
            for (const auto& pt : rep.topk.curve) o << pt.k << ',' << format_double(pt.cv_error) << '\n';
          }));
  w.write("stepwise.csv", render([&](std::ostream& o) { write_stepwise_csv(o, rep.stepwise); }));
  w.write("selection.json", to_json(rep).dump(2) + "\n");
  w.write("forest.json", to_json(rep.forest).dump() + "\n");
  w.note("rows_used", rows.size());
  w.finish();
  return rep;
}

// ---------------------------------------------------------------------------
// allocate

struct TrialOutcome {
  std::vector<int> cores;
  double energy = 0.0;     // J drawn by the task cores
  double peak_temp = 0.0;  // max over cores and steps
  double avg_temp = 0.0;   // mean over cores and recorded states
  double makespan = 0.0;
};

struct PairedTrial {
  TrialOutcome correlation;
  TrialOutcome random;
};

struct AllocationComparison {
  std::vector<PairedTrial> trials;
  PairedTest energy;
  PairedTest peak_temp;
  PairedTest avg_temp;
};

inline TrialOutcome summarize_trial(const SimTrace& t, std::vector<int> cores) {
  TrialOutcome o;
  o.cores = std::move(cores);
  o.energy = t.workload_energy();
  o.peak_temp = t.peak_temperature();
  double s = 0.0;
  std::size_t count = 0;
  for (const auto& row : t.temperatures) {
    for (double v : row) {
      s += v;
      ++count;
    }
  }
  o.avg_temp = count ? s / static_cast<double>(count) : 0.0;
  o.makespan = t.makespan();
  return o;
}

/// One trial: a random-allocation history feeds the correlation-aware
/// decision; both plans then run the same tasks from ambient with the same
/// noise seed.
inline PairedTrial allocation_trial(const SimSetup& setup, std::size_t tasks, const std::set<int>& reserved,
                                    std::size_t history_runs, std::size_t window, std::uint64_t seed) {
  SimConfig sc = setup.config;
  sc.seed = seed;
  WorkloadSpec work = setup.workload;
  work.tasks_per_run = tasks;
  work.reserved = reserved;
  const auto history = generate_dataset(sc, work, history_runs, AllocationPolicy::Random);
  const auto corr_plan = allocate_by_correlation(history.temperatures, tasks, reserved, window);
  const auto rand_plan = allocate_random(sc.cores, tasks, reserved, derive_seed(seed, 1));

  Rng rng(derive_seed(seed, 2));
  std::vector<TaskSpec> specs(tasks);
  for (auto& t : specs) {
    t.compute_intensity = uniform_real(rng, work.intensity_min, work.intensity_max);
    t.duration = uniform_real(rng, work.duration_min, work.duration_max);
    t.noise_scale = work.noise_scale;
  }
  const auto run_seed = derive_seed(seed, 3);
  PairedTrial out;
  out.correlation = summarize_trial(run_workload(sc, corr_plan, specs, {}, run_seed), corr_plan.cores);
  out.random = summarize_trial(run_workload(sc, rand_plan, specs, {}, run_seed), rand_plan.cores);
  return out;
}

inline AllocationComparison paired_allocation_trials(const SimSetup& setup, std::size_t tasks,
                                                     const std::set<int>& reserved, std::size_t trials,
                                                     std::size_t history_runs, std::size_t window,
                                                     std::uint64_t seed) {
  AllocationComparison cmp;
  cmp.trials.resize(trials);
  parallel_for(trials, [&](std::size_t i) {
    cmp.trials[i] = allocation_trial(setup, tasks, reserved, history_runs, window, derive_seed(seed, i));
  });
  std::vector<double> ce, re, cp, rp, ca, ra;
  for (const auto& t : cmp.trials) {
    ce.push_back(t.correlation.energy);
    re.push_back(t.random.energy);
    cp.push_back(t.correlation.peak_temp);
    rp.push_back(t.random.peak_temp);
    ca.push_back(t.correlation.avg_temp);
    ra.push_back(t.random.avg_temp);
  }
  cmp.energy = paired_t_test(ce, re);
  cmp.peak_temp = paired_t_test(cp, rp);
  cmp.avg_temp = paired_t_test(ca, ra);
  return cmp;
}

inline nlohmann::json to_json(const PairedTest& t, double mean_correlation, double mean_random) {
  return {{"mean_correlation", mean_correlation},
          {"mean_random", mean_random},
          {"mean_difference", t.mean_diff},
          {"t", t.t},
          {"p", t.p},
          {"n", t.n}};
}

inline std::string join_cores(const std::vector<int>& cores) {
  std::string s;
  for (std::size_t i = 0; i < cores.size(); ++i) s += (i ? ";" : "") + std::to_string(cores[i]);
  return s;
}

inline void run_allocate(const PipelineConfig& cfg) {
  StageWriter w(cfg, "allocate");
  const auto loaded = load_trace(cfg.temperature_path().string());
  w.input(cfg.temperature_path());
  const auto buffer = temperature_buffer_from(loaded.matrix, std::max<std::size_t>(loaded.matrix.rows(), 1));
  const auto corr = correlation_matrix(buffer, cfg.window);
  const auto scores = correlation_scores(corr);
  const auto order = rank_cores(scores);
  std::vector<int> ranked;
  for (auto p : order) ranked.push_back(corr.core_ids[p]);
  const auto corr_plan = allocate(ranked, cfg.tasks, cfg.reserved);

  // Random plans draw from the cores present in the trace.
  std::set<int> excluded = cfg.reserved;
  std::vector<int> eligible;
  for (int id : corr.core_ids) {
    if (!excluded.contains(id)) eligible.push_back(id);
  }
  const auto pick = allocate_random(eligible.size(), cfg.tasks, {}, stage_seed(cfg.seed, SeedStream::RandomPlan));
  AllocationPlan rand_plan = pick;
  rand_plan.reserved = cfg.reserved;
  for (auto& c : rand_plan.cores) c = eligible[static_cast<std::size_t>(c)];

  nlohmann::json j;
  j["tasks"] = cfg.tasks;
  j["reserved"] = cfg.reserved;
  j["policy"] = to_string(cfg.policy);
  j["samples"] = corr.samples;
  j["core_ids"] = corr.core_ids;
  j["scores"] = scores;
  j["ranking"] = ranked;
  j["correlation_plan"] = corr_plan.cores;
  j["random_plan"] = rand_plan.cores;
  j["plan"] = cfg.policy == AllocationPolicy::Correlation ? corr_plan.cores : rand_plan.cores;

  w.write("correlation.csv", render([&](std::ostream& o) { write_correlation_csv(o, corr); }));
  w.write("correlation_long.csv", render([&](std::ostream& o) { write_correlation_long_csv(o, corr); }));
  w.write("scores.csv", render([&](std::ostream& o) {
            o << "core,score,rank\n";
            for (std::size_t r = 0; r < order.size(); ++r) {
              o << corr.core_ids[order[r]] << ',' << format_double(scores[order[r]]) << ',' << r + 1 << '\n';
            }
          }));

  if (cfg.sim) {
    const auto cmp = paired_allocation_trials(*cfg.sim, cfg.tasks, cfg.reserved, cfg.trials, cfg.history_runs,
                                              cfg.window, stage_seed(cfg.seed, SeedStream::Trials));
    double sums[6] = {0, 0, 0, 0, 0, 0};
    for (const auto& t : cmp.trials) {
      sums[0] += t.correlation.energy;
      sums[1] += t.random.energy;
      sums[2] += t.correlation.peak_temp;
      sums[3] += t.random.peak_temp;
      sums[4] += t.correlation.avg_temp;
      sums[5] += t.random.avg_temp;
    }
    for (auto& s : sums) s /= static_cast<double>(cmp.trials.size());
    j["comparison"] = {{"trials", cmp.trials.size()},
                       {"history_runs", cfg.history_runs},
                       {"energy", to_json(cmp.energy, sums[0], sums[1])},
                       {"peak_temp", to_json(cmp.peak_temp, sums[2], sums[3])},
                       {"avg_temp", to_json(cmp.avg_temp, sums[4], sums[5])}};
    w.write("comparison.csv", render([&](std::ostream& o) {
              o << "trial,policy,cores,energy,peak_temp,avg_temp,makespan\n";
              for (std::size_t i = 0; i < cmp.trials.size(); ++i) {
                for (const auto* pol : {"correlation", "random"}) {
                  const auto& t = pol[0] == 'c' ? cmp.trials[i].correlation : cmp.trials[i].random;
                  o << i << ',' << pol << ',' << join_cores(t.cores) << ',' << format_double(t.energy) << ','
                    << format_double(t.peak_temp) << ',' << format_double(t.avg_temp) << ','
                    << format_double(t.makespan) << '\n';
                }
              }
            }));
  }
  w.write("allocation.json", j.dump(2) + "\n");
  w.finish();
}

// ---------------------------------------------------------------------------
// train / evaluate

struct ModelOptions {
  std::vector<std::size_t> hidden = {64};
  TrainConfig train;
  std::size_t bootstrap = 100;
  BootstrapMode mode = BootstrapMode::Augment;
  std::uint64_t seed = 0;
};

struct ModelResult {
  std::string name;
  std::vector<std::size_t> inputs;  // column positions of the standardized data
  std::vector<FcnModel> models;     // several in ensemble mode
  std::vector<EpochLoss> history;   // first member in ensemble mode
  Evaluation eval;
};

inline Dataset take_columns(const Dataset& d, const std::vector<std::size_t>& cols) {
  Dataset out;
  out.x.resize(d.x.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) out.x.col(static_cast<Eigen::Index>(c)) = d.x.col(static_cast<Eigen::Index>(cols[c]));
  out.y = d.y;
  return out;
}

inline Eigen::VectorXd predict_models(const std::vector<FcnModel>& models, const Eigen::MatrixXd& x) {
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(x.rows());
  for (const auto& m : models) sum += m.predict(x);
  return sum / static_cast<double>(models.size());
}

inline Evaluation evaluate_models(const std::vector<FcnModel>& models, const Dataset& test) {
  if (models.empty()) throw DataError("evaluate: no model");
  for (const auto& m : models) m.check_arity(test.x);
  return {mse(predict_models(models, test.x), test.y), models.front().parameter_count()};
}

/// Trains FCN (all inputs), FCN+RF (rf_inputs) and FCN+RF+BS (rf_inputs with
/// bootstrap). FCN+RF and FCN+RF+BS start from identical weights. MSE is on
/// the (standardized) scale of the given targets.
inline std::vector<ModelResult> compare_models(const Dataset& train_set, const Dataset& val, const Dataset& test,
                                               const std::vector<std::size_t>& rf_inputs, const ModelOptions& opt) {
  if (rf_inputs.empty()) throw DataError("compare_models: empty reduced feature set");
  std::vector<std::size_t> all(static_cast<std::size_t>(train_set.x.cols()));
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::vector<ModelResult> out(3);
  out[0].name = "FCN";
  out[0].inputs = all;
  out[1].name = "FCN+RF";
  out[1].inputs = rf_inputs;
  out[2].name = "FCN+RF+BS";
  out[2].inputs = rf_inputs;

  TrainConfig tc = opt.train;
  tc.seed = derive_seed(opt.seed, 1);
  const auto init_seed = derive_seed(opt.seed, 2);
  parallel_for(3, [&](std::size_t i) {
    auto& r = out[i];
    const auto tr = take_columns(train_set, r.inputs);
    const auto va = take_columns(val, r.inputs);
    const auto te = take_columns(test, r.inputs);
    const auto initial = init_fcn(fcn_layout(r.inputs.size(), opt.hidden), init_seed);
    if (i < 2) {
      auto res = train(initial, tr, va, tc);
      r.history = std::move(res.history);
      r.models.push_back(std::move(res.model));
    } else {
      auto samples = bootstrap_augment(tr, opt.bootstrap, derive_seed(opt.seed, 3));
      if (opt.mode == BootstrapMode::Augment) {
        auto res = train(initial, concatenate(samples), va, tc);
        r.history = std::move(res.history);
        r.models.push_back(std::move(res.model));
      } else {
        for (std::size_t s = 0; s < samples.size(); ++s) {
          TrainConfig c = tc;
          c.seed = derive_seed(tc.seed, 100 + s);
          auto res = train(initial, samples[s], va, c);
          if (s == 0) r.history = std::move(res.history);
          r.models.push_back(std::move(res.model));
        }
      }
    }
    r.eval = evaluate_models(r.models, te);
  });
  return out;
}

/// Standardization and split state saved by train and reused by evaluate.
struct Preprocessing {
  std::string target;
  std::vector<std::string> features;     // FCN inputs, in order
  std::vector<std::string> rf_features;  // reduced subset
  Eigen::VectorXd x_mean, x_scale;
  double y_mean = 0.0, y_scale = 1.0;
  std::vector<std::size_t> test_rows;

  Dataset dataset(const FeatureMatrix& data, const std::vector<std::size_t>& rows) const {
    Dataset d;
    const Eigen::MatrixXd raw = take_rows(data.select_columns(features).values(), rows);
    d.x = (raw.rowwise() - x_mean.transpose()).array().rowwise() / x_scale.transpose().array();
    d.y = (take_rows(Eigen::VectorXd(data.target()), rows).array() - y_mean) / y_scale;
    return d;
  }

  std::vector<std::size_t> rf_positions() const {
    std::vector<std::size_t> out;
    for (const auto& f : rf_features) {
      const auto it = std::find(features.begin(), features.end(), f);
      if (it == features.end()) throw DataError("preprocessing: reduced feature '" + f + "' not among inputs");
      out.push_back(static_cast<std::size_t>(it - features.begin()));
    }
    return out;
  }
};

inline nlohmann::json to_json(const Preprocessing& p) {
  return {{"target", p.target},
          {"features", p.features},
          {"rf_features", p.rf_features},
          {"x_mean", std::vector<double>(p.x_mean.data(), p.x_mean.data() + p.x_mean.size())},
          {"x_scale", std::vector<double>(p.x_scale.data(), p.x_scale.data() + p.x_scale.size())},
          {"y_mean", p.y_mean},
          {"y_scale", p.y_scale},
          {"test_rows", p.test_rows},
          {"mse_units", "standardized target (unit variance on the training split)"}};
}

inline Preprocessing preprocessing_from_json(const nlohmann::json& j) {
  try {
    Preprocessing p;
    p.target = j.at("target").get<std::string>();
    p.features = j.at("features").get<std::vector<std::string>>();
    p.rf_features = j.at("rf_features").get<std::vector<std::string>>();
    const auto m = j.at("x_mean").get<std::vector<double>>();
    const auto s = j.at("x_scale").get<std::vector<double>>();
    if (m.size() != p.features.size() || s.size() != p.features.size()) throw DataError("preprocessing: arity mismatch");
    p.x_mean = Eigen::Map<const Eigen::VectorXd>(m.data(), static_cast<Eigen::Index>(m.size()));
    p.x_scale = Eigen::Map<const Eigen::VectorXd>(s.data(), static_cast<Eigen::Index>(s.size()));
    p.y_mean = j.at("y_mean").get<double>();
    p.y_scale = j.at("y_scale").get<double>();
    p.test_rows = j.at("test_rows").get<std::vector<std::size_t>>();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("preprocessing.json: ") + e.what());
  }
}

inline const std::vector<std::pair<std::string, std::string>>& model_files() {
  static const std::vector<std::pair<std::string, std::string>> files = {
      {"FCN", "fcn"}, {"FCN+RF", "fcn_rf"}, {"FCN+RF+BS", "fcn_rf_bs"}};
  return files;
}

/// One model, or `ensemble <N>` followed by N models.
inline void write_model_bundle(std::ostream& out, const std::vector<FcnModel>& models) {
  if (models.size() != 1) out << "ensemble " << models.size() << '\n';
  for (const auto& m : models) write_fcn(out, m);
}

inline std::vector<FcnModel> read_model_bundle(std::istream& in, const std::string& source) {
  const auto start = in.tellg();
  std::string word;
  std::size_t count = 1;
  if (!(in >> word)) throw DataError(source + ": empty model file");
  if (word == "ensemble") {
    if (!(in >> count) || count == 0) throw DataError(source + ": bad ensemble header");
  } else {
    in.seekg(start);
  }
  std::vector<FcnModel> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(read_fcn(in, source));
  return out;
}

inline std::string metrics_csv(const std::vector<std::pair<std::string, Evaluation>>& rows) {
  return render([&](std::ostream& o) {
    o << "model,mse,params\n";
    for (const auto& [name, e] : rows) o << name << ',' << format_double(e.mse) << ',' << e.params << '\n';
  });
}

inline std::vector<std::string> read_rf_features(const PipelineConfig& cfg) {
  const auto path = cfg.out("selection.json");
  if (!std::filesystem::exists(path)) throw DataError("missing selection report '" + path.string() + "' (run select first)");
  try {
    return nlohmann::json::parse(read_file(path)).at("rf_features").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("selection.json: ") + e.what());
  }
}

inline std::vector<ModelResult> run_train(const PipelineConfig& cfg) {
  StageWriter w(cfg, "train");
  const auto data = load_features(cfg);
  w.input(cfg.features_path());
  const auto rf_features = read_rf_features(cfg);
  w.input(cfg.out("selection.json"));
  const auto names = candidate_features(data, cfg);
  const auto split = pipeline_split(data.rows(), cfg);

  Preprocessing pre;
  pre.target = cfg.target;
  pre.features = names;
  pre.rf_features = rf_features;
  const Eigen::MatrixXd x_train = take_rows(data.select_columns(names).values(), split.train);
  const auto scaler = Scaler::fit(x_train);
  pre.x_mean = scaler.mean;
  pre.x_scale = scaler.scale;
  const Eigen::VectorXd y_train = take_rows(Eigen::VectorXd(data.target()), split.train);
  pre.y_mean = y_train.mean();
  const double y_sd = std::sqrt((y_train.array() - pre.y_mean).square().mean());
  if (!(y_sd > 0.0)) throw DataError("train: target '" + cfg.target + "' is constant on the training split");
  pre.y_scale = y_sd;
  pre.test_rows = split.test;

  ModelOptions opt;
  opt.hidden = cfg.hidden;
  opt.train = cfg.train;
  opt.bootstrap = cfg.bootstrap;
  opt.mode = cfg.bootstrap_mode;
  opt.seed = stage_seed(cfg.seed, SeedStream::Train);
  auto results = compare_models(pre.dataset(data, split.train), pre.dataset(data, split.val),
                                pre.dataset(data, split.test), pre.rf_positions(), opt);

  std::vector<std::pair<std::string, Evaluation>> rows;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& file = model_files()[i].second;
    w.write("model_" + file + ".txt", render([&](std::ostream& o) { write_model_bundle(o, results[i].models); }));
    w.write("loss_" + file + ".csv", render([&](std::ostream& o) { write_loss_csv(o, results[i].history); }));
    rows.emplace_back(results[i].name, results[i].eval);
  }
  w.write("preprocessing.json", to_json(pre).dump(2) + "\n");
  w.write("metrics.csv", metrics_csv(rows));
  w.note("train_rows", split.train.size());
  w.note("val_rows", split.val.size());
  w.note("test_rows", split.test.size());
  w.finish();
  return results;
}

inline std::vector<std::pair<std::string, Evaluation>> run_evaluate(const PipelineConfig& cfg) {
  StageWriter w(cfg, "evaluate");
  const auto pre_path = cfg.out("preprocessing.json");
  if (!std::filesystem::exists(pre_path)) throw DataError("missing '" + pre_path.string() + "' (run train first)");
  Preprocessing pre;
  try {
    pre = preprocessing_from_json(nlohmann::json::parse(read_file(pre_path)));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("preprocessing.json: ") + e.what());
  }
  w.input(pre_path);
  auto data = load_features(cfg);
  w.input(cfg.features_path());
  if (pre.target != cfg.target) throw DataError("evaluate: models were trained for target '" + pre.target + "'");
  for (auto r : pre.test_rows) {
    if (r >= data.rows()) throw DataError("evaluate: test row out of range; features changed since training");
  }
  const auto test = pre.dataset(data, pre.test_rows);
  const auto rf_test = take_columns(test, pre.rf_positions());

  std::vector<std::pair<std::string, Evaluation>> rows;
  for (std::size_t i = 0; i < model_files().size(); ++i) {
    const auto& [name, file] = model_files()[i];
    const auto path = cfg.out("model_" + file + ".txt");
    if (!std::filesystem::exists(path)) throw DataError("missing model file '" + path.string() + "' (run train first)");
    std::istringstream in(read_file(path));
    const auto models = read_model_bundle(in, path.filename().string());
    w.input(path);
    rows.emplace_back(name, evaluate_models(models, i == 0 ? test : rf_test));
  }
  w.write("metrics.csv", metrics_csv(rows));
  w.finish();
  return rows;
}

/// Every stage in pipeline order, then report.json.
inline void run_report(const PipelineConfig& cfg) {
  if (cfg.sim) run_simulate(cfg);
  const auto selection = run_select(cfg);
  run_allocate(cfg);
  run_train(cfg);
  const auto metrics = run_evaluate(cfg);

  StageWriter w(cfg, "report");
  nlohmann::json j;
  j["target"] = cfg.target;
  j["best_k"] = selection.topk.best_k;
  j["rf_features"] = selection.topk.features;
  j["stepwise_features"] = selection.stepwise.final_features;
  j["allocation"] = nlohmann::json::parse(read_file(cfg.out("allocation.json")));
  nlohmann::json table = nlohmann::json::array();
  for (const auto& [name, e] : metrics) table.push_back({{"model", name}, {"mse", e.mse}, {"params", e.params}});
  j["models"] = table;
  for (const auto* f : {"selection.json", "allocation.json", "metrics.csv"}) w.input(cfg.out(f));
  w.write("report.json", j.dump(2) + "\n");
  w.finish();
}

}  // namespace corealloc
