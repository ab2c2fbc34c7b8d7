// Command-line driver for the selection/allocation pipeline.
//
//   corealloc <simulate|select|allocate|train|evaluate|report> [options]
//
// Options may come from --config (a key = value file with [simulate],
// [select], [allocate] and [train] sections); flags override file values.
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "corealloc/pipeline.hpp"

namespace {

using namespace corealloc;

struct Flags {
  std::string config;
  std::string sim_config;
  std::string preset;
  std::string trace;
  std::string temperatures;
  std::string target;
  std::string pool;
  std::string out_dir;
  std::uint64_t seed = 0;
  std::size_t runs = 0;
  std::size_t n_trees = 0;
  std::size_t cv_trees = 0;
  std::vector<std::size_t> k_grid;
  double alpha = 0.0;
  std::size_t folds = 0;
  double k_tolerance = 0.0;
  bool stepwise_full = false;
  std::size_t tasks = 0;
  std::vector<int> reserved;
  bool no_reserved = false;
  std::string policy;
  std::size_t trials = 0;
  std::size_t history_runs = 0;
  std::size_t window = 0;
  std::vector<std::size_t> hidden;
  std::size_t epochs = 0;
  std::size_t batch_size = 0;
  double learning_rate = 0.0;
  std::size_t patience = 0;
  std::size_t bootstrap = 0;
  std::string bootstrap_mode;
  double train_fraction = 0.0;
  double val_fraction = 0.0;
};

void add_options(CLI::App& app, Flags& f) {
  app.add_option("--config", f.config, "Pipeline config file (key = value with sections)");
  app.add_option("--sim-config", f.sim_config, "Flat simulator config file");
  app.add_option("--preset", f.preset, "Simulator preset: uniform or two-cluster");
  app.add_option("--trace", f.trace, "External feature trace CSV");
  app.add_option("--temperatures", f.temperatures, "External temperature trace CSV (step, core_<id>...)");
  app.add_option("--target", f.target, "Target column (default energy)");
  app.add_option("--pool", f.pool, "Candidate features for simulator data: pre-run or all");
  app.add_option("--out-dir", f.out_dir, "Output directory (default out)");
  app.add_option("--seed", f.seed, "Global seed");
  app.add_option("--runs", f.runs, "Simulated runs");
  app.add_option("--n-trees", f.n_trees, "Trees in the importance forest");
  app.add_option("--cv-trees", f.cv_trees, "Trees per forest in the top-k CV sweep");
  app.add_option("--k-grid", f.k_grid, "Feature counts to sweep (default 1..d)");
  app.add_option("--alpha", f.alpha, "Stepwise significance level");
  app.add_option("--folds", f.folds, "Cross-validation folds");
  app.add_option("--k-tolerance", f.k_tolerance, "Relative CV tolerance for choosing k");
  app.add_flag("--stepwise-full", f.stepwise_full, "Run stepwise on every candidate instead of the RF-reduced set");
  app.add_option("--tasks", f.tasks, "Tasks to allocate (T)");
  app.add_option("--reserved", f.reserved, "Reserved core ids (default 0)");
  app.add_flag("--no-reserved", f.no_reserved, "Reserve no cores");
  app.add_option("--policy", f.policy, "Allocation policy: correlation or random");
  app.add_option("--trials", f.trials, "Paired simulated allocation trials");
  app.add_option("--history-runs", f.history_runs, "Simulated runs of history per trial");
  app.add_option("--window", f.window, "Correlation window in samples (0 = all)");
  app.add_option("--hidden", f.hidden, "Hidden layer widths");
  app.add_option("--epochs", f.epochs, "Training epochs");
  app.add_option("--batch-size", f.batch_size, "Mini-batch size");
  app.add_option("--learning-rate", f.learning_rate, "Learning rate");
  app.add_option("--patience", f.patience, "Early-stop patience in epochs (0 disables)");
  app.add_option("--bootstrap", f.bootstrap, "Bootstrap resamples (B)");
  app.add_option("--bootstrap-mode", f.bootstrap_mode, "augment or ensemble");
  app.add_option("--train-fraction", f.train_fraction, "Train share of rows (rest is test)");
  app.add_option("--val-fraction", f.val_fraction, "Validation share of the training rows");
}

bool given(const CLI::App& app, const std::string& name) { return app.count(name) > 0; }

PipelineConfig build_config(const CLI::App& app, const Flags& f) {
  PipelineConfig cfg = f.config.empty() ? PipelineConfig{} : load_pipeline_config(f.config);
  if (given(app, "--sim-config") && given(app, "--preset")) throw UsageError("--sim-config and --preset are exclusive");
  if (given(app, "--sim-config")) cfg.sim = parse_sim_config(KeyValueFile::load(f.sim_config));
  if (given(app, "--preset")) {
    std::istringstream in("preset = " + f.preset + "\n");
    cfg.sim = parse_sim_config(KeyValueFile::parse(in, "--preset"));
  }
  if (given(app, "--trace")) {
    cfg.trace_path = f.trace;
    if (!given(app, "--sim-config") && !given(app, "--preset")) cfg.sim.reset();
  }
  if (given(app, "--temperatures")) cfg.temperatures_path = f.temperatures;
  if (given(app, "--target")) cfg.target = f.target;
  if (given(app, "--pool")) cfg.pool = parse_pool(f.pool);
  if (given(app, "--out-dir")) cfg.out_dir = f.out_dir;
  if (given(app, "--seed")) cfg.seed = f.seed;
  if (given(app, "--runs")) {
    if (!cfg.sim) throw UsageError("--runs needs a simulator config");
    cfg.sim->runs = f.runs;
  }
  if (given(app, "--n-trees")) cfg.n_trees = f.n_trees;
  if (given(app, "--cv-trees")) cfg.cv_trees = f.cv_trees;
  if (given(app, "--k-grid")) cfg.k_grid = f.k_grid;
  if (given(app, "--alpha")) cfg.alpha = f.alpha;
  if (given(app, "--folds")) cfg.folds = f.folds;
  if (given(app, "--k-tolerance")) cfg.k_tolerance = f.k_tolerance;
  if (given(app, "--stepwise-full")) cfg.stepwise_full = true;
  if (given(app, "--tasks")) cfg.tasks = f.tasks;
  if (given(app, "--reserved") && given(app, "--no-reserved")) throw UsageError("--reserved and --no-reserved are exclusive");
  if (given(app, "--reserved")) cfg.reserved = std::set<int>(f.reserved.begin(), f.reserved.end());
  if (given(app, "--no-reserved")) cfg.reserved.clear();
  if (given(app, "--policy")) cfg.policy = parse_policy(f.policy);
  if (given(app, "--trials")) cfg.trials = f.trials;
  if (given(app, "--history-runs")) cfg.history_runs = f.history_runs;
  if (given(app, "--window")) cfg.window = f.window;
  if (given(app, "--hidden")) cfg.hidden = f.hidden;
  if (given(app, "--epochs")) cfg.train.epochs = f.epochs;
  if (given(app, "--batch-size")) cfg.train.batch_size = f.batch_size;
  if (given(app, "--learning-rate")) cfg.train.learning_rate = f.learning_rate;
  if (given(app, "--patience")) cfg.train.patience = f.patience;
  if (given(app, "--bootstrap")) cfg.bootstrap = f.bootstrap;
  if (given(app, "--bootstrap-mode")) cfg.bootstrap_mode = parse_bootstrap_mode(f.bootstrap_mode);
  if (given(app, "--train-fraction")) cfg.train_fraction = f.train_fraction;
  if (given(app, "--val-fraction")) cfg.val_fraction = f.val_fraction;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Feature selection and correlation-aware task-to-core allocation pipeline"};
  app.require_subcommand(1);
  Flags flags;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"simulate", "Generate feature and temperature traces from the simulator"},
      {"select", "RF importance, top-k CV sweep and backward stepwise"},
      {"allocate", "Correlation-aware and random plans, plus paired simulated trials"},
      {"train", "Train FCN, FCN+RF and FCN+RF+BS models"},
      {"evaluate", "Score saved models on the held-out test rows"},
      {"report", "Run every stage in order"},
  };
  std::vector<CLI::App*> subs;
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    add_options(*sub, flags);
    subs.push_back(sub);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    for (auto* sub : subs) {
      if (!sub->parsed()) continue;
      const auto cfg = build_config(*sub, flags);
      const auto& name = sub->get_name();
      if (name == "simulate") {
        run_simulate(cfg);
      } else if (name == "select") {
        run_select(cfg);
      } else if (name == "allocate") {
        run_allocate(cfg);
      } else if (name == "train") {
        run_train(cfg);
      } else if (name == "evaluate") {
        run_evaluate(cfg);
      } else {
        run_report(cfg);
      }
      std::cout << name << ": wrote outputs to " << cfg.out_dir << '\n';
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
