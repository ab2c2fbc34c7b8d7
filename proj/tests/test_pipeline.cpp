#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "corealloc/pipeline.hpp"

using namespace corealloc;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    path_ = fs::temp_directory_path() /
            ("corealloc_" + std::string(info->name()) + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }
  std::string operator/(const std::string& f) const { return (path_ / f).string(); }

 private:
  fs::path path_;
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

std::string slurp(const fs::path& p) { return read_file(p); }

std::map<std::string, std::string> directory_contents(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) out[e.path().filename().string()] = slurp(e.path());
  return out;
}

int run_cli(const std::string& args, const std::string& log) {
  const std::string cmd = std::string("\"") + COREALLOC_CLI_PATH + "\" " + args + " >\"" + log + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

/// y = 3 x1 - 2 x2 + noise with three distractors.
std::string planted_trace(const std::string& path, std::size_t n = 200, std::uint64_t seed = 3) {
  Rng rng(seed);
  Eigen::MatrixXd v(static_cast<Eigen::Index>(n), 6);
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    for (Eigen::Index c = 0; c < 5; ++c) v(r, c) = standard_normal(rng);
    v(r, 5) = 3.0 * v(r, 0) - 2.0 * v(r, 1) + 0.1 * standard_normal(rng);
  }
  save_trace(path, FeatureMatrix({"x1", "x2", "x3", "x4", "x5", "y"}, v));
  return path;
}

PipelineConfig small_config(const TempDir& dir) {
  PipelineConfig c;
  c.out_dir = dir / "out";
  c.n_trees = 30;
  c.cv_trees = 10;
  c.trials = 4;
  c.history_runs = 5;
  c.hidden = {8};
  c.train.epochs = 20;
  c.bootstrap = 4;
  return c;
}

PipelineConfig small_sim(const TempDir& dir, const std::string& sim_text) {
  auto c = small_config(dir);
  std::istringstream in(sim_text);
  c.sim = parse_sim_config(KeyValueFile::parse(in));
  return c;
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

}  // namespace

TEST(Simulate, MinimalTwoCoreRun) {
  TempDir dir;
  const auto cfg = small_sim(dir, "cores = 2\nruns = 10\ntasks_per_run = 1\n");
  run_simulate(cfg);
  const auto features = load_trace(cfg.out("features.csv").string());
  EXPECT_EQ(features.matrix.rows(), 10u);
  EXPECT_TRUE(features.matrix.has_column("energy"));
  EXPECT_TRUE(fs::exists(cfg.out("temperatures.csv")));
  const auto manifest = read_json(cfg.out("manifest_simulate.json"));
  EXPECT_EQ(manifest["stage"], "simulate");
  EXPECT_TRUE(manifest["outputs"].contains("features.csv"));
}

TEST(Simulate, RerunIsByteIdentical) {
  TempDir a, b;
  auto ca = small_sim(a, "cores = 3\nruns = 6\n");
  auto cb = small_sim(b, "cores = 3\nruns = 6\n");
  run_simulate(ca);
  run_simulate(cb);
  EXPECT_EQ(directory_contents(ca.out_dir), directory_contents(cb.out_dir));
  cb.seed = 2;
  run_simulate(cb);
  EXPECT_NE(slurp(ca.out("features.csv")), slurp(cb.out("features.csv")));
}

TEST(Simulate, NeedsSimulator) {
  TempDir dir;
  auto cfg = small_config(dir);
  cfg.trace_path = dir / "t.csv";
  EXPECT_THROW(run_simulate(cfg), UsageError);
}

TEST(Select, PlantedFeaturesRankFirst) {
  TempDir dir;
  auto cfg = small_config(dir);
  cfg.trace_path = planted_trace(dir / "trace.csv");
  cfg.target = "y";
  const auto rep = run_select(cfg);
  std::istringstream imp(slurp(cfg.out("importance.csv")));
  std::string header, first, second;
  std::getline(imp, header);
  std::getline(imp, first);
  std::getline(imp, second);
  EXPECT_EQ(header, "feature,importance,rank");
  const std::set<std::string> top = {first.substr(0, first.find(',')), second.substr(0, second.find(','))};
  EXPECT_EQ(top, (std::set<std::string>{"x1", "x2"}));
  EXPECT_EQ(std::set<std::string>(rep.stepwise.final_features.begin(), rep.stepwise.final_features.end()),
            (std::set<std::string>{"x1", "x2"}));
  const auto sel = read_json(cfg.out("selection.json"));
  EXPECT_EQ(sel["target"], "y");
  for (const auto* f : {"cv_curve.csv", "stepwise.csv", "forest.json", "manifest_select.json"}) {
    EXPECT_TRUE(fs::exists(cfg.out(f))) << f;
  }
}

TEST(Select, FullGridRunsStepwiseOnEveryFeature) {
  TempDir dir;
  auto cfg = small_config(dir);
  cfg.trace_path = planted_trace(dir / "trace.csv");
  cfg.target = "y";
  cfg.k_grid = {5};
  const auto rep = run_select(cfg);
  EXPECT_EQ(rep.topk.best_k, 5u);
  EXPECT_EQ(rep.stepwise_input.size(), 5u);
  EXPECT_EQ(rep.stepwise.iterations.front().features.size(), 5u);
}

TEST(Select, MissingTargetIsNamed) {
  TempDir dir;
  auto cfg = small_config(dir);
  cfg.trace_path = planted_trace(dir / "trace.csv");
  cfg.target = "latency";
  try {
    run_select(cfg);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("'latency'"), std::string::npos);
  }
}

TEST(Allocate, TwoClusterPairSpansClusters) {
  TempDir dir;
  auto cfg = small_sim(dir, "preset = two-cluster\nruns = 20\n");
  run_simulate(cfg);
  run_allocate(cfg);
  const auto j = read_json(cfg.out("allocation.json"));
  const auto plan = j["correlation_plan"].get<std::vector<int>>();
  ASSERT_EQ(plan.size(), 2u);
  const auto cluster = [](int c) { return c <= 3 ? 0 : 1; };
  EXPECT_NE(cluster(plan[0]), cluster(plan[1]));
  EXPECT_EQ(j["comparison"]["trials"], 4);
  EXPECT_TRUE(fs::exists(cfg.out("comparison.csv")));
}

TEST(Allocate, SingleTaskTakesLowestScoringCore) {
  TempDir dir;
  auto cfg = small_sim(dir, "preset = two-cluster\nruns = 10\n");
  cfg.tasks = 1;
  run_simulate(cfg);
  run_allocate(cfg);
  const auto j = read_json(cfg.out("allocation.json"));
  const auto scores = j["scores"].get<std::vector<double>>();
  const auto ids = j["core_ids"].get<std::vector<int>>();
  int best = -1;
  double best_score = 2.0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] == 0) continue;
    if (scores[i] < best_score) {
      best_score = scores[i];
      best = ids[i];
    }
  }
  EXPECT_EQ(j["plan"].get<std::vector<int>>(), std::vector<int>{best});
}

TEST(Allocate, RandomPolicyIsReproducible) {
  TempDir a, b;
  for (const auto* d : {&a, &b}) {
    auto cfg = small_sim(*d, "cores = 6\nruns = 5\n");
    cfg.policy = AllocationPolicy::Random;
    cfg.tasks = 3;
    run_simulate(cfg);
    run_allocate(cfg);
  }
  const auto ja = read_json(a.path() / "out" / "allocation.json");
  const auto jb = read_json(b.path() / "out" / "allocation.json");
  EXPECT_EQ(ja["plan"], jb["plan"]);
  EXPECT_EQ(ja["plan"], ja["random_plan"]);
  for (int c : ja["plan"].get<std::vector<int>>()) EXPECT_NE(c, 0);
}

TEST(Allocate, ExternalTemperatureTrace) {
  TempDir dir;
  write_text(dir / "temps.csv", "step,core_0,core_1,core_2\n0,40,40,41\n1,41,42,41\n2,42,44,40\n3,41,43,42\n");
  auto cfg = small_config(dir);
  cfg.temperatures_path = dir / "temps.csv";
  cfg.reserved.clear();
  run_allocate(cfg);
  const auto j = read_json(cfg.out("allocation.json"));
  EXPECT_EQ(j["samples"], 4);
  EXPECT_FALSE(j.contains("comparison"));
  EXPECT_FALSE(fs::exists(cfg.out("comparison.csv")));
}

TEST(Train, MetricsAndParameterCounts) {
  TempDir dir;
  auto cfg = small_config(dir);
  cfg.trace_path = planted_trace(dir / "trace.csv");
  cfg.target = "y";
  run_select(cfg);
  run_train(cfg);
  std::istringstream in(slurp(cfg.out("metrics.csv")));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "model,mse,params");
  std::vector<std::string> names;
  std::vector<std::size_t> params;
  while (std::getline(in, line)) {
    names.push_back(line.substr(0, line.find(',')));
    params.push_back(std::stoul(line.substr(line.rfind(',') + 1)));
  }
  ASSERT_EQ(names, (std::vector<std::string>{"FCN", "FCN+RF", "FCN+RF+BS"}));
  EXPECT_GT(params[0], params[1]);
  EXPECT_EQ(params[1], params[2]);
  // 5 inputs into 8 hidden units, one output.
  EXPECT_EQ(params[0], FcnModel::parameter_count({5, 8, 1}));

  const auto eval = run_evaluate(cfg);
  ASSERT_EQ(eval.size(), 3u);
  EXPECT_EQ(slurp(cfg.out("metrics.csv")), metrics_csv(eval));
}

TEST(Train, EvaluateWithoutTrainIsMissingModel) {
  TempDir dir;
  auto cfg = small_config(dir);
  cfg.trace_path = planted_trace(dir / "trace.csv");
  cfg.target = "y";
  try {
    run_evaluate(cfg);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("run train first"), std::string::npos);
  }
}

TEST(Train, TrainWithoutSelectIsMissingSelection) {
  TempDir dir;
  auto cfg = small_config(dir);
  cfg.trace_path = planted_trace(dir / "trace.csv");
  cfg.target = "y";
  EXPECT_THROW(run_train(cfg), DataError);
}

TEST(Report, DeterministicAcrossDirectories) {
  TempDir a, b;
  auto ca = small_sim(a, "cores = 4\nruns = 40\n");
  auto cb = small_sim(b, "cores = 4\nruns = 40\n");
  run_report(ca);
  run_report(cb);
  const auto da = directory_contents(ca.out_dir);
  EXPECT_EQ(da, directory_contents(cb.out_dir));
  EXPECT_TRUE(da.contains("report.json"));
  EXPECT_TRUE(da.contains("manifest_report.json"));
}

TEST(Cli, SimulateAndRerun) {
  TempDir dir;
  write_text(dir / "sim.cfg", "cores = 2\nruns = 10\ntasks_per_run = 1\n");
  for (const auto* out : {"a", "b"}) {
    EXPECT_EQ(run_cli("simulate --sim-config \"" + (dir / "sim.cfg") + "\" --out-dir \"" + (dir / out) + "\"", dir / "log"), 0);
  }
  EXPECT_EQ(slurp(dir.path() / "a" / "features.csv"), slurp(dir.path() / "b" / "features.csv"));
  EXPECT_EQ(load_trace((dir.path() / "a" / "features.csv").string()).matrix.rows(), 10u);
}

TEST(Cli, MalformedConfigNamesLine) {
  TempDir dir;
  write_text(dir / "sim.cfg", "cores = 2\nruns = 10\nthis is wrong\n");
  EXPECT_EQ(run_cli("simulate --sim-config \"" + (dir / "sim.cfg") + "\" --out-dir \"" + (dir / "out") + "\"", dir / "log"), 1);
  EXPECT_NE(slurp(dir.path() / "log").find("sim.cfg:3"), std::string::npos);
}

TEST(Cli, ExitCodes) {
  TempDir dir;
  EXPECT_EQ(run_cli("--help", dir / "log"), 0);
  EXPECT_EQ(run_cli("", dir / "log"), 1);
  EXPECT_EQ(run_cli("select --bogus", dir / "log"), 1);
  EXPECT_EQ(run_cli("select", dir / "log"), 1);
  EXPECT_EQ(run_cli("select --trace \"" + (dir / "missing.csv") + "\" --out-dir \"" + (dir / "out") + "\"", dir / "log"), 2);
  planted_trace(dir / "trace.csv");
  EXPECT_EQ(run_cli("select --trace \"" + (dir / "trace.csv") + "\" --target nope --out-dir \"" + (dir / "out") + "\"",
                    dir / "log"),
            2);
  EXPECT_NE(slurp(dir.path() / "log").find("'nope'"), std::string::npos);
  EXPECT_EQ(run_cli("select --trace \"" + (dir / "trace.csv") + "\" --target y --n-trees 20 --cv-trees 5 --out-dir \"" +
                        (dir / "out") + "\"",
                    dir / "log"),
            0);
  EXPECT_TRUE(fs::exists(dir.path() / "out" / "selection.json"));
}
