#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "deeppce.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace deeppce;

namespace {

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("deeppce_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  Result run(const std::string& args) {
    const fs::path out = dir_ / "stdout.txt";
    const fs::path err = dir_ / "stderr.txt";
    const std::string cmd = std::string(DEEPPCE_CLI_PATH) + " " + args + " >" + out.string() + " 2>" + err.string();
    const int status = std::system(cmd.c_str());
    Result r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
  }

  std::string p(const std::string& name) const { return (dir_ / name).string(); }

  void write(const std::string& name, const std::string& text) {
    std::ofstream out(dir_ / name);
    out << text;
  }

  fs::path dir_;
};

// The model seed matches the planted circuit's, so both share a region graph.
const char* kPlantedConfig = R"({
  "model": {"scope_size": 1, "max_order": 2, "n_nodes": 3, "batch_norm": false, "seed": 4},
  "train": {"learning_rate": 0.01, "batch_size": 16, "max_epochs": 400, "early_stop_patience": 100, "n_restarts": 3},
  "data": {"val_fraction": 0.2},
  "seed": 1
})";

}  // namespace

TEST_F(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(run("--help").code, 0);
  const Result none = run("");
  EXPECT_NE(none.code, 0);
  EXPECT_EQ(none.err.rfind("error: usage:", 0), 0u);
  const Result missing = run("train --data x.csv");
  EXPECT_EQ(missing.code, 2);
  EXPECT_NE(missing.err.find("--config"), std::string::npos);
}

TEST_F(Cli, GenDataValidatesAndIsDeterministic) {
  const Result zero = run("gen-data --problem 100d --n 0 --out " + p("z"));
  EXPECT_EQ(zero.code, 1);
  EXPECT_EQ(zero.err.rfind("error: invalid-argument:", 0), 0u);
  EXPECT_EQ(std::count(zero.err.begin(), zero.err.end(), '\n'), 1);
  ASSERT_EQ(run("gen-data --problem 100d --n 50 --seed 3 --out " + p("a")).code, 0);
  ASSERT_EQ(run("gen-data --problem 100d --n 50 --seed 3 --out " + p("b")).code, 0);
  EXPECT_EQ(slurp(p("a/data.csv")), slurp(p("b/data.csv")));
  const Dataset ds = load_csv(p("a/data.csv"), marginals_100d());
  EXPECT_EQ(ds.size(), 50);
  EXPECT_EQ(ds.input_dim(), 100);
  const json manifest = json::parse(slurp(p("a/manifest.json")));
  EXPECT_EQ(manifest["command"], "gen-data");
  EXPECT_EQ(manifest["config"]["seed"], 3);
  EXPECT_EQ(manifest["files"][0]["name"], "data.csv");
  EXPECT_NE(run("gen-data --problem nope --out " + p("c")).code, 0);
}

TEST_F(Cli, TrainPredictAndQueryPlantedModel) {
  ASSERT_EQ(run("gen-data --problem planted --n 1000 --seed 4 --format tensor --out " + p("data")).code, 0);
  write("run.json", kPlantedConfig);
  const Result train = run("train --config " + p("run.json") + " --data " + p("data/data.tensor") + " --out-model " +
                           p("run/model.bin"));
  ASSERT_EQ(train.code, 0) << train.err;
  const json report = json::parse(slurp(p("run/train_report.json")));
  EXPECT_EQ(report["restarts"].size(), 3u);
  EXPECT_EQ(report["config"]["model"]["n_nodes"], 3);
  EXPECT_TRUE(fs::exists(p("run/manifest.json")));

  const Result pred = run("predict --model " + p("run/model.bin") + " --data " + p("data/data.tensor") + " --out " +
                          p("pred"));
  ASSERT_EQ(pred.code, 0) << pred.err;
  const json pr = json::parse(slurp(p("pred/predict_report.json")));
  EXPECT_LT(pr["relative_mse"].get<double>(), 1e-3);

  // The planted model reproduces its own data exactly.
  const Result self = run("predict --model " + p("data/planted_model.bin") + " --data " + p("data/data.tensor") +
                          " --out " + p("self"));
  ASSERT_EQ(self.code, 0) << self.err;
  EXPECT_EQ(json::parse(slurp(p("self/predict_report.json")))["relative_mse"].get<double>(), 0.0);

  const CircuitModel model = folded_copy(load(p("run/model.bin")));
  const Result m = run("moments --model " + p("run/model.bin") + " --query mean --out " + p("mom"));
  ASSERT_EQ(m.code, 0) << m.err;
  const double reported = json::parse(slurp(p("mom/moments.json")))["result"][0][0].get<double>();
  EXPECT_NEAR(reported, mean(model)[0], 1e-15 * std::max(1.0, std::abs(reported)));

  // Conditioning on every input is a point evaluation.
  const Result point = run("moments --model " + p("run/model.bin") +
                           " --query cond-mean --condition 1=0.3,2=-1.2,3=0.7,4=2 --out " + p("pt"));
  ASSERT_EQ(point.code, 0) << point.err;
  Eigen::MatrixXd x(1, 4);
  x << 0.3, -1.2, 0.7, 2.0;
  const double at_point = json::parse(slurp(p("pt/moments.json")))["result"][0][0].get<double>();
  EXPECT_NEAR(at_point, forward(model, x)(0, 0), 1e-10 * std::max(1.0, std::abs(at_point)));

  EXPECT_NE(run("moments --model " + p("run/model.bin") + " --query cond-mean").code, 0);
  EXPECT_NE(run("moments --model " + p("run/model.bin") + " --query cov-cond-exp --set 9").code, 0);
  EXPECT_NE(run("moments --model " + p("run/model.bin") + " --query median").code, 0);
  for (const char* q : {"cov", "cov-cond-exp --set 1,2", "exp-cond-cov --set 3", "cond-cov --condition 2=0.5"}) {
    EXPECT_EQ(run("moments --model " + p("run/model.bin") + " --query " + q).code, 0) << q;
  }
}

TEST_F(Cli, TrainReportsEveryRestart) {
  ASSERT_EQ(run("gen-data --problem planted --n 200 --seed 5 --out " + p("data")).code, 0);
  write("run.json", R"({"model": {"n_nodes": 3, "max_order": 2, "batch_norm": false}, "train": {"max_epochs": 2}})");
  const Result r = run("train --config " + p("run.json") + " --data " + p("data/data.csv") + " --restarts 20 --out-model " +
                       p("run/model.bin"));
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string csv = slurp(p("run/restarts.csv"));
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 21);
  const json meta = load_with_metadata(p("run/model.bin")).metadata;
  EXPECT_EQ(meta["run_config"]["train"]["n_restarts"], 20);
}

TEST_F(Cli, ConfigValidation) {
  ASSERT_EQ(run("gen-data --problem planted --n 100 --out " + p("data")).code, 0);
  write("bad_key.json", R"({"model": {"n_nodes": 3, "num_sums": 4}})");
  const Result bad = run("train --config " + p("bad_key.json") + " --data " + p("data/data.csv") + " --out-model " +
                         p("m.bin"));
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.err.find("model.num_sums"), std::string::npos);
  write("ok.json", R"({"model": {"n_nodes": 3}})");
  const Result missing = run("train --config " + p("ok.json") + " --data " + p("nope.csv") + " --out-model " + p("m.bin"));
  EXPECT_EQ(missing.code, 1);
  EXPECT_EQ(missing.err.rfind("error: io:", 0), 0u);
  EXPECT_NE(run("train --config " + p("absent.json") + " --data " + p("data/data.csv")).code, 0);
}

TEST_F(Cli, PredictShapeMismatch) {
  ASSERT_EQ(run("gen-data --problem planted --n 50 --out " + p("a")).code, 0);
  ASSERT_EQ(run("gen-data --problem planted --n 50 --d-in 5 --out " + p("b")).code, 0);
  const Result r = run("predict --model " + p("a/planted_model.bin") + " --data " + p("b/data.csv") + " --out " + p("o"));
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err.rfind("error: dimension-mismatch:", 0), 0u);
}

TEST_F(Cli, SobolOnUnivariateAndNormalizedRows) {
  CircuitConfig c;
  c.d_in = 3;
  c.d_out = 2;
  c.scope_size = 1;
  c.max_order = 3;
  c.width = 2;
  c.batch_norm = false;
  CircuitModel m = build(c);
  // Only the region holding x_1 varies: S = (1, 0, 0) for both outputs.
  for (std::size_t r = 0; r < m.leaves.size(); ++r) {
    auto& w = m.leaves[r].sum.weights;
    w.setZero();
    w.col(0).setOnes();
    if (m.graph.partition[r][0] == 0) w.col(1) << 0.5, -1.0;
  }
  for (auto& layer : m.blocks)
    for (auto& s : layer)
      if (s.weights.size() != 0) s.weights.setIdentity();
  m.head.weights << 1.0, 2.0, -1.0, 0.5;
  save(m, p("uni.bin"));
  const Result r = run("sobol --model " + p("uni.bin") + " --out " + p("s"));
  ASSERT_EQ(r.code, 0) << r.err;
  const json uni = json::parse(slurp(p("s/sobol_report.json")))["first_order"];
  for (int o = 0; o < 2; ++o) {
    EXPECT_NEAR(uni[o][0].get<double>(), 1.0, 1e-12);
    EXPECT_NEAR(uni[o][1].get<double>(), 0.0, 1e-12);
    EXPECT_NEAR(uni[o][2].get<double>(), 0.0, 1e-12);
  }
  EXPECT_EQ(slurp(p("s/sobol.csv")).rfind("output,x_1,x_2,x_3,zero_variance\n", 0), 0u);

  ASSERT_EQ(run("gen-data --problem planted --n 400 --d-in 4 --seed 2 --out " + p("d")).code, 0);
  const Result n = run("sobol --model " + p("d/planted_model.bin") + " --normalize-sum --mc-baseline 6000 --out " + p("n"));
  ASSERT_EQ(n.code, 0) << n.err;
  const json report = json::parse(slurp(p("n/sobol_report.json")));
  double sum = 0.0;
  for (const auto& v : report["first_order"][0]) sum += v.get<double>();
  EXPECT_NEAR(sum, 1.0, 1e-12);
  EXPECT_EQ(report["mc_evaluations"], 6000);
  EXPECT_GT(report["speedup"].get<double>(), 0.0);
}

TEST_F(Cli, McCheckRunsAndIsDeterministic) {
  ASSERT_EQ(run("gen-data --problem planted --n 50 --seed 6 --out " + p("d")).code, 0);
  const std::string base = "mc-check --model " + p("d/planted_model.bin") + " --sizes 2000 --nested 50x20 --seed 9 ";
  const Result one = run(base + "--runs 1 --out " + p("x"));
  EXPECT_EQ(one.code, 1);
  EXPECT_EQ(one.err.rfind("error: invalid-argument:", 0), 0u);
  ASSERT_EQ(run(base + "--runs 5 --out " + p("a")).code, 0);
  ASSERT_EQ(run(base + "--runs 5 --out " + p("b")).code, 0);
  const std::string a = slurp(p("a/mc_check.csv"));
  EXPECT_EQ(a, slurp(p("b/mc_check.csv")));
  EXPECT_EQ(std::count(a.begin(), a.end(), '\n'), 1 + 6);
  EXPECT_NE(a.find("cond-var"), std::string::npos);
}
