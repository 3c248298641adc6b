#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"
#include "simcal/simcal.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace simcal;

namespace {

const fs::path kTmp = SIMCAL_TEST_TMP;

int run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " " + std::string(SIMCAL_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json load_json(const fs::path& p) { return json::parse(slurp(p)); }

int count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) n += !line.empty();
  return n;
}

void write_csv(const fs::path& p, const Matrix& X, const Vector& y) {
  std::ofstream out(p);
  for (Eigen::Index j = 0; j < X.cols(); ++j) out << "x" << j + 1 << ",";
  out << "y\n";
  char buf[40];
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g,", X(i, j));
      out << buf;
    }
    std::snprintf(buf, sizeof buf, "%.17g\n", y[i]);
    out << buf;
  }
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(kTmp);
    fs::create_directories(kTmp);
    Rng rng(42);
    Matrix X = simcal::testing::random_matrix(80, 6, rng);
    Vector y = 1.2 * X.col(1) - 0.9 * X.col(4) + simcal::testing::random_vector(80, rng);
    write_csv(kTmp / "lin.csv", X, y);

    // Column 2 exactly uncorrelated with y and column 1: nothing enters after {1}.
    Matrix Z(40, 2);
    Z.col(0) = simcal::testing::random_vector(40, rng);
    Vector yz = simcal::testing::random_vector(40, rng);
    Matrix B(40, 3);
    B << Vector::Ones(40), Z.col(0), yz;
    Vector c = simcal::testing::random_vector(40, rng);
    c -= B * (B.transpose() * B).ldlt().solve(B.transpose() * c);
    Z.col(1) = c;
    write_csv(kTmp / "orth.csv", Z, yz);

    Matrix S(8, 2);
    S << -4, 0.3, -3, -1.2, -2, 0.8, -1, 0.1, 1, -0.5, 2, 1.7, 3, -0.9, 4, 0.4;
    Vector ys(8);
    ys << 0, 0, 0, 0, 1, 1, 1, 1;
    write_csv(kTmp / "sep.csv", S, ys);
  }
  static std::string data(const char* f) { return "--data " + (kTmp / f).string(); }
};

}  // namespace

TEST_F(Cli, TestSubcommandDeterministic) {
  const std::string args = "test " + data("lin.csv") + " --restrict 2 --n-sims 30 --seed 7 --out ";
  ASSERT_EQ(run(args + (kTmp / "t1").string() + " --jobs 1"), 0);
  ASSERT_EQ(run(args + (kTmp / "t2").string() + " --jobs 3"), 0);
  EXPECT_EQ(slurp(kTmp / "t1/test.json"), slurp(kTmp / "t2/test.json"));
  const json j = load_json(kTmp / "t1/test.json");
  EXPECT_EQ(j["N"], 30);
  EXPECT_EQ(j["lambdas_simulated"].size(), 30u);
  EXPECT_EQ(j["variant"], "plain");
  EXPECT_EQ(j["restrict"], json::array({2}));
  const json m = load_json(kTmp / "t1/manifest.json");
  EXPECT_EQ(m["subcommand"], "test");
  EXPECT_EQ(m["master_seed"], 7);
  EXPECT_EQ(m["config_hash"], load_json(kTmp / "t2/manifest.json")["config_hash"]);
}

TEST_F(Cli, SeedFromEnvironment) {
  ASSERT_EQ(run("test " + data("lin.csv") + " --n-sims 10 --out " + (kTmp / "e1").string(), "SIMCAL_SEED=11"), 0);
  ASSERT_EQ(run("test " + data("lin.csv") + " --n-sims 10 --seed 11 --out " + (kTmp / "e2").string()), 0);
  EXPECT_EQ(slurp(kTmp / "e1/test.json"), slurp(kTmp / "e2/test.json"));
}

TEST_F(Cli, PlusVariantWithAllExceedances) {
  ASSERT_EQ(run("test " + data("orth.csv") + " --restrict x1 --n-sims 25 --variant plus --out " +
                (kTmp / "plus").string()),
            0);
  const json j = load_json(kTmp / "plus/test.json");
  EXPECT_EQ(j["exceed_count"], 25);
  EXPECT_EQ(j["p_value"].get<double>(), 1.0);
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run("test " + data("lin.csv") + " --response nope"), 2);
  EXPECT_EQ(run("test --data " + (kTmp / "missing.csv").string()), 2);
  EXPECT_EQ(run("test " + data("lin.csv") + " --restrict 99"), 2);
  EXPECT_EQ(run("test " + data("lin.csv") + " --family binary"), 2);
  EXPECT_EQ(run("bogus"), 2);
  EXPECT_EQ(run("test " + data("sep.csv") + " --family binary --restrict 1"), 3);
}

TEST_F(Cli, SelectAndReplay) {
  const fs::path zero = kTmp / "s0";
  ASSERT_EQ(run("select " + data("lin.csv") + " --alpha 0 --n-sims 20 --out " + zero.string()), 0);
  const json z = load_json(zero / "selection.json");
  EXPECT_TRUE(z["selected"].empty());
  EXPECT_EQ(count_lines(zero / "trace.csv") - 1, z["halted_at_step"].get<int>());

  const fs::path live = kTmp / "s1", survey = kTmp / "s2", rep = kTmp / "r1";
  ASSERT_EQ(run("select " + data("lin.csv") + " --alpha 0.1 --n-sims 30 --seed 3 --out " + live.string()), 0);
  ASSERT_EQ(run("select " + data("lin.csv") + " --alpha 0.1 --survey-alpha 0.95 --n-sims 30 --seed 3 --out " +
                survey.string()),
            0);
  const json a = load_json(live / "selection.json"), b = load_json(survey / "selection.json");
  EXPECT_EQ(a["selected"], b["selected"]);
  EXPECT_EQ(count_lines(survey / "trace.csv") - 1, static_cast<int>(b["p_seq"].size()));
  ASSERT_EQ(run("replay --trace " + (survey / "trace.csv").string() + " --alpha-grid 0.1 --out " + rep.string()), 0);
  std::ifstream in(rep / "replay.csv");
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header, "alpha,accepted_steps,selected");
  std::string sel;
  for (std::size_t k = 0; k < a["selected"].size(); ++k)
    sel += (k ? ";" : "") + std::to_string(a["selected"][k].get<int>());
  EXPECT_EQ(row, "0.10000000000000001," + std::to_string(a["accepted_steps"].get<int>()) + "," + sel);
}

TEST_F(Cli, PathAndCalibrate) {
  const fs::path p = kTmp / "path";
  ASSERT_EQ(run("path " + data("lin.csv") + " --max-steps 3 --out " + p.string()), 0);
  EXPECT_EQ(count_lines(p / "path.csv"), 4);

  const fs::path c = kTmp / "cal";
  ASSERT_EQ(run("calibrate " + data("lin.csv") + " --restrict 2,5 --target-beta 0.5,1,-1 --target-sigma 2 --out " +
                c.string()),
            0);
  const json j = load_json(c / "calibrate.json");
  const auto beta = j["fit_calibrated"]["beta"].get<std::vector<double>>();
  ASSERT_EQ(beta.size(), 3u);
  EXPECT_NEAR(beta[0], 0.5, 1e-8);
  EXPECT_NEAR(beta[1], 1.0, 1e-8);
  EXPECT_NEAR(beta[2], -1.0, 1e-8);
  EXPECT_NEAR(j["fit_calibrated"]["sigma"].get<double>(), 2.0, 1e-8);
  EXPECT_EQ(run("calibrate " + data("lin.csv") + " --restrict 2 --target-beta 0.5"), 2);
}

TEST_F(Cli, SimulateAndReport) {
  const fs::path cfg = kTmp / "scenario.json";
  std::ofstream(cfg) << R"({"n": 40, "p": 6, "n_active": 1, "snr_target": 1.0, "N": 10,
                           "n_replicates": 12, "master_seed": 5})";
  const fs::path root = kTmp / "study";
  ASSERT_EQ(run("simulate --config " + cfg.string() + " --out " + (root / "a").string()), 0);
  const fs::path sel_cfg = kTmp / "sel.json";
  std::ofstream(sel_cfg) << R"({"study": "selection", "n": 40, "p": 6, "n_active": 2, "snr_target": 1.0,
                              "N": 10, "n_replicates": 6, "alpha_grid": [0.05, 0.1], "alpha": 0.1})";
  ASSERT_EQ(run("simulate --config " + sel_cfg.string() + " --out " + (root / "b").string()), 0);

  EXPECT_EQ(count_lines(root / "a/qq.csv") - 1, 12);
  std::ifstream qq(root / "a/qq.csv");
  std::string line;
  std::getline(qq, line);
  double prev = -1.0;
  while (std::getline(qq, line)) {
    const double v = std::stod(line.substr(line.find(',') + 1));
    EXPECT_GE(v, prev);
    prev = v;
  }
  const json m = load_json(root / "a/metrics.json");
  EXPECT_TRUE(m.contains("ks_two_sided"));

  ASSERT_EQ(run("report --in " + root.string() + " --out " + (kTmp / "rep1").string()), 0);
  ASSERT_EQ(run("report --in " + root.string() + " --out " + (kTmp / "rep2").string()), 0);
  for (const char* f : {"report.json", "ks_table.csv", "selection_table.csv", "qq_a.csv"})
    EXPECT_EQ(slurp(kTmp / "rep1" / f), slurp(kTmp / "rep2" / f)) << f;
  const json r = load_json(kTmp / "rep1/report.json");
  ASSERT_EQ(r["scenarios"].size(), 2u);
  EXPECT_EQ(r["scenarios"][1]["metrics"]["fwer"], load_json(root / "b/metrics.json")["fwer"]);

  fs::create_directories(kTmp / "empty");
  EXPECT_EQ(run("report --in " + (kTmp / "empty").string() + " --out " + (kTmp / "rep3").string()), 2);
  std::ofstream(kTmp / "badcfg.json") << R"({"n": 40, "bogus": 1})";
  EXPECT_EQ(run("simulate --config " + (kTmp / "badcfg.json").string() + " --out " + (kTmp / "x").string()), 2);
}
