#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "cli.hpp"

using namespace nmg;
using nlohmann::json;

namespace {

struct Invocation {
  int code;
  std::string out;
  std::string err;
};

Invocation invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "nmg");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::main(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("nmg_cli_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

json small_config() {
  return json::parse(R"({
    "name": "small",
    "system": {"dim": 2, "hamiltonian": "sigma_z", "channels": ["sigma_z"]},
    "initial_state": "plus",
    "kernel": {"type": "ou", "gamma": 2.0, "lambda": 1.0},
    "grid": {"dt": 0.02, "n_steps": 20},
    "trajectories": 400,
    "seed": 3,
    "verify": [{"type": "dephasing_closed_form"}, {"type": "exact_commuting"}, {"type": "trace"}]
  })");
}

std::string write_config(const std::filesystem::path& dir, const json& tree) {
  const auto path = dir / "config.json";
  std::ofstream(path) << tree.dump(2);
  return path.string();
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Config, PresetsParse) {
  for (const auto& name : cli::preset_names()) {
    const auto c = cli::parse_config(cli::preset(name));
    EXPECT_EQ(c.name, name);
    EXPECT_NO_THROW(cli::build_kernel(c)) << name;
  }
  EXPECT_THROW(cli::preset("nope"), cli::ConfigError);
}

TEST(Config, FieldLevelErrors) {
  auto tree = small_config();
  tree["grid"]["dt"] = -1.0;
  try {
    cli::parse_config(tree);
    FAIL();
  } catch (const cli::ConfigError& e) {
    EXPECT_EQ(e.field(), "grid.dt");
  }
  tree = small_config();
  tree["kernel"]["gamma"] = "big";
  try {
    cli::parse_config(tree);
    FAIL();
  } catch (const cli::ConfigError& e) {
    EXPECT_EQ(e.field(), "kernel.gamma");
  }
  tree = small_config();
  tree["colour"] = "blue";
  EXPECT_THROW(cli::parse_config(tree), cli::ConfigError);
  tree = small_config();
  tree["sweep"] = {{"axis", "lambda"}, {"values", json::array()}};
  EXPECT_THROW(cli::parse_config(tree), cli::ConfigError);
}

TEST(Config, JumpOperatorExpandsToTwoChannels) {
  const auto c = cli::parse_config(cli::preset("amplitude-damping"));
  ASSERT_TRUE(c.jump_operator.has_value());
  EXPECT_EQ(cli::engine_channels(c).size(), 2u);
  EXPECT_EQ(cli::build_kernel(c).channels(), 2u);
}

TEST(Config, HashTracksContent) {
  const auto a = cli::parse_config(small_config());
  auto tree = small_config();
  tree["seed"] = 4;
  const auto b = cli::parse_config(tree);
  EXPECT_EQ(cli::config_hash(a), cli::config_hash(cli::parse_config(small_config())));
  EXPECT_NE(cli::config_hash(a), cli::config_hash(b));
  EXPECT_EQ(cli::config_hash(a).size(), 16u);
}

TEST(Config, SyntaxErrorReportsPosition) {
  const auto dir = scratch("syntax");
  std::ofstream(dir / "bad.json") << "{\n  \"name\": \"x\",\n  oops\n}";
  const auto r = invoke({"run", "--config", (dir / "bad.json").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find(":3:"), std::string::npos) << r.err;
}

TEST(Cli, MissingSeedIsConfigError) {
  const auto dir = scratch("seed");
  auto tree = small_config();
  tree.erase("seed");
  const auto r = invoke({"run", "--config", write_config(dir, tree)});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("seed"), std::string::npos);
}

TEST(Cli, RunWritesArtifactsAndPasses) {
  const auto dir = scratch("run");
  const auto r = invoke({"run", "--config", write_config(dir, small_config()), "--out", (dir / "out").string()});
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  EXPECT_NE(r.out.find("PASS dephasing_closed_form"), std::string::npos);
  for (const char* f : {"report.json", "report.txt", "density.csv", "density.json"})
    EXPECT_TRUE(std::filesystem::exists(dir / "out" / f)) << f;
  const auto report = json::parse(slurp(dir / "out" / "report.json"));
  EXPECT_EQ(report["seed"], 3);
  EXPECT_EQ(report["engine"], "commuting");
  EXPECT_TRUE(report["pass"].get<bool>());
}

TEST(Cli, VerifyOnlySkipsBulkArtifacts) {
  const auto dir = scratch("verify_only");
  const auto r = invoke({"run", "--config", write_config(dir, small_config()), "--verify-only", "--out",
                         (dir / "out").string()});
  EXPECT_EQ(r.code, 0);
  EXPECT_TRUE(std::filesystem::exists(dir / "out" / "report.json"));
  EXPECT_FALSE(std::filesystem::exists(dir / "out" / "density.csv"));
}

TEST(Cli, OverridesApply) {
  const auto dir = scratch("override");
  const auto r = invoke({"run", "--config", write_config(dir, small_config()), "--seed", "9", "--trajectories", "200",
                         "--engine", "hierarchy", "--out", (dir / "out").string()});
  EXPECT_EQ(r.code, 0) << r.err;
  const auto report = json::parse(slurp(dir / "out" / "report.json"));
  EXPECT_EQ(report["seed"], 9);
  EXPECT_EQ(report["trajectories"], 200);
  EXPECT_EQ(report["engine"], "hierarchy");
}

TEST(Cli, ReproducibleOutputs) {
  const auto dir = scratch("repro");
  const auto cfg = write_config(dir, small_config());
  ASSERT_EQ(invoke({"run", "--config", cfg, "--out", (dir / "a").string()}).code, 0);
  ASSERT_EQ(invoke({"run", "--config", cfg, "--out", (dir / "b").string()}).code, 0);
  for (const char* f : {"report.json", "density.csv", "density.json"})
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
}

TEST(Cli, FailingCheckExitsOne) {
  const auto dir = scratch("fail");
  auto tree = small_config();
  tree["engine"] = {{"type", "hierarchy"}, {"depth", 1}};
  tree["verify"] = {{{"type", "hierarchy_gate"}, {"trajectories", 100}, {"relative_tolerance", 1e-9}}};
  const auto r = invoke({"run", "--config", write_config(dir, tree)});
  EXPECT_EQ(r.code, 1) << r.err;
  EXPECT_NE(r.out.find("FAIL hierarchy_gate"), std::string::npos);
  tree["verify"] = {{{"type", "lindblad"}}};
  EXPECT_EQ(invoke({"run", "--config", write_config(dir, tree)}).code, 2);  // needs a time-local kernel
}

TEST(Cli, SweepAndReport) {
  const auto dir = scratch("sweep");
  auto r = invoke({"sweep", "--preset", "markov-limit", "--out", (dir / "markov").string()});
  EXPECT_EQ(r.code, 0) << r.err;
  const auto report = json::parse(slurp(dir / "markov" / "report.json"));
  EXPECT_EQ(report["table"].size(), 3u);
  ASSERT_EQ(invoke({"run", "--config", write_config(dir, small_config()), "--out", (dir / "small").string()}).code, 0);
  r = invoke({"report", dir.string()});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(std::filesystem::exists(dir / "summary.json"));
  EXPECT_NE(slurp(dir / "summary.txt").find("markov/markov_limit"), std::string::npos);
  std::filesystem::remove(dir / "small" / "density.csv");
  r = invoke({"report", dir.string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("density.csv"), std::string::npos);
}

TEST(Cli, ReportOnEmptyDirectory) {
  const auto dir = scratch("empty");
  EXPECT_EQ(invoke({"report", dir.string()}).code, 2);
}

TEST(Cli, SweepWithoutAxis) {
  const auto dir = scratch("noaxis");
  EXPECT_EQ(invoke({"sweep", "--config", write_config(dir, small_config())}).code, 2);
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(invoke({}).code, 2);
  EXPECT_EQ(invoke({"run"}).code, 2);
  EXPECT_EQ(invoke({"run", "--preset", "dephasing-ou", "--engine", "warp"}).code, 2);
  const auto list = invoke({"presets"});
  EXPECT_EQ(list.code, 0);
  EXPECT_NE(list.out.find("bath-oracle"), std::string::npos);
}
