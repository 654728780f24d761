#include "relloc/experiments.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace relloc;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

int error_line(const std::string& text) {
  try {
    parse_experiment_config(text);
  } catch (const ConfigError& e) {
    return e.line();
  }
  return -1;
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("relloc_config_test_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(ConfigFile, SectionsCommentsAndLists) {
  const ConfigFile f = ConfigFile::parse("top = 1\n[a]\nx = 2.5  # note\n; comment\n[b]\nlist = 1, 2,3\n");
  double x = 0.0;
  f.get("a.x", x);
  EXPECT_DOUBLE_EQ(x, 2.5);
  std::vector<double> l;
  f.get("b.list", l);
  EXPECT_EQ(l, (std::vector<double>{1.0, 2.0, 3.0}));
  EXPECT_TRUE(f.has("top"));
  EXPECT_THROW(f.reject_unused(), ConfigError);
}

TEST(ConfigFile, ErrorsCarryLineNumbers) {
  EXPECT_EQ(error_line("[experiment]\nkind = table1-sweep\n[scenario\n"), 3);
  EXPECT_EQ(error_line("[experiment]\nkind = table1-sweep\nno equals here\n"), 3);
  EXPECT_EQ(error_line("[experiment]\nkind = table1-sweep\nseed = 1\nseed = 2\n"), 4);
  EXPECT_EQ(error_line("[experiment]\nkind = table1-sweep\nruns = many\n"), 3);
  EXPECT_EQ(error_line("[experiment]\nkind = table1-sweep\n\n[scenario]\nsigma_range_typo = 1\n"), 5);
  EXPECT_EQ(error_line("[experiment]\nkind = nonsense\n"), 2);
}

TEST(ConfigFile, ValidationNamesTheField) {
  try {
    parse_experiment_config("[experiment]\nkind = table1-sweep\nruns = 0\n");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "experiment.runs");
    EXPECT_EQ(e.line(), 3);
  }
  EXPECT_THROW(parse_experiment_config("[experiment]\nkind = table1-sweep\n[scenario]\nsigmas = 1, -2\n"),
               ConfigError);
  EXPECT_THROW(parse_experiment_config("[experiment]\nkind = limit-case\n[scenario]\ncase = 4\n"), ConfigError);
  EXPECT_THROW(parse_experiment_config("[experiment]\nkind = limit-case\nvariant = C\n"), ConfigError);
}

TEST(ConfigFile, MissingKindNeedsOverride) {
  EXPECT_THROW(parse_experiment_config("[experiment]\nseed = 3\n"), ConfigError);
  const ExperimentConfig c = parse_experiment_config("[experiment]\nseed = 3\n", "limit-case");
  EXPECT_EQ(c.kind, ExperimentKind::LimitCase);
  EXPECT_EQ(c.seed, 3u);
}

TEST(ConfigFile, KindDefaults) {
  const ExperimentConfig t = parse_experiment_config("[experiment]\nkind = table1-sweep\n");
  EXPECT_EQ(t.runs, 1000);
  EXPECT_EQ(t.sigmas.size(), 8u);
  EXPECT_DOUBLE_EQ(t.rate, 20.0);
  const ExperimentConfig l = parse_experiment_config("[experiment]\nkind = limit-case\n");
  EXPECT_DOUBLE_EQ(l.rate, 50.0);
}

TEST(ConfigEcho, RoundTripsEveryShippedConfig) {
  const fs::path dir = fs::path(RELLOC_SOURCE_DIR) / "configs";
  int n = 0;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() != ".ini") continue;
    ++n;
    const ExperimentConfig c = parse_experiment_config(slurp(entry.path()));
    const std::string echo = experiment_to_ini(c);
    EXPECT_EQ(experiment_to_ini(parse_experiment_config(echo)), echo) << entry.path();
  }
  EXPECT_GE(n, 9);
}

TEST(ConfigEcho, PreservesNonDefaultValues) {
  const ExperimentConfig c = parse_experiment_config(
      "[experiment]\nkind = disturbance-sweep\nseed = 99\nruns = 7\n[disturbance]\namplitudes = 0, 0.125\n"
      "[ekf]\nq_heading = 0.00025\n");
  const ExperimentConfig d = parse_experiment_config(experiment_to_ini(c));
  EXPECT_EQ(d.seed, 99u);
  EXPECT_EQ(d.runs, 7);
  EXPECT_EQ(d.amplitudes, (std::vector<double>{0.0, 0.125}));
  EXPECT_EQ(d.ekf.q_heading, 0.00025);
  EXPECT_EQ(d.ekf.q_position, c.ekf.q_position);
}

TEST(RunExperiment, SameSeedGivesIdenticalOutputs) {
  const std::string text =
      "[experiment]\nkind = table1-sweep\nseed = 11\nruns = 4\n[scenario]\nsigmas = 0, 1\nduration = 4\n";
  const ExperimentConfig c = parse_experiment_config(text);
  const fs::path a = temp_dir("a"), b = temp_dir("b");
  run_experiment(c, a);
  ExperimentConfig parallel = c;
  parallel.jobs = 2;
  run_experiment(parallel, b);
  EXPECT_EQ(slurp(a / "summary.csv"), slurp(b / "summary.csv"));
  EXPECT_FALSE(slurp(a / "summary.csv").empty());
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(RunExperiment, LimitCaseWritesTracesAndSummary) {
  const ExperimentConfig c =
      parse_experiment_config("[experiment]\nkind = limit-case\n[scenario]\ncase = 1\nduration = 2\n");
  const fs::path out = temp_dir("limit");
  const ExperimentOutcome o = run_experiment(c, out);
  EXPECT_EQ(o.failures, 0);
  EXPECT_TRUE(fs::exists(out / "summary.csv"));
  EXPECT_TRUE(fs::exists(out / "effective_config.ini"));
  EXPECT_TRUE(fs::exists(out / "traces" / "case1_A.csv"));
  EXPECT_TRUE(fs::exists(out / "traces" / "case1_B.csv"));
  fs::remove_all(out);
}
