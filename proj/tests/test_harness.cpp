#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "llqrsam/harness/checks.hpp"
#include "llqrsam/harness/config.hpp"
#include "llqrsam/harness/experiments.hpp"

using namespace llqrsam;
using namespace llqrsam::harness;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("llqrsam_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

json toy_config() {
  return json::parse(R"({
    "experiment": "escape-toy", "seed": 1,
    "metric": {"structure": "scalar", "value": 0.5},
    "start": [4.7, 0.3], "horizon": 3000, "stride": 100,
    "variants": [
      {"name": "sgdm", "rule": "sgdm", "lr": 0.01, "rho": 1.0, "momentum": 0.9},
      {"name": "llqr", "rule": "llqr", "lr": 0.01, "rho": 1.0, "momentum": 0.9},
      {"name": "sam", "rule": "sam", "lr": 0.01, "rho": 1.0, "momentum": 0.9},
      {"name": "llqr_sam", "rule": "llqr_sam", "lr": 0.01, "rho": 1.0, "momentum": 0.9}
    ]})");
}

}  // namespace

TEST(Csv, SeventeenDigitsAndColumnCheck) {
  CsvWriter w({"a", "b"});
  w.cell(0.1).cell(std::size_t{3});
  w.end_row();
  EXPECT_EQ(w.text(), "a,b\n0.10000000000000001,3\n");
  w.cell(1.0);
  EXPECT_THROW(w.end_row(), std::logic_error);
}

TEST(Config, RejectsEmptyVariantList) {
  auto j = toy_config();
  j["variants"] = json::array();
  try {
    config_from_json(j);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("at least one optimizer variant"), std::string::npos);
  }
}

TEST(Config, RejectsUnknownKeysAndMissingSeed) {
  auto j = toy_config();
  j["learning_rate"] = 0.1;
  EXPECT_THROW(config_from_json(j), ConfigError);
  auto k = toy_config();
  k.erase("seed");
  EXPECT_THROW(config_from_json(k), ConfigError);
}

TEST(Config, RejectsBadRuleAndDuplicateNames) {
  auto j = toy_config();
  j["variants"][0]["rule"] = "adam";
  EXPECT_THROW(config_from_json(j), ConfigError);
  auto k = toy_config();
  k["variants"][1]["name"] = "sgdm";
  EXPECT_THROW(config_from_json(k), ConfigError);
}

TEST(Config, SeedOverrideReplacesSeedList) {
  auto c = config_from_json(json::parse(
      R"({"experiment": "noise-toy", "seed": 1, "seeds": [1, 2, 3],
          "variants": [{"rule": "sam"}]})"));
  const auto d = with_seed(c, 99);
  EXPECT_EQ(d.seed, 99u);
  EXPECT_EQ(d.raw["seeds"], json::array({99}));
  EXPECT_NE(d.hash, c.hash);
}

TEST(Config, ShippedConfigsParse) {
  const fs::path dir = fs::path(LLQRSAM_SOURCE_DIR) / "configs";
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() != ".json") continue;
    if (e.path().filename().string().rfind("bad_", 0) == 0) {
      EXPECT_THROW(load_config(e.path()), ConfigError) << e.path();
    } else {
      EXPECT_NO_THROW(load_config(e.path())) << e.path();
      ++n;
    }
  }
  EXPECT_GE(n, 9u);
}

TEST(Run, EscapeToyWritesFourTrajectoriesWithExpectedRegions) {
  const auto out = scratch("escape");
  const auto o = run_experiment(config_from_json(toy_config()), out);
  EXPECT_TRUE(o.aborted.empty());
  for (const char* v : {"sgdm", "llqr", "sam", "llqr_sam"})
    EXPECT_TRUE(fs::exists(out / (std::string("trajectory_") + v + ".csv"))) << v;
  const auto s = json::parse(slurp(out / "summary.json"));
  EXPECT_EQ(s["runs"][0]["final_region"], "sharp");
  EXPECT_EQ(s["runs"][1]["final_region"], "sharp");
  EXPECT_EQ(s["runs"][2]["final_region"], "flat");
  EXPECT_EQ(s["runs"][3]["final_region"], "flat");
  fs::remove_all(out);
}

TEST(Run, ArtifactsAreByteIdenticalAcrossRunsAndJobCounts) {
  const auto a = scratch("det_a"), b = scratch("det_b");
  const auto c = config_from_json(toy_config());
  run_experiment(c, a, 1);
  run_experiment(c, b, 4);
  for (const char* f : {"trajectory_sam.csv", "summary.json", "manifest.json"})
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Run, EnvelopeSweepCsvHasOneRowPerStableCell) {
  const auto out = scratch("env");
  const auto c = config_from_json(json::parse(R"({
    "experiment": "envelope-sweep", "seed": 1,
    "grid": {"eta": [0.1], "mu": [1, 10, 100], "rho": [0.1], "lambda_bar": [1]},
    "steps": 1000, "window": 100})"));
  run_experiment(c, out);
  const std::string csv = slurp(out / "envelope.csv");
  // mu = 100 gives eta mu = 10, outside the stable regime.
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
  fs::remove_all(out);
}

TEST(Run, DivergentTrainingReportsAbort) {
  const auto out = scratch("abort");
  const auto c = config_from_json(json::parse(R"({
    "experiment": "transfer-diagnostic", "seed": 1,
    "landscape": {"type": "two_scale", "hbar_eigs": [1.0, 0.1], "heps_eigs": [0.0, 5.0]},
    "horizon": 5000, "variants": [{"rule": "llqr", "lr": 1.0}]})"));
  const auto o = run_experiment(c, out);
  EXPECT_FALSE(o.aborted.empty());
  fs::remove_all(out);
}

TEST(Checks, MutatedFormulaIsDetected) {
  const auto r = check_two_cycle_grid(
      [](const analysis::ScalarModeParams& p) { return 1.001 * analysis::two_cycle_amplitude(p); });
  EXPECT_FALSE(r.passed);
}

TEST(Checks, ReportIsDeterministic) {
  std::vector<CheckSpec> specs;
  for (auto& s : all_checks())
    if (s.id == "amplification-identity" || s.id == "analysis-properties") specs.push_back(s);
  const auto a = dump_json(report_json(run_checks(specs, 1)));
  const auto b = dump_json(report_json(run_checks(specs, 2)));
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.find("runtime_s"), std::string::npos);
}
