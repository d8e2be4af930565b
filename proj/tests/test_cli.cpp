// Copyright 2026 The LTTO Authors
// SPDX-License-Identifier: Apache-2.0

// Drives the ltto binary end to end. The pretrained model comes from the
// pretrain_fixture test, which writes LTTO_FIXTURE_DIR.

#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

const fs::path kBinary = LTTO_CLI_PATH;
const fs::path kFixture = LTTO_FIXTURE_DIR;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ltto_cli_test_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p.parent_path());
  return p;
}

struct CliResult {
  int code = -1;
  std::string output;
};

CliResult run(const std::string& args) {
  const fs::path log = scratch("log.txt");
  const std::string cmd = kBinary.string() + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  r.output = ss.str();
  return r;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

std::size_t lines(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string s; std::getline(in, s);) n += !s.empty();
  return n;
}

std::string model() { return (kFixture / "model.ltto").string(); }

TEST(Cli, NoSubcommandOrUnknownFlagIsUsageError) {
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("generate --bogus 1 --out " + scratch("u").string()).code, 1);
  EXPECT_EQ(run("--help").code, 0);
}

TEST(Generate, DeterministicInSeed) {
  const fs::path a = scratch("gen_a"), b = scratch("gen_b"), c = scratch("gen_c");
  ASSERT_EQ(run("generate --count 3 --seed 5 --out " + a.string()).code, 0);
  ASSERT_EQ(run("generate --count 3 --seed 5 --out " + b.string()).code, 0);
  ASSERT_EQ(run("generate --count 3 --seed 6 --out " + c.string()).code, 0);
  const json ma = read_json(a / "manifest.json");
  EXPECT_EQ(ma, read_json(b / "manifest.json"));
  EXPECT_NE(ma, read_json(c / "manifest.json"));
  // 3 scenes x (bundle, two PFMs, CSV, JSON) plus config.json.
  EXPECT_EQ(ma["files"].size(), 16u);
  for (const auto& f : ma["files"]) EXPECT_EQ(f["sha256"].get<std::string>().size(), 64u);
}

TEST(Generate, PointCountAndBadKind) {
  const fs::path d = scratch("gen_n");
  ASSERT_EQ(run("generate --points 5 --out " + d.string()).code, 0);
  EXPECT_EQ(lines(d / "scene_000_obs.csv"), 6u);  // header plus five rows
  const CliResult bad = run("generate --kind cubes --out " + scratch("gen_bad").string());
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.output.find("kind"), std::string::npos) << bad.output;
}

TEST(Config, FileValuesAndFlagOverride) {
  const fs::path cfg = scratch("cfg.json");
  std::ofstream(cfg) << R"({"points": 7, "count": 2})";
  const fs::path d = scratch("cfg_out");
  ASSERT_EQ(run("generate --config " + cfg.string() + " --count 1 --out " + d.string()).code, 0);
  const json resolved = read_json(d / "config.json");
  EXPECT_EQ(resolved["points"], 7);
  EXPECT_EQ(resolved["count"], 1);
  EXPECT_EQ(lines(d / "scene_000_obs.csv"), 8u);

  const fs::path unknown = scratch("cfg_bad.json");
  std::ofstream(unknown) << R"({"pointz": 7})";
  const CliResult r = run("generate --config " + unknown.string() + " --out " + scratch("cfg_bad").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("pointz"), std::string::npos);
}

TEST(Pretrain, FixtureReportsAlignmentGain) {
  const json p = read_json(kFixture / "pretrain.json");
  EXPECT_EQ(p["train_scenes"], 180);
  EXPECT_EQ(p["validation_scenes"], 20);
  EXPECT_LT(p["validation_aligned_rmse"].get<double>(), 0.5 * p["validation_median_rmse"].get<double>());
}

TEST(Adapt, ZeroItersIsBaselineAndSparsitySweep) {
  const fs::path z = scratch("ad_zero");
  ASSERT_EQ(run("adapt --model " + model() + " --iters 0 --out " + z.string()).code, 0);
  EXPECT_EQ(lines(z / "trace.csv"), 1u);
  const json m = read_json(z / "metrics.json");
  EXPECT_EQ(m["initial_loss"], m["final_loss"]);

  const fs::path s = scratch("ad_sweep");
  ASSERT_EQ(run("adapt --model " + model() + " --iters 20 --sweep-sparsity 10,40 --out " + s.string()).code, 0);
  EXPECT_EQ(lines(s / "sparsity.csv"), 3u);
  EXPECT_EQ(lines(s / "trace.csv"), 21u);

  EXPECT_EQ(run("adapt --model " + model() + " --scope sideways --out " + scratch("ad_bad").string()).code, 1);
  EXPECT_EQ(run("adapt --model /nonexistent.ltto --out " + scratch("ad_nomodel").string()).code, 1);
}

TEST(Adapt, ReadsGeneratedSceneBundle) {
  const fs::path g = scratch("ad_gen");
  ASSERT_EQ(run("generate --seed 3 --out " + g.string()).code, 0);
  const fs::path a = scratch("ad_bundle"), b = scratch("ad_bundle2");
  const std::string args = "adapt --model " + model() + " --iters 5 --scene " + (g / "scene_000.ltto").string();
  ASSERT_EQ(run(args + " --out " + a.string()).code, 0);
  ASSERT_EQ(run(args + " --out " + b.string()).code, 0);
  EXPECT_EQ(read_json(a / "manifest.json"), read_json(b / "manifest.json"));
}

TEST(Analyze, NeedsAdaptOutput) {
  const fs::path empty = scratch("an_empty");
  fs::create_directories(empty);
  const CliResult r = run("analyze --model " + model() + " --trace " + empty.string() + " --out " + scratch("an").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("trace"), std::string::npos);
  EXPECT_EQ(run("analyze --model " + model() + " --sections nonsense --out " + scratch("an2").string()).code, 1);
}

TEST(Analyze, CorrelationSection) {
  const fs::path d = scratch("an_corr");
  ASSERT_EQ(run("analyze --model " + model() + " --sections correlation,pc1 --scenes 1 --out " + d.string()).code, 0);
  EXPECT_TRUE(fs::exists(d / "correlation.csv"));
  EXPECT_TRUE(fs::exists(d / "pc1"));
  EXPECT_FALSE(fs::exists(d / "energy.csv"));
}

TEST(Verify, ExitCodes) {
  const fs::path d = scratch("ver");
  const CliResult ok = run("verify --out " + d.string());
  EXPECT_EQ(ok.code, 0) << ok.output;
  const json v = read_json(d / "verdicts.json");
  EXPECT_EQ(v["passed"], v["total"]);

  const CliResult strict = run("verify --eps 0.1 --strict --out " + scratch("ver_strict").string());
  EXPECT_EQ(strict.code, 2);
  EXPECT_NE(strict.output.find("FAIL"), std::string::npos);

  const fs::path one = scratch("ver_one");
  ASSERT_EQ(run("verify --grid \"d=16 r=1\" --out " + one.string()).code, 0);
  // One gradient rank check, two accumulated-update checks, and the identity check.
  EXPECT_EQ(read_json(one / "verdicts.json")["total"], 4);
  EXPECT_EQ(run("verify --grid \"q=3\" --out " + scratch("ver_bad").string()).code, 1);
}

TEST(Sweep, SingleScopeRow) {
  const fs::path d = scratch("sw");
  ASSERT_EQ(run("sweep --model " + model() + " --scopes decoder_lora --scenes 1 --out " + d.string()).code, 0);
  EXPECT_GE(lines(d / "scope_sweep.csv"), 2u);
}

}  // namespace
