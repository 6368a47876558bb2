#include <gtest/gtest.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "come/cli.hpp"
#include "come/error.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using come::cli::run;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void spit(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

// Small enough that a full gen-data/train/edit cycle takes seconds.
json tiny_overlay() {
  return json::parse(R"({
    "model": {"layer_count": 3, "head_count": 2, "d_model": 16, "d_mlp": 32},
    "train": {"epochs": 3, "target_memorization": 0.0, "fact_repetitions": 2, "neighbor_repetitions": 2},
    "edit": {"target_layers": [1, 2], "covariance_samples": 100, "lambda": 10.0,
             "optimizer": {"step_count": 5}},
    "data": {"n_facts": 12},
    "run": {"n_edits": 4}
  })");
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("come_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()) +
            "_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    config_ = (dir_ / "tiny.json").string();
    spit(config_, tiny_overlay().dump());
    setenv("COME_LOG_LEVEL", "off", 1);
  }
  void TearDown() override { fs::remove_all(dir_); }

  int cli(std::vector<std::string> args) {
    args.insert(args.begin(), "come");
    std::ostringstream err;
    auto* old = std::cerr.rdbuf(err.rdbuf());
    const int rc = run(args);
    std::cerr.rdbuf(old);
    stderr_ = err.str();
    return rc;
  }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  // gen-data + train in the test directory.
  void prepare() {
    ASSERT_EQ(cli({"gen-data", "--config", config_, "--out-dir", path("data")}), 0) << stderr_;
    ASSERT_EQ(cli({"train", "--config", config_, "--dataset", path("data/dataset.json"), "--out-dir",
                   path("model")}),
              0)
        << stderr_;
  }

  std::vector<std::string> edit_args(const std::string& out) const {
    return {"edit", "--config", config_, "--dataset", path("data/dataset.json"), "--checkpoint",
            path("model/model.ckpt"), "--out-dir", path(out)};
  }

  fs::path dir_;
  std::string config_;
  std::string stderr_;
};

TEST(Config, UnknownKeyRejected) {
  EXPECT_THROW(come::cli::merge_config(come::cli::default_config(), json{{"edit", {{"alhpa", 1}}}}),
               come::Error);
}

TEST(Config, DefaultsResolve) {
  const auto c = come::cli::resolve_config(come::cli::default_config());
  EXPECT_EQ(c.edit.target_layers, (std::vector<std::size_t>{1, 2, 3}));
  EXPECT_EQ(c.n_edits, 50u);
}

TEST(Config, UnsortedSweepRejected) {
  auto j = come::cli::merge_config(come::cli::default_config(), json{{"sweep", {{"alpha", {0.5, 0.1}}}}});
  EXPECT_THROW(come::cli::resolve_config(j), come::Error);
}

TEST_F(CliTest, HelpExitsZero) { EXPECT_EQ(cli({"--help"}), 0); }

TEST_F(CliTest, UnknownFlagIsUsageError) {
  EXPECT_EQ(cli({"edit", "--bogus"}), 2);
  EXPECT_EQ(json::parse(stderr_)["error"]["exit_code"], 2);
}

TEST_F(CliTest, TargetMemorizationAboveOneFailsBeforeWork) {
  json bad = tiny_overlay();
  bad["train"]["target_memorization"] = 1.01;
  spit(path("bad.json"), bad.dump());
  EXPECT_EQ(cli({"train", "--config", path("bad.json"), "--dataset", path("none.json"), "--out-dir",
                 path("never")}),
            2);
  EXPECT_FALSE(fs::exists(path("never")));
  EXPECT_EQ(json::parse(stderr_)["error"]["code"], "invalid_config");
}

TEST_F(CliTest, MissingDatasetNamesPath) {
  const std::string missing = path("nowhere/dataset.json");
  EXPECT_EQ(cli({"train", "--config", config_, "--dataset", missing, "--out-dir", path("m")}), 2);
  EXPECT_NE(stderr_.find(missing), std::string::npos);
}

TEST_F(CliTest, MissingConfigFile) {
  EXPECT_EQ(cli({"gen-data", "--config", path("nope.json")}), 2);
}

TEST_F(CliTest, TrainWritesArtifacts) {
  prepare();
  for (const char* f : {"model.ckpt", "train_loss.csv", "train_report.json", "manifest.json", "metadata.json"})
    EXPECT_TRUE(fs::exists(dir_ / "model" / f)) << f;
  const auto loss = slurp(dir_ / "model/train_loss.csv");
  EXPECT_EQ(loss.rfind("epoch,loss\n", 0), 0u);
  EXPECT_EQ(std::count(loss.begin(), loss.end(), '\n'), 4);
}

TEST_F(CliTest, FlagOverridesConfigFile) {
  prepare();
  auto args = edit_args("e");
  args.insert(args.end(), {"--alpha", "0.7", "--layers", "0,2", "--lambda", "3"});
  ASSERT_EQ(cli(args), 0) << stderr_;
  const auto cfg = json::parse(slurp(dir_ / "e/manifest.json"))["config"];
  EXPECT_EQ(cfg["edit"]["alpha"], 0.7);
  EXPECT_EQ(cfg["edit"]["target_layers"], json({0, 2}));
  EXPECT_EQ(cfg["edit"]["lambda"], 3.0);
  EXPECT_EQ(cfg["edit"]["optimizer"]["step_count"], 5);  // file
  EXPECT_EQ(cfg["edit"]["top_p"], 20.0);                 // default
  const auto report = json::parse(slurp(dir_ / "e/report.json"));
  EXPECT_EQ(report["config"]["edit"]["alpha"], 0.7);
}

TEST_F(CliTest, BadLayersFlag) {
  EXPECT_EQ(cli({"edit", "--layers", "1,x"}), 2);
}

TEST_F(CliTest, ComeAtZeroAlphaMatchesMemitCheckpoint) {
  prepare();
  auto come = edit_args("come");
  come.insert(come.end(), {"--mode", "COME", "--alpha", "0"});
  auto memit = edit_args("memit");
  memit.insert(memit.end(), {"--mode", "MEMIT"});
  ASSERT_EQ(cli(come), 0) << stderr_;
  ASSERT_EQ(cli(memit), 0) << stderr_;
  EXPECT_EQ(slurp(dir_ / "come/edited.ckpt"), slurp(dir_ / "memit/edited.ckpt"));
}

TEST_F(CliTest, EditIsDeterministicAndLeavesInputAlone) {
  prepare();
  const std::string before = slurp(dir_ / "model/model.ckpt");
  ASSERT_EQ(cli(edit_args("a")), 0) << stderr_;
  ASSERT_EQ(cli(edit_args("b")), 0) << stderr_;
  for (const char* f : {"edited.ckpt", "report.json", "results.csv", "manifest.json"})
    EXPECT_EQ(slurp(dir_ / "a" / f), slurp(dir_ / "b" / f)) << f;
  EXPECT_EQ(slurp(dir_ / "model/model.ckpt"), before);
  const auto meta = json::parse(slurp(dir_ / "a/metadata.json"));
  EXPECT_TRUE(meta.contains("wall_time_seconds"));
  EXPECT_EQ(meta["paths"]["out_dir"], path("a"));
}

TEST_F(CliTest, NoRestrictionDiffersOnlyThroughTopP) {
  prepare();
  auto full = edit_args("full");
  full.insert(full.end(), {"--top-p", "100", "--label", "x"});
  auto nr = edit_args("nr");
  nr.insert(nr.end(), {"--ablation", "no_restriction", "--label", "x"});
  ASSERT_EQ(cli(full), 0) << stderr_;
  ASSERT_EQ(cli(nr), 0) << stderr_;
  auto a = json::parse(slurp(dir_ / "full/report.json"));
  auto b = json::parse(slurp(dir_ / "nr/report.json"));
  a.erase("config");
  b.erase("config");
  EXPECT_EQ(a, b);
  EXPECT_EQ(slurp(dir_ / "full/edited.ckpt"), slurp(dir_ / "nr/edited.ckpt"));
}

TEST_F(CliTest, SingletonSweepMatchesEdit) {
  prepare();
  ASSERT_EQ(cli(edit_args("edit")), 0) << stderr_;
  auto sweep = edit_args("sweep");
  sweep[0] = "sweep";
  json grid = tiny_overlay();
  grid["sweep"]["alpha"] = {0.1};
  spit(path("grid.json"), grid.dump());
  sweep[2] = path("grid.json");
  ASSERT_EQ(cli(sweep), 0) << stderr_;
  auto e = json::parse(slurp(dir_ / "edit/report.json"));
  auto s = json::parse(slurp(dir_ / "sweep/points/alpha=0.1_seed0.json"));
  EXPECT_EQ(s["method"], "COME(alpha=0.1)");
  for (auto* j : {&e, &s}) {
    j->erase("method");
    j->erase("config");
  }
  EXPECT_EQ(e, s);
  const auto manifest = json::parse(slurp(dir_ / "sweep/manifest.json"));
  EXPECT_EQ(manifest["status"], "complete");
  const auto summary = slurp(dir_ / "sweep/sweep_summary.csv");
  EXPECT_EQ(std::count(summary.begin(), summary.end(), '\n'), 2);
}

TEST_F(CliTest, EvalIsDeterministic) {
  prepare();
  auto args = edit_args("e1");
  args[0] = "eval";
  ASSERT_EQ(cli(args), 0) << stderr_;
  args.back() = path("e2");
  ASSERT_EQ(cli(args), 0) << stderr_;
  EXPECT_EQ(slurp(dir_ / "e1/report.json"), slurp(dir_ / "e2/report.json"));
  EXPECT_EQ(slurp(dir_ / "e1/results.csv"), slurp(dir_ / "e2/results.csv"));
}

TEST_F(CliTest, MissingReferencesDegradeGracefully) {
  prepare();
  auto data = json::parse(slurp(dir_ / "data/dataset.json"));
  for (auto& r : data) r["reference_text"] = nullptr;
  spit(path("noref.json"), data.dump());
  auto args = edit_args("e");
  args[0] = "eval";
  args[4] = path("noref.json");
  ASSERT_EQ(cli(args), 0) << stderr_;
  const auto report = json::parse(slurp(dir_ / "e/report.json"));
  EXPECT_TRUE(report["consistency"].is_null());
  EXPECT_FALSE(report["flags"].empty());
}

TEST_F(CliTest, InvalidDatasetStrictVsLenient) {
  prepare();
  auto data = json::parse(slurp(dir_ / "data/dataset.json"));
  data[0]["target_new"] = data[0]["target_old"];
  spit(path("broken.json"), data.dump(1));
  auto args = edit_args("e");
  args[0] = "eval";
  args[4] = path("broken.json");
  EXPECT_EQ(cli(args), 2);
  EXPECT_EQ(json::parse(stderr_)["error"]["code"], "invalid_data");
  args.push_back("--lenient");
  EXPECT_EQ(cli(args), 0) << stderr_;
}

TEST_F(CliTest, TooManyEditsIsConfigError) {
  prepare();
  auto args = edit_args("e");
  args.insert(args.end(), {"--n-edits", "500"});
  EXPECT_EQ(cli(args), 2);
}

}  // namespace
