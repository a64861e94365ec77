#include "onlinehoi/archive.hpp"
#include "onlinehoi/errors.hpp"
#include "onlinehoi/harness.hpp"
#include "onlinehoi/plot.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <fstream>

using namespace onlinehoi;
using namespace onlinehoi::harness;

namespace {

json tiny_generation() {
  return json::parse(R"({
    "name": "tiny_gen", "task": "generation", "S": 2, "L_cap": 2, "seeds": [0, 1, 2],
    "training": {"steps": 20, "batch": 2, "lr": 3e-3, "checkpoint_every": 10},
    "diffusion": {"steps": 5},
    "network": {"model_dim": 8, "depth": 1, "state_dim": 4, "conv_width": 3, "heads": 2},
    "data": {"train": 8, "val": 2, "test": 4, "T_seq": 12, "cue_delay": 4},
    "eval": {"classifier_steps": 20, "div_pairs": 2}
  })");
}

json tiny_perception() {
  return json::parse(R"({
    "name": "tiny_pcd", "task": "perception", "S": 2, "L_cap": 2, "seeds": [0],
    "training": {"steps": 6, "batch": 1, "checkpoint_every": 3},
    "network": {"model_dim": 8, "depth": 1, "state_dim": 4, "conv_width": 3, "heads": 2},
    "data": {"train": 3, "val": 0, "test": 2, "T_seq": 16, "n_classes": 3, "n_pts": 12, "min_segment": 4, "max_segment": 8}
  })");
}

class HarnessTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root = fs::temp_directory_path() /
           ("onlinehoi_harness_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(root);
  }
  void TearDown() override { fs::remove_all(root); }
  fs::path root;
};

std::string slurp(const fs::path& p) { return archive::read_file(p); }

}  // namespace

TEST(RunConfig, RoundTripsAndEchoesEveryField) {
  const RunConfig cfg = parse_config(tiny_generation());
  const json echo = to_json(cfg);
  EXPECT_EQ(echo["S"], 2);
  EXPECT_EQ(echo["training"]["lr"], 3e-3);
  EXPECT_EQ(echo["data"]["T_seq"], 12);
  EXPECT_EQ(echo["mode"], "online");
  const RunConfig again = parse_config(echo);
  EXPECT_EQ(to_json(again), echo);
  EXPECT_EQ(config_hash(again), config_hash(cfg));
}

TEST(RunConfig, RejectsUnknownKeysAndBadValues) {
  auto expect_error = [](json j, const std::string& needle) {
    try {
      parse_config(j);
      ADD_FAILURE() << "accepted " << j.dump();
    } catch (const ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  };
  json j = tiny_generation();
  j["memroy"] = "off";
  expect_error(j, "memroy");
  j = tiny_generation();
  j["training"]["stpes"] = 3;
  expect_error(j, "training.stpes");
  j = tiny_generation();
  j["memory"] = "sometimes";
  expect_error(j, "memory");
  j = tiny_generation();
  j["S"] = "eight";
  expect_error(j, "S");
  j = tiny_generation();
  j["training"]["steps"] = 0;
  expect_error(j, "training.steps");
  j = tiny_generation();
  j["mode"] = "nearline";
  expect_error(j, "mode");
}

TEST(RunConfig, HashTracksSettingsButNotPaths) {
  json j = tiny_generation();
  const std::string base = config_hash(parse_config(j));
  j["paths"]["out"] = "elsewhere";
  EXPECT_EQ(config_hash(parse_config(j)), base);
  j["memory"] = "off";
  EXPECT_NE(config_hash(parse_config(j)), base);
}

TEST(RunConfig, Overrides) {
  json j = apply_override(tiny_generation(), "training.steps=7");
  j = apply_override(j, "memory=off");
  const RunConfig cfg = parse_config(j);
  EXPECT_EQ(cfg.training.steps, 7);
  EXPECT_EQ(cfg.memory, memory::MemoryMode::off);
  EXPECT_THROW(apply_override(j, "nonsense"), ConfigError);
}

TEST_F(HarnessTest, TrainingIsBitwiseDeterministic) {
  const RunConfig cfg = parse_config(tiny_generation());
  const auto a = train(cfg, 0, root / "a");
  const auto b = train(cfg, 0, root / "b");
  const auto c = train(cfg, 1, root / "c");
  EXPECT_EQ(a.losses, b.losses);
  EXPECT_NE(a.losses, c.losses);
  EXPECT_EQ(slurp(a.checkpoint), slurp(b.checkpoint));
  EXPECT_EQ(slurp(root / "a" / "train_log.csv"), slurp(root / "b" / "train_log.csv"));
  EXPECT_TRUE(fs::exists(root / "a" / "checkpoint_step10.bin"));
  EXPECT_TRUE(fs::exists(root / "a" / "checkpoint_step20.bin"));
}

TEST_F(HarnessTest, ResumeReproducesTheRemainingLosses) {
  for (const json& j : {tiny_generation(), tiny_perception()}) {
    const RunConfig cfg = parse_config(j);
    const int half = cfg.training.checkpoint_every;
    const auto full = train(cfg, 0, root / "full");
    const auto resumed =
        train(cfg, 0, root / "resumed", {.resume = root / "full" / ("checkpoint_step" + std::to_string(half) + ".bin")});
    EXPECT_EQ(resumed.losses, full.losses) << to_string(cfg.task);
    EXPECT_EQ(slurp(resumed.checkpoint), slurp(full.checkpoint)) << to_string(cfg.task);
    fs::remove_all(root);
  }
}

TEST_F(HarnessTest, CheckpointMismatchesAreConfigErrors) {
  const RunConfig gen = parse_config(tiny_generation());
  const RunConfig pcd = parse_config(tiny_perception());
  const auto g = train(gen, 0, root / "g");
  EXPECT_THROW(evaluate(pcd, 0, g.checkpoint), ConfigError);
  json other = tiny_generation();
  other["memory"] = "off";
  EXPECT_THROW(evaluate(parse_config(other), 0, g.checkpoint), ConfigError);
  EXPECT_THROW(evaluate(gen, 1, g.checkpoint), ConfigError);
  EXPECT_THROW(evaluate(gen, 0, root / "missing.bin"), ConfigError);
}

TEST_F(HarnessTest, EvalReportCarriesProvenanceAndPassesTheGuard) {
  for (const json& j : {tiny_generation(), tiny_perception()}) {
    const RunConfig cfg = parse_config(j);
    const auto tr = train(cfg, 0, root / "run");
    const json r1 = evaluate(cfg, 0, tr.checkpoint);
    const json r2 = evaluate(cfg, 0, tr.checkpoint);
    EXPECT_EQ(r1.dump(), r2.dump());
    EXPECT_EQ(r1["config_hash"], config_hash(cfg));
    EXPECT_EQ(r1["seed"], 0);
    EXPECT_EQ(r1["config"], to_json(cfg));
    EXPECT_TRUE(r1["guard"]["checked"].get<bool>());
    EXPECT_EQ(r1["guard"]["violations"], 0);
    for (const auto& col : metric_columns(cfg.task)) EXPECT_TRUE(r1["metrics"].contains(col)) << col;
    write_report(r1, root / "run");
    const std::string csv = slurp(root / "run" / "report.csv");
    EXPECT_NE(csv.find(config_hash(cfg)), std::string::npos);
    fs::remove_all(root);
  }
}

TEST(Harness, GroundTruthScoresPerfectly) {
  const json g = evaluate_ground_truth(parse_config(tiny_generation()));
  EXPECT_NEAR(g["metrics"]["FID"].get<double>(), 0.0, 1e-6);
  EXPECT_EQ(g["metrics"]["MSE"].get<double>(), 0.0);
  EXPECT_EQ(g["metrics"]["DIV_gap"].get<double>(), 0.0);
  const json p = evaluate_ground_truth(parse_config(tiny_perception()));
  for (const char* m : {"Acc", "Edit", "F1@10", "F1@25", "F1@50"}) EXPECT_EQ(p["metrics"][m].get<double>(), 100.0) << m;
}

TEST_F(HarnessTest, TransformerBaselineMatchesParameterCount) {
  for (json j : {tiny_generation(), tiny_perception()}) {
    j["training"]["steps"] = 1;
    j["training"]["checkpoint_every"] = 0;
    const auto mamba = train(parse_config(j), 0, root / "m");
    j["model"] = "causal_transformer";
    const auto tf = train(parse_config(j), 0, root / "t");
    const double ratio = static_cast<double>(tf.parameter_count) / static_cast<double>(mamba.parameter_count);
    EXPECT_NEAR(ratio, 1.0, 0.10) << j["task"] << " " << tf.parameter_count << " vs " << mamba.parameter_count;
  }
}

TEST_F(HarnessTest, NonFiniteLossAbortsWithDiagnostics) {
  json j = tiny_generation();
  j["training"]["lr"] = 1e300;
  try {
    train(parse_config(j), 0, root / "nan");
    FAIL() << "training with lr 1e300 did not fail";
  } catch (const NumericalError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("step"), std::string::npos) << msg;
    EXPECT_NE(msg.find("recent losses"), std::string::npos) << msg;
  }
}

TEST_F(HarnessTest, AblationGridIsOrderInvariant) {
  json j = tiny_generation();
  j["training"]["checkpoint_every"] = 0;
  j["grid"] = {{"memory", {"off", "me"}}};
  const Grid grid = parse_grid(j);
  const json in_order = ablate(grid, {.root = root / "a"});
  const json shuffled = ablate(grid, {.root = root / "b", .shuffle = true, .shuffle_seed = 5});
  EXPECT_EQ(in_order.dump(), shuffled.dump());
  ASSERT_EQ(in_order["families"].size(), 1u);
  const json& rows = in_order["families"][0]["rows"];
  ASSERT_EQ(rows.size(), 2u);
  int runs = 0;
  for (const auto& row : rows) {
    runs += static_cast<int>(row["runs"].size());
    const auto& fid = row["metrics"]["FID"];
    EXPECT_LE(fid["min"].get<double>(), fid["mean"].get<double>());
    EXPECT_GE(fid["max"].get<double>(), fid["mean"].get<double>());
  }
  EXPECT_EQ(runs, 6);
  const std::string table = format_table(in_order["families"][0]);
  EXPECT_NE(table.find("memory=off"), std::string::npos) << table;
  EXPECT_NE(table.find("memory=me"), std::string::npos) << table;
}

TEST_F(HarnessTest, AblationRecordsFailedCellsAndContinues) {
  json j = tiny_generation();
  j["seeds"] = {0};
  j["training"]["checkpoint_every"] = 0;
  j["grid"] = {{"training.lr", {3e-3, 1e300}}};
  const json out = ablate(parse_grid(j), {.root = root});
  const json& rows = out["families"][0]["rows"];
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0]["runs"].size(), 1u);
  EXPECT_EQ(rows[1]["runs"].size(), 0u);
  ASSERT_EQ(rows[1]["failures"].size(), 1u);
  EXPECT_NE(rows[1]["failures"][0]["error"].get<std::string>().find("step"), std::string::npos);
  EXPECT_NE(format_table(out["families"][0]).find("failed"), std::string::npos);
}

TEST(Harness, GridRejectsTyposInAxes) {
  json j = tiny_generation();
  j["grid"] = {{"memroy", {"off"}}};
  const Grid g = parse_grid(j);
  EXPECT_THROW(ablate(g, {.root = fs::temp_directory_path() / "unused"}), ConfigError);
  j.erase("grid");
  EXPECT_THROW(parse_grid(j), ConfigError);
}

TEST(Harness, ShippedConfigsParse) {
  int n = 0;
  for (const auto& entry : fs::directory_iterator(ONLINEHOI_CONFIG_DIR)) {
    if (entry.path().extension() != ".json") continue;
    SCOPED_TRACE(entry.path().filename().string());
    std::ifstream in(entry.path());
    const json j = json::parse(in);
    ++n;
    if (!j.contains("grid")) {
      EXPECT_NO_THROW(parse_config(j));
      continue;
    }
    const Grid g = parse_grid(j);
    for (const auto& family : g.families)
      for (const auto& [axis, values] : family.axes)
        for (const auto& v : values) EXPECT_NO_THROW(parse_config(apply_override(g.base, axis + "=" + v.dump())));
  }
  EXPECT_GE(n, 5);
}

TEST_F(HarnessTest, DatasetFilesReproduceInMemoryTraining) {
  for (json j : {tiny_generation(), tiny_perception()}) {
    j["training"]["steps"] = 4;
    const RunConfig cfg = parse_config(j);
    datagen(cfg, root / "data");
    EXPECT_TRUE(fs::exists(root / "data" / "manifest.json"));
    json from_disk = j;
    from_disk["paths"]["data"] = (root / "data").string();
    const auto mem = train(cfg, 0, root / "mem");
    const auto disk = train(parse_config(from_disk), 0, root / "disk");
    EXPECT_EQ(mem.losses, disk.losses) << j["task"];
    fs::remove_all(root);
  }
}

TEST_F(HarnessTest, GuardUsesTheLoadedSequenceLength) {
  json j = tiny_generation();
  j["training"]["steps"] = 2;
  datagen(parse_config(j), root / "data");
  j["data"]["T_seq"] = 48;
  j["paths"]["data"] = (root / "data").string();
  const RunConfig cfg = parse_config(j);
  const auto tr = train(cfg, 0, root / "run");
  const json report = evaluate(cfg, 0, tr.checkpoint);
  EXPECT_EQ(report["guard"]["violations"], 0);
  EXPECT_EQ(report["guard"]["frame"], 6);
}

TEST_F(HarnessTest, LoadedWidthsMustMatchTheConfig) {
  json j = tiny_generation();
  datagen(parse_config(j), root / "data");
  j["paths"]["data"] = (root / "data").string();
  j["data"]["pose_dim"] = 5;
  EXPECT_THROW(train(parse_config(j), 0, root / "run"), ConfigError);
}

TEST_F(HarnessTest, PlotsAreDeterministicWithErrorShading) {
  const RunConfig cfg = parse_config(tiny_generation());
  const auto tr = train(cfg, 0, root / "run");
  write_report(evaluate(cfg, 0, tr.checkpoint), root / "run");
  const auto a = plot::plot_reports({root / "run" / "report.json"}, root / "plots_a");
  const auto b = plot::plot_reports({root / "run" / "report.json"}, root / "plots_b");
  ASSERT_EQ(a.written.size(), 3u);
  ASSERT_EQ(b.written.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(slurp(a.written[i]), slurp(b.written[i]));
  const std::string traj = slurp(root / "plots_a" / "tiny_gen_seed0_trajectory.svg");
  EXPECT_NE(traj.find("fill-opacity"), std::string::npos);
  EXPECT_NE(traj.find("per-frame error"), std::string::npos);
  EXPECT_NE(traj.find(config_hash(cfg)), std::string::npos);

  json partial = json::parse(slurp(root / "run" / "report.json"));
  partial.erase("losses");
  partial.erase("trajectory");
  archive::write_file_atomic(root / "partial.json", partial.dump());
  const auto p = plot::plot_reports({root / "partial.json"}, root / "plots_p");
  EXPECT_EQ(p.written.size(), 1u);
  EXPECT_EQ(p.warnings.size(), 2u);
}

TEST_F(HarnessTest, CliExitCodes) {
  const std::string cli = ONLINEHOI_CLI_PATH;
  fs::create_directories(root);
  json j = tiny_generation();
  j["seeds"] = {0};
  j["training"]["steps"] = 2;
  archive::write_file_atomic(root / "ok.json", j.dump());
  json bad = j;
  bad["memroy"] = "off";
  archive::write_file_atomic(root / "bad.json", bad.dump());
  json nan = j;
  nan["training"]["lr"] = 1e300;
  nan["training"]["steps"] = 20;
  archive::write_file_atomic(root / "nan.json", nan.dump());
  auto run = [&](const std::string& args) {
    const std::string cmd = "ONLINEHOI_OUT='" + (root / "out").string() + "' '" + cli + "' " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  };
  const std::string dir = root.string();
  EXPECT_EQ(run("train -c '" + dir + "/ok.json'"), 0);
  EXPECT_TRUE(fs::exists(root / "out" / "tiny_gen"));
  EXPECT_EQ(run("eval -c '" + dir + "/ok.json'"), 0);
  EXPECT_EQ(run("train -c '" + dir + "/bad.json'"), 2);
  EXPECT_EQ(run("train -c '" + dir + "/ok.json' --memory sometimes"), 2);
  EXPECT_EQ(run("train --bogus-flag"), 2);
  EXPECT_EQ(run("train -c '" + dir + "/nan.json'"), 3);
  EXPECT_EQ(run("eval -c '" + dir + "/ok.json' --task perception"), 2);
}
