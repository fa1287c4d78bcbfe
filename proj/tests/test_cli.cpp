// SPDX-License-Identifier: Apache-2.0
// Runs the attsets executable end to end on a tiny configuration.
#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include <json.hpp>

#include "attsets/basenet.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliRun {
  int code = -1;
  std::string output;
};

CliRun run(const std::string& args) {
  const std::string cmd = std::string(ATTSETS_CLI_PATH) + " " + args + " 2>&1";
  CliRun r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), pipe)) r.output += buf.data();
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() /
            ("attsets_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
    fs::create_directories(root_);
    const json cfg = {
        {"paths", {{"data_dir", (root_ / "data").string()}, {"out_dir", (root_ / "out").string()}}},
        {"dataset", {{"train_count", 24}, {"test_count", 8}, {"grid_side", 6}, {"image_side", 6}, {"seed", 2}}},
        {"model", {{"latent_dim", 8}, {"encoder_hidden", 12}, {"decoder_hidden", 12}, {"conv_channels", 4}}},
        {"train", {{"batch_size", 4}, {"stage1_steps", 6}, {"stage2_steps", 4}, {"joint_steps", 6}}},
        {"eval", {{"view_counts", {1, 2, 4, 8}}}},
        {"bench", {{"aggregators", {"attsets_fc", "mean", "gru"}}, {"view_counts", {1, 2}}}}};
    std::ofstream(root_ / "cfg.json") << cfg.dump(2);
  }
  void TearDown() override { fs::remove_all(root_); }

  std::string base() const { return "--config " + (root_ / "cfg.json").string(); }
  fs::path out() const { return root_ / "out"; }
  fs::path data() const { return root_ / "data"; }

  fs::path root_;
};

}  // namespace

TEST_F(CliTest, GenerateIsByteIdenticalAcrossRuns) {
  const CliRun first = run(base() + " generate");
  ASSERT_EQ(first.code, 0) << first.output;
  const std::string train = slurp(data() / "train.sfds");
  const std::string test = slurp(data() / "test.sfds");
  ASSERT_FALSE(train.empty());
  ASSERT_EQ(run(base() + " generate").code, 0);
  EXPECT_EQ(slurp(data() / "train.sfds"), train);
  EXPECT_EQ(slurp(data() / "test.sfds"), test);
  EXPECT_TRUE(fs::exists(out() / "config.json"));
  const json report = json::parse(slurp(out() / "dataset_report.json"));
  EXPECT_EQ(report["train_count"], 24);
  EXPECT_TRUE(report["informativeness"].contains("constant_iou"));
}

TEST_F(CliTest, ConfigEchoIsFullyResolved) {
  ASSERT_EQ(run(base() + " --seed 5 --set model.aggregator=gru generate").code, 0);
  const json echo = json::parse(slurp(out() / "config.json"));
  EXPECT_EQ(echo["seed"], 5);
  EXPECT_EQ(echo["model"]["aggregator"], "gru");
  EXPECT_EQ(echo["model"]["latent_dim"], 8);
  EXPECT_TRUE(echo["train"].contains("learning_rate"));
}

TEST_F(CliTest, BadPathsExitWithIoCode) {
  std::ofstream(root_ / "file") << "x";
  const CliRun r = run(base() + " --set paths.data_dir=" + (root_ / "file" / "d").string() + " generate");
  EXPECT_EQ(r.code, 2) << r.output;
  EXPECT_NE(r.output.find("error:"), std::string::npos);
  EXPECT_EQ(run("--config /nonexistent/cfg.json generate").code, 2);
}

TEST_F(CliTest, ConfigErrorsExitWithContractCode) {
  EXPECT_EQ(run(base() + " --set model.depth=3 generate").code, 1);
  EXPECT_EQ(run(base() + " --set 'train.n_mode=fixed(9)' generate").code, 1);
  EXPECT_EQ(run(base() + " train --mode stagewise").code, 1);
  EXPECT_EQ(run("").code, 1);
}

TEST_F(CliTest, MissingDatasetIsReported) {
  const CliRun r = run(base() + " train");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("generate"), std::string::npos) << r.output;
}

TEST_F(CliTest, FasetWritesTwoCheckpointsWithSharedBase) {
  ASSERT_EQ(run(base() + " generate").code, 0);
  const CliRun r = run(base() + " train --mode faset");
  ASSERT_EQ(r.code, 0) << r.output;
  const auto stage1 = attsets::net::load_checkpoint(out() / "stage1.ckpt");
  const auto final = attsets::net::load_checkpoint(out() / "model.ckpt");
  EXPECT_EQ(stage1.checksum(attsets::net::ParamGroup::base), final.checksum(attsets::net::ParamGroup::base));
  EXPECT_NE(stage1.checksum(attsets::net::ParamGroup::att), final.checksum(attsets::net::ParamGroup::att));
  const json report = json::parse(slurp(out() / "train_report.json"));
  ASSERT_EQ(report.size(), 2u);
  EXPECT_EQ(report[0]["stage"], "faset_stage1");
  EXPECT_EQ(report[1]["stage"], "faset_stage2");
}

TEST_F(CliTest, FasetOnPoolingRoutesToFinetune) {
  ASSERT_EQ(run(base() + " generate").code, 0);
  const CliRun r = run(base() + " --set model.aggregator=mean train");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("note:"), std::string::npos) << r.output;
  const json report = json::parse(slurp(out() / "train_report.json"));
  EXPECT_EQ(report[1]["stage"], "finetune");
}

TEST_F(CliTest, TrainingIsDeterministic) {
  ASSERT_EQ(run(base() + " generate").code, 0);
  ASSERT_EQ(run(base() + " train --mode joint").code, 0);
  const std::string first = slurp(out() / "model.ckpt");
  ASSERT_EQ(run(base() + " train --mode joint").code, 0);
  EXPECT_EQ(slurp(out() / "model.ckpt"), first);
}

TEST_F(CliTest, EvalRowsAndDeterminism) {
  ASSERT_EQ(run(base() + " generate").code, 0);
  ASSERT_EQ(run(base() + " train").code, 0);
  const CliRun r = run(base() + " eval");
  ASSERT_EQ(r.code, 0) << r.output;
  const std::string csv = slurp(out() / "eval.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  EXPECT_EQ(csv.rfind("method,N,threshold,mean_iou,n_samples\n", 0), 0u);
  ASSERT_EQ(run(base() + " eval").code, 0);
  EXPECT_EQ(slurp(out() / "eval.csv"), csv);
  const json j = json::parse(slurp(out() / "eval.json"));
  EXPECT_EQ(j["rows"].size(), 4u);
}

TEST_F(CliTest, UntrainedAttsetsEvaluatesLikeMeanPooling) {
  ASSERT_EQ(run(base() + " generate").code, 0);
  attsets::net::ModelConfig mc;
  mc.image_side = 6;
  mc.grid_side = 6;
  mc.latent_dim = 8;
  mc.encoder_hidden = 12;
  mc.decoder_hidden = 12;
  mc.conv_channels = 4;
  mc.aggregator = attsets::agg::AggregatorKind::attsets_fc;
  const auto att = attsets::net::model_init(mc);
  attsets::net::save_checkpoint(root_ / "att.ckpt", att.params);
  mc.aggregator = attsets::agg::AggregatorKind::mean;
  attsets::net::save_checkpoint(root_ / "mean.ckpt", attsets::net::model_init(mc).params);

  ASSERT_EQ(run(base() + " --set paths.checkpoint=" + (root_ / "att.ckpt").string() + " eval").code, 0);
  const std::string att_csv = slurp(out() / "eval.csv");
  ASSERT_EQ(run(base() + " --set model.aggregator=mean --set paths.checkpoint=" + (root_ / "mean.ckpt").string() +
                " eval")
                .code,
            0);
  std::string mean_csv = slurp(out() / "eval.csv");
  for (std::size_t pos; (pos = mean_csv.find("mean,")) != std::string::npos;) mean_csv.replace(pos, 5, "attsets_fc,");
  EXPECT_EQ(att_csv, mean_csv);
}

TEST_F(CliTest, CheckpointVersionMismatchIsReported) {
  ASSERT_EQ(run(base() + " generate").code, 0);
  ASSERT_EQ(run(base() + " train --mode joint").code, 0);
  std::string bytes = slurp(out() / "model.ckpt");
  bytes[4] = 9;
  std::ofstream(out() / "model.ckpt", std::ios::binary) << bytes;
  const CliRun r = run(base() + " eval");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("version 9"), std::string::npos) << r.output;
  const CliRun wrong = run(base() + " --set model.aggregator=gru --set paths.checkpoint=" +
                        (out() / "stage1.ckpt").string() + " eval");
  EXPECT_EQ(wrong.code, 2) << wrong.output;
}

TEST_F(CliTest, BenchWritesEveryCell) {
  const CliRun r = run(base() + " bench");
  ASSERT_EQ(r.code, 0) << r.output;
  const std::string csv = slurp(out() / "bench.csv");
  for (const char* kind : {"attsets_fc", "mean", "gru"}) {
    for (const char* n : {",1,", ",2,"}) EXPECT_NE(csv.find(std::string(kind) + n), std::string::npos);
  }
  EXPECT_TRUE(fs::exists(out() / "bench.json"));
}

TEST_F(CliTest, SelftestPassesAndFaultInjectionFails) {
  const CliRun ok = run("selftest");
  EXPECT_EQ(ok.code, 0) << ok.output;
  EXPECT_GE(std::count(ok.output.begin(), ok.output.end(), '\n'), 8);
  EXPECT_EQ(ok.output.find("[FAIL]"), std::string::npos);
  const CliRun bad = run("selftest --inject-fault");
  EXPECT_EQ(bad.code, 3);
  EXPECT_NE(bad.output.find("[FAIL] permutation_invariance"), std::string::npos) << bad.output;
}
