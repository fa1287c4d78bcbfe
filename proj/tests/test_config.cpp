// SPDX-License-Identifier: Apache-2.0
// RunConfig parsing, the benchmark harness and the self-test suite.
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "attsets/bench.hpp"
#include "attsets/config.hpp"
#include "attsets/errors.hpp"
#include "attsets/selftest.hpp"

using namespace attsets;
using nlohmann::json;
using agg::AggregatorKind;

namespace {

std::filesystem::path write_temp(const std::string& name, const std::string& text) {
  const auto p = std::filesystem::temp_directory_path() / name;
  std::ofstream(p) << text;
  return p;
}

}  // namespace

TEST(Config, DefaultsResolve) {
  const auto cfg = config::resolve(json::object());
  EXPECT_EQ(cfg.dataset.train_count, 2000u);
  EXPECT_EQ(cfg.dataset.test_count, 500u);
  EXPECT_EQ(cfg.model.grid_side, 16u);
  EXPECT_EQ(cfg.model.latent_dim, 128u);
  EXPECT_EQ(cfg.model.aggregator, AggregatorKind::attsets_fc);
  EXPECT_EQ(cfg.train_mode, config::TrainMode::faset);
  EXPECT_EQ(cfg.train.n_mode, train::NMode::fixed(8));
  EXPECT_EQ(cfg.bench.view_counts, std::vector<std::size_t>({1, 4, 8, 12, 16, 20, 24}));
  EXPECT_EQ(cfg.bench.model.latent_dim, 128u);
}

TEST(Config, EchoRoundTrips) {
  json doc = config::default_config_json();
  config::apply_override(doc, "model.aggregator=gru");
  config::apply_override(doc, "train.n_mode=uniform(2,6)");
  config::apply_override(doc, "seed=9");
  const auto cfg = config::resolve(doc);
  EXPECT_EQ(config::to_json(cfg), doc);
  EXPECT_EQ(config::to_json(config::resolve(config::to_json(cfg))), config::to_json(cfg));
}

TEST(Config, OverridesParseJsonOrFallBackToString) {
  json doc = config::default_config_json();
  config::apply_override(doc, "eval.view_counts=[1,2,4,8]");
  config::apply_override(doc, "train.learning_rate=0.01");
  config::apply_override(doc, "model.attention_bias=true");
  config::apply_override(doc, "paths.out_dir=runs/a");
  const auto cfg = config::resolve(doc);
  EXPECT_EQ(cfg.eval.view_counts, std::vector<std::size_t>({1, 2, 4, 8}));
  EXPECT_EQ(cfg.train.learning_rate, 0.01);
  EXPECT_TRUE(cfg.model.attention_bias);
  EXPECT_EQ(cfg.paths.out_dir, std::filesystem::path("runs/a"));
}

TEST(Config, UnknownKeysAndBadTypesRejected) {
  json doc = config::default_config_json();
  EXPECT_THROW(config::apply_override(doc, "model.depth=3"), ContractError);
  EXPECT_THROW(config::apply_override(doc, "bogus=1"), ContractError);
  EXPECT_THROW(config::apply_override(doc, "model.latent_dim=\"big\""), ContractError);
  EXPECT_THROW(config::apply_override(doc, "model.latent_dim=-4"), ContractError);
  EXPECT_THROW(config::apply_override(doc, "model=3"), ContractError);
  EXPECT_THROW(config::apply_override(doc, "noequals"), ContractError);
  EXPECT_THROW(config::apply_override(doc, "model..latent_dim=3"), ContractError);
  EXPECT_THROW(config::resolve(json{{"model", {{"aggregator", "median"}}}}), ContractError);
  EXPECT_THROW(config::resolve(json{{"train", {{"optimizer", "rmsprop"}}}}), ContractError);
  EXPECT_THROW(config::resolve(json{{"train", {{"mode", "stagewise"}}}}), ContractError);
  EXPECT_THROW(config::resolve(json{{"train", {{"n_mode", "fixed(12)"}}}}), ContractError);
  EXPECT_THROW(config::resolve(json{{"bench", {{"reps", 10}}}}), ContractError);
  EXPECT_THROW(config::resolve(json::array()), ContractError);
}

TEST(Config, SeedFeedsEverySection) {
  const auto cfg = config::load_run_config(std::nullopt, {}, 77);
  EXPECT_EQ(cfg.seed, 77u);
  EXPECT_EQ(cfg.model.seed, 77u);
  EXPECT_EQ(cfg.train.seed, 77u);
  EXPECT_EQ(cfg.eval.permutation_seed, 77u);
  EXPECT_EQ(cfg.bench.seed, 77u);
}

TEST(Config, DatasetSidesDriveTheModel) {
  const auto cfg = config::load_run_config(std::nullopt, {"dataset.grid_side=8", "dataset.image_side=12"}, {});
  EXPECT_EQ(cfg.model.grid_side, 8u);
  EXPECT_EQ(cfg.model.image_side, 12u);
}

TEST(Config, FileLoadingAndErrors) {
  const auto good = write_temp("attsets_cfg_good.json", R"({"model": {"latent_dim": 32}, "seed": 4})");
  const auto cfg = config::load_run_config(good, {"model.latent_dim=64"}, {});
  EXPECT_EQ(cfg.model.latent_dim, 64u);
  EXPECT_EQ(cfg.seed, 4u);
  const auto bad = write_temp("attsets_cfg_bad.json", "{ not json");
  EXPECT_THROW(config::load_run_config(bad, {}, {}), FormatError);
  EXPECT_THROW(config::load_run_config(std::filesystem::path("/nonexistent/cfg.json"), {}, {}), IoError);
  std::filesystem::remove(good);
  std::filesystem::remove(bad);
}

TEST(Config, TrainModeNames) {
  for (auto m : {config::TrainMode::faset, config::TrainMode::joint, config::TrainMode::finetune}) {
    EXPECT_EQ(config::parse_train_mode(config::to_string(m)), m);
  }
  EXPECT_THROW(config::parse_train_mode("both"), ContractError);
}

namespace {

bench::BenchConfig small_bench() {
  bench::BenchConfig c;
  c.model.image_side = 6;
  c.model.grid_side = 4;
  c.model.latent_dim = 16;
  c.model.encoder_hidden = 16;
  c.model.decoder_hidden = 16;
  c.model.conv_channels = 4;
  c.view_counts = {1, 3, 6};
  return c;
}

}  // namespace

TEST(Bench, Validation) {
  bench::BenchConfig c = small_bench();
  EXPECT_NO_THROW(c.validate());
  c.reps = 29;
  EXPECT_THROW(c.validate(), ContractError);
  c = small_bench();
  c.warmup = 4;
  EXPECT_THROW(c.validate(), ContractError);
  c = small_bench();
  c.view_counts = {1, 4, 4};
  EXPECT_THROW(c.validate(), ContractError);
  c.view_counts = {1, 25};
  EXPECT_THROW(c.validate(), ContractError);
  c = small_bench();
  c.kinds.clear();
  EXPECT_THROW(c.validate(), ContractError);
}

TEST(Bench, MedianOfRepetitions) {
  int calls = 0;
  const double ms = bench::median_ms([&] { ++calls; }, 31, 5);
  EXPECT_EQ(calls, 36);
  EXPECT_GE(ms, 0.0);
}

TEST(Bench, ReportHasEveryCell) {
  const auto cfg = small_bench();
  const auto report = bench::run_bench(cfg);
  EXPECT_EQ(report.rows.size(), cfg.kinds.size() * cfg.view_counts.size());
  EXPECT_EQ(report.reps, 30u);
  EXPECT_EQ(report.warmup, 5u);
  EXPECT_FALSE(report.environment.empty());
  for (auto kind : cfg.kinds) {
    for (std::size_t n : cfg.view_counts) {
      const auto& row = report.at(kind, n);
      EXPECT_GT(row.full_forward_ms, 0.0);
      EXPECT_GE(row.aggregation_ms, 0.0);
    }
  }
  EXPECT_THROW(report.at(AggregatorKind::mean, 2), ContractError);
  const std::string csv = report.to_csv();
  EXPECT_EQ(csv.rfind("# ", 0), 0u);
  EXPECT_NE(csv.find("\naggregator,N,aggregation_ms,full_forward_ms\n"), std::string::npos);
  EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), report.rows.size() + 2);
  const auto j = report.to_json();
  EXPECT_EQ(j["rows"].size(), report.rows.size());
  EXPECT_EQ(j["reps"], 30);
}

TEST(Selftest, AllChecksPassOnAFreshBuild) {
  const auto results = selftest::run_all(0);
  EXPECT_GE(results.size(), 7u);
  for (const auto& r : results) EXPECT_TRUE(r.passed) << r.name << ": " << r.detail;
  EXPECT_TRUE(selftest::all_passed(results));
}

TEST(Selftest, InjectedSoftmaxFaultIsCaught) {
  attsets::testing::set_softmax_fault(true);
  const auto results = selftest::run_all(0);
  attsets::testing::set_softmax_fault(false);
  EXPECT_FALSE(selftest::all_passed(results));
  bool invariance_failed = false;
  for (const auto& r : results) {
    if (r.name == "permutation_invariance") invariance_failed = !r.passed;
  }
  EXPECT_TRUE(invariance_failed);
  EXPECT_TRUE(selftest::all_passed(selftest::run_all(0)));
}
