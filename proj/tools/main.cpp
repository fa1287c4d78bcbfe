// SPDX-License-Identifier: Apache-2.0
//
// attsets generate | train | eval | bench | selftest
//
// Exit codes: 0 success, 1 contract/config error, 2 I/O or format error,
// 3 self-test failure.
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "attsets/bench.hpp"
#include "attsets/config.hpp"
#include "attsets/errors.hpp"
#include "attsets/metrics.hpp"
#include "attsets/selftest.hpp"
#include "attsets/trainer.hpp"

namespace fs = std::filesystem;
using namespace attsets;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitContract = 1;
constexpr int kExitIo = 2;
constexpr int kExitSelftest = 3;

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

void echo_config(const config::RunConfig& cfg) {
  ensure_dir(cfg.paths.out_dir);
  write_json(cfg.paths.out_dir / "config.json", config::to_json(cfg));
}

data::Dataset load_split(const config::RunConfig& cfg, const char* name) {
  const fs::path path = cfg.paths.data_dir / (std::string(name) + ".sfds");
  if (!fs::exists(path)) {
    throw IoError("dataset file " + path.string() + " not found; run 'attsets generate' first");
  }
  data::Dataset ds = data::load_dataset(path);
  if (ds.meta.grid_side != cfg.model.grid_side || ds.meta.image_side != cfg.model.image_side) {
    throw ContractError("dataset " + path.string() + " has grid/image sides " + std::to_string(ds.meta.grid_side) +
                        "/" + std::to_string(ds.meta.image_side) + " but the config expects " +
                        std::to_string(cfg.model.grid_side) + "/" + std::to_string(cfg.model.image_side));
  }
  return ds;
}

void print_report(const train::TrainReport& r) {
  std::printf("%s: %zu steps, loss %.6f -> %.6f, %.1f s\n", r.stage.c_str(), r.steps,
              r.losses.empty() ? 0.0 : r.losses.front(), r.losses.empty() ? 0.0 : r.losses.back(),
              r.wallclock_ms / 1000.0);
  if (r.warning) std::printf("note: %s\n", r.warning->c_str());
}

int cmd_generate(const config::RunConfig& cfg) {
  echo_config(cfg);
  const auto files = data::generate_dataset(cfg.dataset, cfg.paths.data_dir);
  const auto train = data::load_dataset(files.train);
  const auto test = data::load_dataset(files.test);
  double occ_sum = 0.0;
  for (const auto& s : train.samples) occ_sum += s.gt.occupancy();
  const auto probe = eval::informativeness_probe(train, test);
  json report;
  report["train_file"] = files.train.string();
  report["test_file"] = files.test.string();
  report["train_count"] = cfg.dataset.train_count;
  report["test_count"] = cfg.dataset.test_count;
  report["grid_side"] = cfg.dataset.grid_side;
  report["image_side"] = cfg.dataset.image_side;
  report["views"] = cfg.dataset.views;
  report["seed"] = cfg.dataset.seed;
  report["mean_train_occupancy"] = occ_sum / static_cast<double>(train.samples.size());
  report["informativeness"] = probe.to_json();
  write_json(cfg.paths.out_dir / "dataset_report.json", report);
  std::printf("wrote %s and %s\n", files.train.string().c_str(), files.test.string().c_str());
  std::printf("informativeness probe: constant %.4f, single-view nearest neighbour min %.4f (%s)\n",
              probe.constant_iou,
              *std::min_element(probe.single_view_nn_iou.begin(), probe.single_view_nn_iou.end()),
              probe.passed ? "ok" : "WEAK");
  return kExitOk;
}

int cmd_train(const config::RunConfig& cfg) {
  echo_config(cfg);
  const data::Dataset train = load_split(cfg, "train");
  net::Model model = net::model_init(cfg.model);
  const fs::path out = cfg.paths.out_dir;
  json reports = json::array();
  const bool attention = agg::is_attsets(cfg.model.aggregator);

  switch (cfg.train_mode) {
    case config::TrainMode::faset: {
      const auto r1 = train::faset_stage1(model, train, cfg.train);
      print_report(r1);
      reports.push_back(r1.to_json());
      net::save_checkpoint(out / "stage1.ckpt", model.params);
      train::TrainReport r2;
      if (attention) {
        r2 = train::faset_stage2(model, train, cfg.train);
      } else {
        std::printf("note: aggregator %s has no attention module; stage 2 runs whole-network fine-tuning\n",
                    std::string(agg::to_string(cfg.model.aggregator)).c_str());
        r2 = train::finetune(model, train, cfg.train);
      }
      print_report(r2);
      reports.push_back(r2.to_json());
      break;
    }
    case config::TrainMode::joint: {
      const auto r = train::joint_train(model, train, cfg.train);
      print_report(r);
      reports.push_back(r.to_json());
      break;
    }
    case config::TrainMode::finetune: {
      if (!cfg.paths.checkpoint.empty()) {
        model = net::model_from_bundle(cfg.model, net::load_checkpoint(cfg.paths.checkpoint));
      } else {
        std::printf("note: paths.checkpoint is empty; fine-tuning starts from a fresh initialization\n");
      }
      const auto r = train::finetune(model, train, cfg.train);
      print_report(r);
      reports.push_back(r.to_json());
      break;
    }
  }
  net::save_checkpoint(out / "model.ckpt", model.params);
  write_json(out / "train_report.json", reports);
  std::printf("wrote %s\n", (out / "model.ckpt").string().c_str());
  return kExitOk;
}

int cmd_eval(const config::RunConfig& cfg) {
  echo_config(cfg);
  const fs::path ckpt = cfg.paths.checkpoint.empty() ? cfg.paths.out_dir / "model.ckpt" : cfg.paths.checkpoint;
  const net::Model model = net::model_from_bundle(cfg.model, net::load_checkpoint(ckpt));
  const data::Dataset test = load_split(cfg, "test");
  const auto report = eval::eval_sweep(model, test, cfg.eval, std::string(agg::to_string(cfg.model.aggregator)));
  write_text(cfg.paths.out_dir / "eval.csv", report.to_csv());
  write_json(cfg.paths.out_dir / "eval.json", report.to_json());
  std::fputs(report.to_csv().c_str(), stdout);
  return kExitOk;
}

int cmd_bench(const config::RunConfig& cfg) {
  echo_config(cfg);
  const auto report = bench::run_bench(cfg.bench);
  write_text(cfg.paths.out_dir / "bench.csv", report.to_csv());
  write_json(cfg.paths.out_dir / "bench.json", report.to_json());
  std::fputs(report.to_csv().c_str(), stdout);
  return kExitOk;
}

int cmd_selftest(std::uint64_t seed, bool inject_fault) {
  testing::set_softmax_fault(inject_fault);
  const auto results = selftest::run_all(seed);
  testing::set_softmax_fault(false);
  for (const auto& r : results) {
    std::printf("[%s] %-24s %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str());
  }
  const bool ok = selftest::all_passed(results);
  std::printf("%zu checks, %s\n", results.size(), ok ? "all passed" : "FAILURES");
  return ok ? kExitOk : kExitSelftest;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AttSets multi-view reconstruction toolkit"};
  app.require_subcommand(1);
  app.fallthrough();

  std::optional<std::string> config_path;
  std::vector<std::string> overrides;
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
  bool inject_fault = false;
  std::string mode;

  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--set", overrides, "Override a config key: dotted.key=value (repeatable)")->take_all();
  app.add_option("--out", out_dir, "Output directory (paths.out_dir)");
  app.add_option("--seed", seed, "Global seed");
  app.add_flag("--inject-fault", inject_fault)->group("");

  auto* generate = app.add_subcommand("generate", "Write the synthetic train/test splits");
  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--mode", mode, "faset | joint | finetune (train.mode)");
  auto* evaluate = app.add_subcommand("eval", "Evaluate a checkpoint over the view-count sweep");
  auto* bench = app.add_subcommand("bench", "Time aggregators and full forward passes");
  auto* selftest = app.add_subcommand("selftest", "Run the invariant self-test suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitContract;
  }

  try {
    if (out_dir) overrides.push_back("paths.out_dir=" + json(*out_dir).dump());
    if (!mode.empty()) overrides.push_back("train.mode=" + json(mode).dump());
    if (selftest->parsed()) return cmd_selftest(seed.value_or(0), inject_fault);
    std::optional<fs::path> file;
    if (config_path) file = fs::path(*config_path);
    const config::RunConfig cfg = config::load_run_config(file, overrides, seed);
    if (generate->parsed()) return cmd_generate(cfg);
    if (train->parsed()) return cmd_train(cfg);
    if (evaluate->parsed()) return cmd_eval(cfg);
    if (bench->parsed()) return cmd_bench(cfg);
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitIo;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitIo;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitContract;
  }
  return kExitContract;
}
