// SPDX-License-Identifier: Apache-2.0
#include "attsets/bench.hpp"

#include <cstdio>
#include <sstream>

#include "attsets/errors.hpp"
#include "attsets/rng.hpp"

namespace attsets::bench {

namespace {

volatile double g_sink = 0.0;

void consume(const Tensor& t) { g_sink = g_sink + t.values()[0]; }

}  // namespace

void BenchConfig::validate() const {
  if (kinds.empty()) throw ContractError("bench config: no aggregators selected");
  if (view_counts.empty()) throw ContractError("bench config: view_counts is empty");
  for (std::size_t i = 0; i < view_counts.size(); ++i) {
    if (view_counts[i] == 0) throw ContractError("bench config: N must be >= 1");
    if (i > 0 && view_counts[i] <= view_counts[i - 1]) {
      throw ContractError("bench config: view_counts must be strictly increasing");
    }
    if (view_counts[i] > model.max_views) {
      throw ContractError("bench config: N=" + std::to_string(view_counts[i]) + " exceeds max_views " +
                          std::to_string(model.max_views));
    }
  }
  if (reps < 30) throw ContractError("bench config: reps must be >= 30");
  if (warmup < 5) throw ContractError("bench config: warmup must be >= 5");
  model.validate();
}

const BenchRow& BenchReport::at(agg::AggregatorKind kind, std::size_t n) const {
  for (const auto& row : rows) {
    if (row.kind == kind && row.n == n) return row;
  }
  throw ContractError("bench report has no cell for " + std::string(agg::to_string(kind)) + " at N=" +
                      std::to_string(n));
}

std::string BenchReport::to_csv() const {
  std::ostringstream os;
  os << "# " << environment << "; reps=" << reps << "; warmup=" << warmup << '\n';
  os << "aggregator,N,aggregation_ms,full_forward_ms\n";
  char buf[64];
  for (const auto& row : rows) {
    std::snprintf(buf, sizeof(buf), "%.6f,%.6f", row.aggregation_ms, row.full_forward_ms);
    os << agg::to_string(row.kind) << ',' << row.n << ',' << buf << '\n';
  }
  return os.str();
}

nlohmann::json BenchReport::to_json() const {
  nlohmann::json j;
  j["reps"] = reps;
  j["warmup"] = warmup;
  j["environment"] = environment;
  j["rows"] = nlohmann::json::array();
  for (const auto& row : rows) {
    j["rows"].push_back({{"aggregator", agg::to_string(row.kind)},
                         {"N", row.n},
                         {"aggregation_ms", row.aggregation_ms},
                         {"full_forward_ms", row.full_forward_ms}});
  }
  return j;
}

std::string environment_note() {
  std::ostringstream os;
#if defined(__clang__)
  os << "clang " << __clang_major__ << '.' << __clang_minor__;
#elif defined(__GNUC__)
  os << "gcc " << __GNUC__ << '.' << __GNUC_MINOR__;
#else
  os << "unknown compiler";
#endif
#ifdef NDEBUG
  os << ", optimized";
#else
  os << ", debug";
#endif
  os << ", single thread, float64";
  return os.str();
}

BenchReport run_bench(const BenchConfig& cfg) {
  cfg.validate();
  BenchReport report;
  report.reps = cfg.reps;
  report.warmup = cfg.warmup;
  report.environment = environment_note();

  const std::size_t d = cfg.model.latent_dim;
  const std::size_t px = cfg.model.pixel_count();
  for (agg::AggregatorKind kind : cfg.kinds) {
    net::ModelConfig mc = cfg.model;
    mc.aggregator = kind;
    mc.seed = cfg.seed;
    const net::Model model = net::model_init(mc);
    const agg::AggregatorParams params = model.aggregator();
    for (std::size_t n : cfg.view_counts) {
      const Tensor set = Tensor::uniform({n, d}, -1.0, 1.0, mix_seed(cfg.seed, n));
      const Tensor images = Tensor::uniform({n, px}, 0.0, 1.0, mix_seed(cfg.seed ^ 0xfeed, n));
      const std::size_t sizes[] = {n};
      BenchRow row;
      row.kind = kind;
      row.n = n;
      row.aggregation_ms =
          median_ms([&] { consume(agg::aggregate(set, params).output); }, cfg.reps, cfg.warmup);
      row.full_forward_ms =
          median_ms([&] { consume(net::forward_sets(model, images, sizes)); }, cfg.reps, cfg.warmup);
      report.rows.push_back(row);
    }
  }
  return report;
}

}  // namespace attsets::bench
