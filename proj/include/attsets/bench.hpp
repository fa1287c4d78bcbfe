// SPDX-License-Identifier: Apache-2.0
//
// Wall-clock timing of each aggregator in isolation and of the full
// encode -> aggregate -> decode forward pass, for a grid of set sizes.
#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "attsets/aggregators.hpp"
#include "attsets/basenet.hpp"

namespace attsets::bench {

struct BenchConfig {
  std::vector<agg::AggregatorKind> kinds = agg::all_aggregator_kinds();
  std::vector<std::size_t> view_counts = {1, 4, 8, 12, 16, 20, 24};
  net::ModelConfig model;
  std::size_t reps = 30;
  std::size_t warmup = 5;
  std::uint64_t seed = 0;

  void validate() const;
};

struct BenchRow {
  agg::AggregatorKind kind = agg::AggregatorKind::mean;
  std::size_t n = 0;
  double aggregation_ms = 0.0;
  double full_forward_ms = 0.0;
};

struct BenchReport {
  std::vector<BenchRow> rows;
  std::size_t reps = 0;
  std::size_t warmup = 0;
  std::string environment;

  const BenchRow& at(agg::AggregatorKind kind, std::size_t n) const;
  std::string to_csv() const;
  nlohmann::json to_json() const;
};

/// Median of `reps` timings (milliseconds) of `fn` after `warmup` untimed calls.
template <typename Fn>
double median_ms(Fn&& fn, std::size_t reps, std::size_t warmup) {
  for (std::size_t i = 0; i < warmup; ++i) fn();
  std::vector<double> samples;
  samples.reserve(reps);
  for (std::size_t i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    samples.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  std::sort(samples.begin(), samples.end());
  const std::size_t mid = samples.size() / 2;
  return samples.size() % 2 ? samples[mid] : 0.5 * (samples[mid - 1] + samples[mid]);
}

BenchReport run_bench(const BenchConfig& cfg);

/// Compiler, build flavour and thread count, for the report header.
std::string environment_note();

}  // namespace attsets::bench
