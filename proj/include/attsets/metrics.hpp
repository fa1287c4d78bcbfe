// SPDX-License-Identifier: Apache-2.0
//
// Voxel IoU with a binarization-threshold search over 0.20..0.80 (step 0.05),
// and evaluation sweeps over the number of input views.
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "attsets/basenet.hpp"
#include "attsets/synthdata.hpp"

namespace attsets::eval {

/// The 13 thresholds 0.20, 0.25, ..., 0.80.
std::vector<double> threshold_grid();

struct EvalConfig {
  std::vector<double> thresholds = threshold_grid();
  std::vector<std::size_t> view_counts = {1, 2, 3, 4, 5, 8};
  std::uint64_t permutation_seed = 0;
  /// Samples per batched forward pass.
  std::size_t chunk = 64;

  void validate(std::size_t views_available) const;
};

/// |{h > p} & gt| / |{h > p} | gt|; 1.0 when both sets are empty.
double iou(std::span<const double> pred, std::span<const std::uint8_t> gt, double p);

struct ThresholdResult {
  double threshold = 0.0;
  double mean_iou = 0.0;
  std::vector<double> mean_per_threshold;
};

/// Predictions are row-major [samples x voxels]. Returns the threshold with the
/// highest mean IoU, preferring the lower threshold on ties.
ThresholdResult search_threshold(std::span<const double> predictions,
                                 std::span<const data::BinaryGrid> truths,
                                 std::span<const double> thresholds);

/// View directions fed to sample `sample_id` when evaluating with N views.
/// Depends only on (seed, sample_id, N).
std::vector<std::size_t> select_views(std::uint64_t seed, std::uint64_t sample_id, std::size_t n,
                                      std::size_t available);

/// Predicted probabilities [samples x voxels] for every test sample given N views.
std::vector<double> predict_dataset(const net::Model& model, const data::Dataset& testset,
                                    const EvalConfig& cfg, std::size_t n, bool shuffle_views = false);

ThresholdResult threshold_search(const net::Model& model, const data::Dataset& testset,
                                 const EvalConfig& cfg, std::size_t n);

struct EvalRow {
  std::size_t n = 0;
  double threshold = 0.0;
  double mean_iou = 0.0;
  std::vector<double> per_sample;
};

struct EvalReport {
  std::string method;
  std::vector<EvalRow> rows;

  std::string to_csv(bool header = true) const;
  nlohmann::json to_json() const;
  double mean_iou_at(std::size_t n) const;
};

EvalReport eval_sweep(const net::Model& model, const data::Dataset& testset, const EvalConfig& cfg,
                      const std::string& method);

/// Sanity probe that views carry shape information: the best constant grid
/// (per-voxel train frequency, threshold searched) versus a nearest-neighbour
/// single-view lookup into the train split, for each view direction.
struct InformativenessReport {
  double constant_iou = 0.0;
  double constant_threshold = 0.0;
  std::vector<double> single_view_nn_iou;
  std::size_t probe_samples = 0;
  bool passed = false;

  nlohmann::json to_json() const;
};

InformativenessReport informativeness_probe(const data::Dataset& train, const data::Dataset& test,
                                            std::size_t max_probe = 200);

}  // namespace attsets::eval
