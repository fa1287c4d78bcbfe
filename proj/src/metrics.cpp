// SPDX-License-Identifier: Apache-2.0
#include "attsets/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>
#include <sstream>

#include "attsets/errors.hpp"
#include "attsets/rng.hpp"

namespace attsets::eval {

namespace {

constexpr std::uint64_t kShuffleStream = 0x5eed5;

std::string fixed6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

}  // namespace

std::vector<double> threshold_grid() {
  std::vector<double> grid;
  for (int k = 0; k <= 12; ++k) grid.push_back(static_cast<double>(20 + 5 * k) / 100.0);
  return grid;
}

void EvalConfig::validate(std::size_t views_available) const {
  if (thresholds.empty()) throw ContractError("eval config: threshold grid is empty");
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (!(thresholds[i] > 0.0 && thresholds[i] < 1.0)) {
      throw ContractError("eval config: threshold " + std::to_string(thresholds[i]) + " is outside (0,1)");
    }
    if (i > 0 && !(thresholds[i] > thresholds[i - 1])) {
      throw ContractError("eval config: thresholds must be strictly increasing");
    }
  }
  if (view_counts.empty()) throw ContractError("eval config: view_counts is empty");
  for (std::size_t n : view_counts) {
    if (n == 0 || n > views_available) {
      throw ContractError("eval config: N=" + std::to_string(n) + " is outside [1, " +
                          std::to_string(views_available) + "]");
    }
  }
  if (chunk == 0) throw ContractError("eval config: chunk must be >= 1");
}

double iou(std::span<const double> pred, std::span<const std::uint8_t> gt, double p) {
  if (pred.size() != gt.size()) {
    throw ShapeError("iou: prediction has " + std::to_string(pred.size()) + " voxels, ground truth has " +
                     std::to_string(gt.size()));
  }
  std::size_t inter = 0;
  std::size_t uni = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool h = pred[i] > p;
    const bool g = gt[i] != 0;
    inter += (h && g) ? 1 : 0;
    uni += (h || g) ? 1 : 0;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

ThresholdResult search_threshold(std::span<const double> predictions, std::span<const data::BinaryGrid> truths,
                                 std::span<const double> thresholds) {
  if (truths.empty()) throw ContractError("threshold search: empty test set");
  if (thresholds.empty()) throw ContractError("threshold search: empty threshold grid");
  const std::size_t voxels = truths.front().occ.size();
  if (predictions.size() != truths.size() * voxels) {
    throw ShapeError("threshold search: " + std::to_string(predictions.size()) + " predictions for " +
                     std::to_string(truths.size()) + " grids of " + std::to_string(voxels) + " voxels");
  }
  ThresholdResult result;
  result.mean_iou = -1.0;
  for (double p : thresholds) {
    double total = 0.0;
    for (std::size_t s = 0; s < truths.size(); ++s) {
      total += iou(predictions.subspan(s * voxels, voxels), truths[s].occ, p);
    }
    const double mean = total / static_cast<double>(truths.size());
    result.mean_per_threshold.push_back(mean);
    if (mean > result.mean_iou) {
      result.mean_iou = mean;
      result.threshold = p;
    }
  }
  return result;
}

std::vector<std::size_t> select_views(std::uint64_t seed, std::uint64_t sample_id, std::size_t n,
                                      std::size_t available) {
  if (n == 0 || n > available) {
    throw ContractError("select_views: N=" + std::to_string(n) + " with " + std::to_string(available) +
                        " views available");
  }
  Rng rng(mix_seed(seed, sample_id), n);
  return rng.sample_without_replacement(available, n);
}

std::vector<double> predict_dataset(const net::Model& model, const data::Dataset& testset, const EvalConfig& cfg,
                                    std::size_t n, bool shuffle_views) {
  if (testset.samples.empty()) throw ContractError("evaluation: empty test set");
  const std::size_t k = testset.meta.views;
  const std::size_t px = testset.pixels_per_view();
  if (px != model.config.pixel_count()) {
    throw ShapeError("evaluation: dataset images have " + std::to_string(px) + " pixels, model expects " +
                     std::to_string(model.config.pixel_count()));
  }
  if (testset.meta.grid_side != model.config.grid_side) {
    throw ShapeError("evaluation: dataset grid side " + std::to_string(testset.meta.grid_side) +
                     " differs from model grid side " + std::to_string(model.config.grid_side));
  }
  const std::size_t voxels = model.config.voxel_count();
  std::vector<double> out;
  out.reserve(testset.samples.size() * voxels);
  for (std::size_t begin = 0; begin < testset.samples.size(); begin += cfg.chunk) {
    const std::size_t end = std::min(testset.samples.size(), begin + cfg.chunk);
    std::vector<double> flat;
    flat.reserve((end - begin) * n * px);
    std::vector<std::size_t> sizes(end - begin, n);
    for (std::size_t s = begin; s < end; ++s) {
      const auto& sample = testset.samples[s];
      auto views = select_views(cfg.permutation_seed, sample.id, n, k);
      if (shuffle_views) {
        Rng rng(mix_seed(cfg.permutation_seed ^ kShuffleStream, sample.id), n);
        const auto order = rng.sample_without_replacement(n, n);
        std::vector<std::size_t> shuffled;
        for (std::size_t i : order) shuffled.push_back(views[i]);
        views = std::move(shuffled);
      }
      for (std::size_t v : views) {
        const auto img = sample.view(v, testset.meta.image_side);
        flat.insert(flat.end(), img.begin(), img.end());
      }
    }
    const Tensor images({(end - begin) * n, px}, std::move(flat));
    const Tensor probs = net::forward_sets(model, images, sizes);
    out.insert(out.end(), probs.values().begin(), probs.values().end());
  }
  return out;
}

ThresholdResult threshold_search(const net::Model& model, const data::Dataset& testset, const EvalConfig& cfg,
                                 std::size_t n) {
  if (testset.samples.empty()) throw ContractError("threshold search: empty test set");
  if (n == 0 || n > testset.meta.views) {
    throw ContractError("threshold search: N=" + std::to_string(n) + " exceeds the " +
                        std::to_string(testset.meta.views) + " available views");
  }
  const auto preds = predict_dataset(model, testset, cfg, n);
  std::vector<data::BinaryGrid> truths;
  truths.reserve(testset.samples.size());
  for (const auto& s : testset.samples) truths.push_back(s.gt);
  return search_threshold(preds, truths, cfg.thresholds);
}

std::string EvalReport::to_csv(bool header) const {
  std::ostringstream os;
  if (header) os << "method,N,threshold,mean_iou,n_samples\n";
  for (const auto& row : rows) {
    os << method << ',' << row.n << ',' << fixed2(row.threshold) << ',' << fixed6(row.mean_iou) << ','
       << row.per_sample.size() << '\n';
  }
  return os.str();
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["method"] = method;
  j["rows"] = nlohmann::json::array();
  for (const auto& row : rows) {
    j["rows"].push_back({{"N", row.n},
                         {"threshold", row.threshold},
                         {"mean_iou", row.mean_iou},
                         {"n_samples", row.per_sample.size()},
                         {"per_sample_iou", row.per_sample}});
  }
  return j;
}

double EvalReport::mean_iou_at(std::size_t n) const {
  for (const auto& row : rows) {
    if (row.n == n) return row.mean_iou;
  }
  throw ContractError("eval report has no row for N=" + std::to_string(n));
}

EvalReport eval_sweep(const net::Model& model, const data::Dataset& testset, const EvalConfig& cfg,
                      const std::string& method) {
  if (testset.samples.empty()) throw ContractError("eval sweep: empty test set");
  cfg.validate(testset.meta.views);
  std::vector<data::BinaryGrid> truths;
  truths.reserve(testset.samples.size());
  for (const auto& s : testset.samples) truths.push_back(s.gt);
  const std::size_t voxels = model.config.voxel_count();

  EvalReport report;
  report.method = method;
  for (std::size_t n : cfg.view_counts) {
    const auto preds = predict_dataset(model, testset, cfg, n);
    const auto best = search_threshold(preds, truths, cfg.thresholds);
    EvalRow row;
    row.n = n;
    row.threshold = best.threshold;
    row.mean_iou = best.mean_iou;
    row.per_sample.reserve(truths.size());
    for (std::size_t s = 0; s < truths.size(); ++s) {
      row.per_sample.push_back(
          iou(std::span<const double>(preds).subspan(s * voxels, voxels), truths[s].occ, best.threshold));
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

nlohmann::json InformativenessReport::to_json() const {
  return {{"constant_iou", constant_iou},
          {"constant_threshold", constant_threshold},
          {"single_view_nn_iou", single_view_nn_iou},
          {"probe_samples", probe_samples},
          {"passed", passed}};
}

InformativenessReport informativeness_probe(const data::Dataset& train, const data::Dataset& test,
                                            std::size_t max_probe) {
  if (train.samples.empty() || test.samples.empty()) {
    throw ContractError("informativeness probe: both splits must be non-empty");
  }
  const std::size_t voxels = train.samples.front().gt.occ.size();
  const std::size_t probe = std::min(max_probe, test.samples.size());
  const std::size_t k = test.meta.views;
  const std::size_t side = test.meta.image_side;

  std::vector<double> freq(voxels, 0.0);
  for (const auto& s : train.samples) {
    for (std::size_t i = 0; i < voxels; ++i) freq[i] += s.gt.occ[i];
  }
  for (double& f : freq) f /= static_cast<double>(train.samples.size());

  std::vector<double> constant;
  std::vector<data::BinaryGrid> truth_grids;
  for (std::size_t s = 0; s < probe; ++s) {
    constant.insert(constant.end(), freq.begin(), freq.end());
    truth_grids.push_back(test.samples[s].gt);
  }
  const auto thresholds = threshold_grid();
  const auto best = search_threshold(constant, truth_grids, thresholds);

  InformativenessReport report;
  report.constant_iou = best.mean_iou;
  report.constant_threshold = best.threshold;
  report.probe_samples = probe;
  report.passed = true;
  for (std::size_t v = 0; v < k; ++v) {
    double total = 0.0;
    for (std::size_t s = 0; s < probe; ++s) {
      const auto query = test.samples[s].view(v, side);
      std::size_t nearest = 0;
      double best_dist = std::numeric_limits<double>::infinity();
      for (std::size_t t = 0; t < train.samples.size(); ++t) {
        const auto ref = train.samples[t].view(v, side);
        double dist = 0.0;
        for (std::size_t i = 0; i < query.size() && dist < best_dist; ++i) {
          const double d = query[i] - ref[i];
          dist += d * d;
        }
        if (dist < best_dist) {
          best_dist = dist;
          nearest = t;
        }
      }
      const auto& occ = train.samples[nearest].gt.occ;
      std::vector<double> as_prob(occ.begin(), occ.end());
      total += iou(as_prob, test.samples[s].gt.occ, 0.5);
    }
    const double mean = total / static_cast<double>(probe);
    report.single_view_nn_iou.push_back(mean);
    if (!(mean > report.constant_iou)) report.passed = false;
  }
  return report;
}

}  // namespace attsets::eval
