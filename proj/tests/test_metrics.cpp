// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "attsets/errors.hpp"
#include "attsets/metrics.hpp"
#include "support.hpp"

using namespace attsets;
using namespace attsets::eval;
using agg::AggregatorKind;

namespace {

const data::Dataset& small_test() {
  static const data::Dataset ds = [] {
    data::DatasetMeta m;
    m.train_count = 10;
    m.test_count = 12;
    m.grid_side = 6;
    m.image_side = 6;
    m.seed = 21;
    return data::build_split(m, data::Split::test);
  }();
  return ds;
}

net::ModelConfig small_model(AggregatorKind kind, std::uint64_t seed = 1) {
  net::ModelConfig c;
  c.image_side = 6;
  c.grid_side = 6;
  c.latent_dim = 8;
  c.encoder_hidden = 12;
  c.decoder_hidden = 12;
  c.conv_channels = 4;
  c.aggregator = kind;
  c.seed = seed;
  return c;
}

void randomize(net::Model& m, net::ParamGroup g, std::uint64_t seed, double scale) {
  std::uint64_t i = 0;
  for (auto& e : m.params.entries()) {
    if (e.group != g) continue;
    Rng rng(seed, ++i);
    for (double& v : e.tensor.data()) v = rng.uniform(-scale, scale);
  }
}

EvalConfig small_eval() {
  EvalConfig c;
  c.view_counts = {1, 2, 4, 8};
  c.permutation_seed = 5;
  c.chunk = 5;
  return c;
}

// Direct set-count implementation: |{i : h_i > p and g_i}| / |{i : h_i > p or g_i}|.
double naive_iou(const std::vector<double>& pred, const std::vector<std::uint8_t>& gt, double p) {
  std::vector<std::size_t> a, b, both, either;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] > p) a.push_back(i);
    if (gt[i]) b.push_back(i);
  }
  for (std::size_t i : a)
    if (std::find(b.begin(), b.end(), i) != b.end()) both.push_back(i);
  either = a;
  for (std::size_t i : b)
    if (std::find(a.begin(), a.end(), i) == a.end()) either.push_back(i);
  if (either.empty()) return 1.0;
  return static_cast<double>(both.size()) / static_cast<double>(either.size());
}

}  // namespace

TEST(Iou, Examples) {
  const std::vector<std::uint8_t> gt = {0, 1, 1, 0};
  EXPECT_EQ(iou(std::vector<double>{0.1, 0.9, 0.8, 0.2}, gt, 0.5), 1.0);
  EXPECT_EQ(iou(std::vector<double>{0.9, 0.1, 0.1, 0.9}, gt, 0.5), 0.0);
  // pred {a, b}, gt {b, c}
  EXPECT_DOUBLE_EQ(iou(std::vector<double>{0.9, 0.9, 0.1, 0.1}, gt, 0.5), 1.0 / 3.0);
}

TEST(Iou, EmptyUnionIsOne) {
  EXPECT_EQ(iou(std::vector<double>{0.1, 0.2}, std::vector<std::uint8_t>{0, 0}, 0.5), 1.0);
}

TEST(Iou, ValueEqualToThresholdIsEmpty) {
  EXPECT_EQ(iou(std::vector<double>{0.5, 0.6}, std::vector<std::uint8_t>{1, 1}, 0.5), 0.5);
}

TEST(Iou, LengthMismatch) {
  EXPECT_THROW(iou(std::vector<double>{0.1}, std::vector<std::uint8_t>{0, 1}, 0.5), ShapeError);
}

TEST(ThresholdGrid, ThirteenValues) {
  const auto g = threshold_grid();
  ASSERT_EQ(g.size(), 13u);
  EXPECT_DOUBLE_EQ(g.front(), 0.20);
  EXPECT_DOUBLE_EQ(g.back(), 0.80);
  for (std::size_t i = 1; i < g.size(); ++i) EXPECT_NEAR(g[i] - g[i - 1], 0.05, 1e-12);
  const EvalConfig def;
  EXPECT_EQ(def.thresholds, g);
  EXPECT_EQ(def.view_counts, std::vector<std::size_t>({1, 2, 3, 4, 5, 8}));
}

TEST(EvalConfig, Validation) {
  EvalConfig c;
  EXPECT_NO_THROW(c.validate(8));
  c.view_counts = {1, 9};
  EXPECT_THROW(c.validate(8), ContractError);
  c = EvalConfig{};
  c.thresholds = {0.3, 0.3};
  EXPECT_THROW(c.validate(8), ContractError);
  c.thresholds = {0.0, 0.5};
  EXPECT_THROW(c.validate(8), ContractError);
  c = EvalConfig{};
  c.view_counts = {0};
  EXPECT_THROW(c.validate(8), ContractError);
}

TEST(SearchThreshold, TiesGoToLowestThreshold) {
  const std::vector<double> preds = {0.1, 0.9, 0.9, 0.1, 0.1, 0.9, 0.9, 0.1};
  const std::vector<data::BinaryGrid> truths = {{1, {0, 1, 0, 0}}, {1, {0, 0, 1, 0}}};
  const auto res = search_threshold(preds, truths, threshold_grid());
  EXPECT_DOUBLE_EQ(res.threshold, 0.20);
  EXPECT_DOUBLE_EQ(res.mean_iou, 0.5);
  for (double m : res.mean_per_threshold) EXPECT_EQ(m, 0.5);
}

TEST(SearchThreshold, PicksSmallestMaximizer) {
  // IoU is 1 for p in [0.35, 0.62) and lower elsewhere.
  const std::vector<double> preds = {0.35, 0.62, 0.1};
  const std::vector<data::BinaryGrid> truths = {{1, {0, 1, 0}}};
  const auto res = search_threshold(preds, truths, std::vector<double>{0.3, 0.4, 0.5, 0.6, 0.7});
  EXPECT_DOUBLE_EQ(res.threshold, 0.4);
  EXPECT_EQ(res.mean_iou, 1.0);
  EXPECT_EQ(res.mean_per_threshold, std::vector<double>({0.5, 1.0, 1.0, 1.0, 0.0}));
}

TEST(SearchThreshold, Errors) {
  EXPECT_THROW(search_threshold(std::vector<double>{}, std::vector<data::BinaryGrid>{}, threshold_grid()),
               ContractError);
  EXPECT_THROW(search_threshold(std::vector<double>{0.5}, std::vector<data::BinaryGrid>{{1, {0, 1}}},
                                threshold_grid()),
               ShapeError);
}

TEST(ThresholdSearch, SaturatedModelReturnsLowestThreshold) {
  net::Model m = net::model_init(small_model(AggregatorKind::mean));
  for (double& v : m.params.at("dec.w2").data()) v = 0.0;
  auto bias = m.params.at("dec.b2").data();
  const double logit = std::log(0.9 / 0.1);
  for (std::size_t i = 0; i < bias.size(); ++i) bias[i] = (i % 3 == 0) ? logit : -logit;
  const auto res = threshold_search(m, small_test(), small_eval(), 2);
  EXPECT_DOUBLE_EQ(res.threshold, 0.20);
  for (double v : res.mean_per_threshold) EXPECT_EQ(v, res.mean_iou);
}

TEST(ThresholdSearch, MatchesBruteForce) {
  net::Model m = net::model_init(small_model(AggregatorKind::attsets_fc, 2));
  randomize(m, net::ParamGroup::base, 3, 0.6);
  randomize(m, net::ParamGroup::att, 4, 0.6);
  const EvalConfig cfg = small_eval();
  const auto res = threshold_search(m, small_test(), cfg, 4);
  const auto preds = predict_dataset(m, small_test(), cfg, 4);
  const std::size_t voxels = 216;
  double best = -1.0, best_p = 0.0;
  for (double p : cfg.thresholds) {
    double total = 0.0;
    for (std::size_t s = 0; s < small_test().samples.size(); ++s) {
      const std::vector<double> pred(preds.begin() + s * voxels, preds.begin() + (s + 1) * voxels);
      total += naive_iou(pred, small_test().samples[s].gt.occ, p);
    }
    const double mean = total / static_cast<double>(small_test().samples.size());
    if (mean > best) {
      best = mean;
      best_p = p;
    }
  }
  EXPECT_EQ(res.threshold, best_p);
  EXPECT_NEAR(res.mean_iou, best, 1e-15);
}

TEST(ThresholdSearch, Errors) {
  const net::Model m = net::model_init(small_model(AggregatorKind::mean));
  data::Dataset empty = small_test();
  empty.samples.clear();
  EXPECT_THROW(threshold_search(m, empty, small_eval(), 1), ContractError);
  EXPECT_THROW(threshold_search(m, small_test(), small_eval(), 9), ContractError);
  net::ModelConfig other = small_model(AggregatorKind::mean);
  other.image_side = 5;
  EXPECT_THROW(threshold_search(net::model_init(other), small_test(), small_eval(), 1), ShapeError);
}

TEST(PredictDataset, ChunkingDoesNotChangeResults) {
  net::Model m = net::model_init(small_model(AggregatorKind::attsets_elem, 6));
  randomize(m, net::ParamGroup::att, 7, 1.0);
  EvalConfig a = small_eval();
  EvalConfig b = small_eval();
  a.chunk = 1;
  b.chunk = 64;
  const auto pa = predict_dataset(m, small_test(), a, 3);
  const auto pb = predict_dataset(m, small_test(), b, 3);
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_NEAR(pa[i], pb[i], 1e-14);
}

TEST(SelectViews, DependsOnlyOnSeedSampleAndN) {
  const auto v = select_views(5, 100, 4, 8);
  EXPECT_EQ(v, select_views(5, 100, 4, 8));
  EXPECT_EQ(v.size(), 4u);
  std::vector<std::size_t> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(std::adjacent_find(sorted.begin(), sorted.end()), sorted.end());
  for (std::size_t k : v) EXPECT_LT(k, 8u);
  EXPECT_THROW(select_views(5, 100, 0, 8), ContractError);
  EXPECT_THROW(select_views(5, 100, 9, 8), ContractError);
}

TEST(EvalSweep, RowsDeterminismAndCsv) {
  net::Model m = net::model_init(small_model(AggregatorKind::attsets_fc, 8));
  randomize(m, net::ParamGroup::att, 9, 1.0);
  const auto r1 = eval_sweep(m, small_test(), small_eval(), "attsets_fc");
  const auto r2 = eval_sweep(m, small_test(), small_eval(), "attsets_fc");
  ASSERT_EQ(r1.rows.size(), 4u);
  EXPECT_EQ(r1.to_csv(), r2.to_csv());
  EXPECT_EQ(r1.to_json(), r2.to_json());
  const std::string csv = r1.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "method,N,threshold,mean_iou,n_samples");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  const auto grid = threshold_grid();
  for (const auto& row : r1.rows) {
    EXPECT_NE(std::find(grid.begin(), grid.end(), row.threshold), grid.end());
    EXPECT_GE(row.mean_iou, 0.0);
    EXPECT_LE(row.mean_iou, 1.0);
    ASSERT_EQ(row.per_sample.size(), small_test().samples.size());
    double total = 0.0;
    for (double v : row.per_sample) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
      total += v;
    }
    EXPECT_NEAR(total / row.per_sample.size(), row.mean_iou, 1e-12);
  }
  EXPECT_EQ(r1.mean_iou_at(4), r1.rows[2].mean_iou);
  EXPECT_THROW(r1.mean_iou_at(3), ContractError);
  EXPECT_EQ(r1.to_json()["rows"][0]["per_sample_iou"].size(), small_test().samples.size());
}

TEST(EvalSweep, ZeroInitAttsetsMatchesMeanPooling) {
  const net::Model att = net::model_init(small_model(AggregatorKind::attsets_fc, 10));
  const net::Model mean = net::model_init(small_model(AggregatorKind::mean, 10));
  const auto ra = eval_sweep(att, small_test(), small_eval(), "x");
  const auto rm = eval_sweep(mean, small_test(), small_eval(), "x");
  EXPECT_EQ(ra.to_csv(), rm.to_csv());
}

// Invariants.

TEST(Properties, IouMatchesNaiveCountingOnRandomPairs) {
  Rng rng(1234);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t len = 1 + rng.index(200);
    const double density = rng.uniform01();
    std::vector<double> pred(len);
    std::vector<std::uint8_t> gt(len);
    for (std::size_t i = 0; i < len; ++i) {
      pred[i] = rng.uniform01();
      gt[i] = rng.uniform01() < density ? 1 : 0;
    }
    const double p = threshold_grid()[rng.index(13)];
    ASSERT_EQ(iou(pred, gt, p), naive_iou(pred, gt, p)) << "trial " << trial;
  }
}

TEST(Properties, ShufflingChosenViewsChangesNoIou) {
  for (auto kind : {AggregatorKind::attsets_fc, AggregatorKind::attsets_conv, AggregatorKind::attsets_elem,
                    AggregatorKind::max, AggregatorKind::mean, AggregatorKind::sum}) {
    net::Model m = net::model_init(small_model(kind, 11));
    randomize(m, net::ParamGroup::att, 12, 1.0);
    const EvalConfig cfg = small_eval();
    const auto plain = predict_dataset(m, small_test(), cfg, 5, false);
    const auto shuffled = predict_dataset(m, small_test(), cfg, 5, true);
    std::vector<data::BinaryGrid> truths;
    for (const auto& s : small_test().samples) truths.push_back(s.gt);
    const auto a = search_threshold(plain, truths, cfg.thresholds);
    const auto b = search_threshold(shuffled, truths, cfg.thresholds);
    EXPECT_EQ(a.threshold, b.threshold) << agg::to_string(kind);
    EXPECT_EQ(a.mean_per_threshold, b.mean_per_threshold) << agg::to_string(kind);
  }
}

TEST(Properties, ViewSelectionIsMethodIndependent) {
  // Rebuild every set from select_views alone and compare with what the sweep fed each model.
  const EvalConfig cfg = small_eval();
  const auto& ds = small_test();
  for (auto kind : {AggregatorKind::mean, AggregatorKind::attsets_fc, AggregatorKind::gru}) {
    net::Model m = net::model_init(small_model(kind, 13));
    randomize(m, net::ParamGroup::att, 14, 1.0);
    for (std::size_t n : {1, 3, 8}) {
      const auto preds = predict_dataset(m, ds, cfg, n);
      for (std::size_t s = 0; s < ds.samples.size(); ++s) {
        std::vector<Tensor> views;
        for (std::size_t v : select_views(cfg.permutation_seed, ds.samples[s].id, n, ds.meta.views)) {
          const auto img = ds.samples[s].view(v, ds.meta.image_side);
          views.emplace_back(Shape{ds.meta.image_side, ds.meta.image_side}, std::vector<double>(img.begin(), img.end()));
        }
        const Tensor expect = net::predict(m, views).grid.probs;
        for (std::size_t i = 0; i < expect.numel(); ++i) {
          ASSERT_NEAR(preds[s * expect.numel() + i], expect.at(i), 1e-14) << agg::to_string(kind);
        }
      }
    }
  }
}
