// SPDX-License-Identifier: Apache-2.0
#include "attsets/selftest.hpp"

#include <cmath>
#include <cstdio>
#include <functional>

#include "attsets/aggregators.hpp"
#include "attsets/basenet.hpp"
#include "attsets/metrics.hpp"
#include "attsets/rng.hpp"
#include "attsets/synthdata.hpp"
#include "attsets/tensor.hpp"

namespace attsets::selftest {

namespace {

using agg::AggregatorKind;

std::string fmt(const char* f, double v) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

Tensor permute_rows(const Tensor& t, const std::vector<std::size_t>& perm) {
  const std::size_t row = t.numel() / t.dim(0);
  std::vector<double> out;
  out.reserve(t.numel());
  for (std::size_t r : perm) {
    const auto src = t.values().subspan(r * row, row);
    out.insert(out.end(), src.begin(), src.end());
  }
  return Tensor(t.shape(), std::move(out));
}

/// AttSets params with random (nonzero) weights so the softmax is not uniform.
agg::AggregatorParams random_params(AggregatorKind kind, std::size_t width, std::uint64_t seed) {
  auto p = agg::aggregator_init(kind, width, seed);
  std::uint64_t i = 0;
  for (auto& [name, w] : p.weights) {
    Rng rng(seed, ++i);
    for (double& v : w.data()) v = rng.uniform(-1.0, 1.0);
  }
  return p;
}

CheckResult permutation_invariance(std::uint64_t seed) {
  const AggregatorKind kinds[] = {AggregatorKind::attsets_fc, AggregatorKind::attsets_conv,
                                  AggregatorKind::attsets_elem, AggregatorKind::max,
                                  AggregatorKind::mean, AggregatorKind::sum};
  double worst = 0.0;
  Rng rng(seed, 1);
  for (std::size_t trial = 0; trial < 12; ++trial) {
    const std::size_t n = 2 + rng.index(23);
    const std::size_t d = 16;
    const Tensor set = Tensor::uniform({n, d}, -2.0, 2.0, mix_seed(seed, 100 + trial));
    for (AggregatorKind kind : kinds) {
      const std::size_t width = kind == AggregatorKind::attsets_conv ? 4 : d;
      const auto params = random_params(kind, width, mix_seed(seed, trial));
      const Tensor ref = agg::aggregate(set, params).output;
      for (std::size_t p = 0; p < 3; ++p) {
        const auto perm = rng.sample_without_replacement(n, n);
        worst = std::max(worst, max_abs_diff(ref, agg::aggregate(permute_rows(set, perm), params).output));
      }
    }
  }
  return {"permutation_invariance", worst <= 1e-9, fmt("max deviation %.3g", worst)};
}

CheckResult attention_normalization(std::uint64_t seed) {
  double worst = 0.0;
  const AggregatorKind kinds[] = {AggregatorKind::attsets_fc, AggregatorKind::attsets_conv,
                                  AggregatorKind::attsets_elem};
  for (AggregatorKind kind : kinds) {
    const std::size_t n = 5, d = 16;
    const std::size_t width = kind == AggregatorKind::attsets_conv ? 4 : d;
    const auto params = random_params(kind, width, mix_seed(seed, 7));
    const auto a = agg::aggregate(Tensor::uniform({n, d}, -2.0, 2.0, mix_seed(seed, 8)), params);
    if (!a.attention) return {"attention_normalization", false, "no attention map returned"};
    const Tensor& s = a.attention->scores;
    const std::size_t cols = s.numel() / s.dim(0);
    for (std::size_t c = 0; c < cols; ++c) {
      double total = 0.0;
      for (std::size_t r = 0; r < s.dim(0); ++r) total += s.values()[r * cols + c];
      worst = std::max(worst, std::abs(total - 1.0));
    }
  }
  return {"attention_normalization", worst <= 1e-12, fmt("max |sum - 1| %.3g", worst)};
}

CheckResult single_element_identity(std::uint64_t seed) {
  const AggregatorKind kinds[] = {AggregatorKind::attsets_fc, AggregatorKind::attsets_conv,
                                  AggregatorKind::attsets_elem};
  for (AggregatorKind kind : kinds) {
    const std::size_t d = 16;
    const std::size_t width = kind == AggregatorKind::attsets_conv ? 4 : d;
    const auto params = random_params(kind, width, mix_seed(seed, 11));
    const Tensor x = Tensor::uniform({1, d}, -3.0, 3.0, mix_seed(seed, 12));
    const auto a = agg::aggregate(x, params);
    if (!bitwise_equal(a.output, reshape(x, {d}))) {
      return {"n1_identity", false, std::string(agg::to_string(kind)) + " changed its single input"};
    }
    for (double s : a.attention->scores.values()) {
      if (s != 1.0) return {"n1_identity", false, std::string(agg::to_string(kind)) + " score != 1"};
    }
  }
  return {"n1_identity", true, "output equals input bit-for-bit, scores 1.0"};
}

CheckResult zero_gradient_single(std::uint64_t seed) {
  const std::size_t d = 16;
  auto params = random_params(AggregatorKind::attsets_fc, d, mix_seed(seed, 21));
  Tensor& w = params.weights.front().second;
  w.set_requires_grad(true);
  w.clear_grad();
  const Tensor x = Tensor::uniform({1, d}, -3.0, 3.0, mix_seed(seed, 22));
  const Tensor probe = Tensor::uniform({d}, -1.0, 1.0, mix_seed(seed, 23));
  {
    Tape tape;
    const Tensor y = agg::aggregate(x, params).output;
    tape.backward(reduce_sum(mul(y, probe), 0));
  }
  for (double g : w.grad()) {
    if (g != 0.0) return {"zero_gradient_n1", false, fmt("nonzero weight gradient %.3g", g)};
  }
  return {"zero_gradient_n1", true, "weight gradient identically zero"};
}

net::Model tiny_model(std::uint64_t seed) {
  net::ModelConfig cfg;
  cfg.image_side = 4;
  cfg.latent_dim = 8;
  cfg.encoder_hidden = 8;
  cfg.decoder_hidden = 8;
  cfg.grid_side = 4;
  cfg.conv_channels = 4;
  cfg.aggregator = AggregatorKind::attsets_fc;
  cfg.seed = seed;
  net::Model m = net::model_init(cfg);
  Rng rng(seed, 31);
  for (auto& e : m.params.entries()) {
    for (double& v : e.tensor.data()) v = rng.uniform(-0.5, 0.5);
  }
  return m;
}

CheckResult finite_difference(std::uint64_t seed) {
  net::Model m = tiny_model(seed);
  const std::size_t n = 3;
  const Tensor images = Tensor::uniform({n, 16}, 0.0, 1.0, mix_seed(seed, 32));
  std::vector<double> target(64);
  Rng rng(seed, 33);
  for (double& t : target) t = rng.uniform01() < 0.3 ? 1.0 : 0.0;
  const Tensor y({1, 64}, target);
  const std::size_t sizes[] = {n};
  auto loss = [&] { return bce_loss(net::forward_sets(m, images, sizes), y); };

  m.params.clear_grads();
  {
    Tape tape;
    tape.backward(loss());
  }
  const double eps = 1e-5;
  double worst = 0.0;
  for (auto& e : m.params.entries()) {
    auto w = e.tensor.data();
    const auto analytic = e.tensor.grad();
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double keep = w[i];
      w[i] = keep + eps;
      const double up = loss().item();
      w[i] = keep - eps;
      const double down = loss().item();
      w[i] = keep;
      const double numeric = (up - down) / (2.0 * eps);
      diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
      a2 += analytic[i] * analytic[i];
      n2 += numeric * numeric;
    }
    const double scale = std::max(std::sqrt(a2), std::sqrt(n2));
    if (scale > 0.0) worst = std::max(worst, std::sqrt(diff2) / scale);
  }
  m.params.clear_grads();
  return {"finite_difference", worst < 1e-5, fmt("max relative error %.3g", worst)};
}

CheckResult zero_init_equivalence(std::uint64_t seed) {
  net::ModelConfig cfg;
  cfg.image_side = 8;
  cfg.latent_dim = 16;
  cfg.encoder_hidden = 16;
  cfg.decoder_hidden = 16;
  cfg.grid_side = 4;
  cfg.conv_channels = 4;
  cfg.seed = seed;
  double worst = 0.0;
  const Tensor images = Tensor::uniform({6, 64}, 0.0, 1.0, mix_seed(seed, 41));
  const std::size_t sizes[] = {6};
  cfg.aggregator = AggregatorKind::mean;
  const net::Model mean_model = net::model_init(cfg);
  const Tensor ref = net::forward_sets(mean_model, images, sizes);
  for (AggregatorKind kind :
       {AggregatorKind::attsets_fc, AggregatorKind::attsets_conv, AggregatorKind::attsets_elem}) {
    cfg.aggregator = kind;
    const net::Model att_model = net::model_init(cfg);
    worst = std::max(worst, max_abs_diff(ref, net::forward_sets(att_model, images, sizes)));
  }
  return {"zero_init_equivalence", worst <= 1e-12, fmt("max deviation from mean pooling %.3g", worst)};
}

CheckResult iou_oracle(std::uint64_t seed) {
  Rng rng(seed, 51);
  for (std::size_t trial = 0; trial < 200; ++trial) {
    const std::size_t len = 1 + rng.index(300);
    std::vector<double> pred(len);
    std::vector<std::uint8_t> gt(len);
    for (std::size_t i = 0; i < len; ++i) {
      pred[i] = rng.uniform01();
      gt[i] = rng.uniform01() < 0.4 ? 1 : 0;
    }
    const double p = 0.2 + 0.05 * static_cast<double>(rng.index(13));
    std::size_t both = 0, either = 0;
    for (std::size_t i = 0; i < len; ++i) {
      if (pred[i] > p && gt[i] == 1) ++both;
      if (pred[i] > p || gt[i] == 1) ++either;
    }
    const double expected = either == 0 ? 1.0 : static_cast<double>(both) / static_cast<double>(either);
    if (eval::iou(pred, gt, p) != expected) return {"iou_oracle", false, "mismatch against voxel counting"};
  }
  return {"iou_oracle", true, "200 random pairs match voxel counting"};
}

CheckResult checkpoint_round_trip(std::uint64_t seed) {
  const net::Model m = tiny_model(seed);
  const auto bytes = net::serialize_checkpoint(m.params);
  const auto back = net::parse_checkpoint(bytes);
  const bool same = back.checksum(net::ParamGroup::base) == m.params.checksum(net::ParamGroup::base) &&
                    back.checksum(net::ParamGroup::att) == m.params.checksum(net::ParamGroup::att) &&
                    net::serialize_checkpoint(back) == bytes;
  return {"checkpoint_round_trip", same, same ? "checksums and bytes preserved" : "round trip changed tensors"};
}

CheckResult dataset_determinism(std::uint64_t seed) {
  data::DatasetMeta meta;
  meta.train_count = 3;
  meta.test_count = 2;
  meta.seed = seed + 1;
  const auto a = data::make_sample(meta, 2);
  const auto b = data::make_sample(meta, 2);
  const bool same = a.gt == b.gt && a.views == b.views;
  return {"dataset_determinism", same, same ? "regenerated sample identical" : "sample differs on rerun"};
}

}  // namespace

std::vector<CheckResult> run_all(std::uint64_t seed) {
  const std::vector<std::function<CheckResult(std::uint64_t)>> checks = {
      permutation_invariance, attention_normalization, single_element_identity, zero_gradient_single,
      finite_difference,      zero_init_equivalence,   iou_oracle,              checkpoint_round_trip,
      dataset_determinism};
  const char* names[] = {"permutation_invariance", "attention_normalization", "n1_identity",
                         "zero_gradient_n1",       "finite_difference",       "zero_init_equivalence",
                         "iou_oracle",             "checkpoint_round_trip",   "dataset_determinism"};
  std::vector<CheckResult> results;
  for (std::size_t i = 0; i < checks.size(); ++i) {
    try {
      results.push_back(checks[i](seed));
    } catch (const std::exception& ex) {
      results.push_back({names[i], false, std::string("exception: ") + ex.what()});
    }
  }
  return results;
}

bool all_passed(const std::vector<CheckResult>& results) {
  for (const auto& r : results) {
    if (!r.passed) return false;
  }
  return !results.empty();
}

}  // namespace attsets::selftest
