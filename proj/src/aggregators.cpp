// SPDX-License-Identifier: Apache-2.0
#include "attsets/aggregators.hpp"

#include <array>

#include "attsets/errors.hpp"
#include "attsets/rng.hpp"

namespace attsets::agg {

namespace {

constexpr std::array<std::string_view, 9> kGruNames = {"Wz", "Wr", "Wn", "Uz", "Ur",
                                                       "Un", "bz", "br", "bn"};

void expect_kind(const AggregatorParams& params, AggregatorKind kind) {
  if (params.kind != kind) {
    throw ContractError("aggregator expects params of kind " + std::string(to_string(kind)) +
                        ", got " + std::string(to_string(params.kind)));
  }
}

void expect_vector_set(const Tensor& set, std::size_t width, std::string_view who) {
  if (set.rank() != 2 || set.dim(1) != width) {
    throw ShapeError(std::string(who) + ": expected set [N x " + std::to_string(width) + "], got " +
                     shape_str(set.shape()));
  }
}

Tensor trainable(Tensor t) {
  t.set_requires_grad(true);
  return t;
}

// Activations, softmax, weighted sum for an [N x D] set with activations [N x D].
Aggregation weighted_sum(const Tensor& set, const Tensor& activations) {
  Tensor scores = softmax_set(activations);
  Tensor y = reduce_sum(mul(set, scores), 0);
  return {std::move(y), AttentionMap{std::move(scores)}};
}

}  // namespace

std::string_view to_string(AggregatorKind kind) {
  switch (kind) {
    case AggregatorKind::attsets_fc: return "attsets_fc";
    case AggregatorKind::attsets_conv: return "attsets_conv";
    case AggregatorKind::attsets_elem: return "attsets_elem";
    case AggregatorKind::max: return "max";
    case AggregatorKind::mean: return "mean";
    case AggregatorKind::sum: return "sum";
    case AggregatorKind::gru: return "gru";
  }
  return "unknown";
}

AggregatorKind parse_aggregator_kind(std::string_view name) {
  for (AggregatorKind k : all_aggregator_kinds()) {
    if (to_string(k) == name) return k;
  }
  throw ContractError("unknown aggregator kind '" + std::string(name) + "'");
}

const std::vector<AggregatorKind>& all_aggregator_kinds() {
  static const std::vector<AggregatorKind> kinds = {
      AggregatorKind::attsets_fc, AggregatorKind::attsets_conv, AggregatorKind::attsets_elem,
      AggregatorKind::max,        AggregatorKind::mean,         AggregatorKind::sum,
      AggregatorKind::gru};
  return kinds;
}

bool is_attsets(AggregatorKind kind) {
  return kind == AggregatorKind::attsets_fc || kind == AggregatorKind::attsets_conv ||
         kind == AggregatorKind::attsets_elem;
}

bool is_pooling(AggregatorKind kind) {
  return kind == AggregatorKind::max || kind == AggregatorKind::mean || kind == AggregatorKind::sum;
}

PoolKind pool_kind(AggregatorKind kind) {
  switch (kind) {
    case AggregatorKind::max: return PoolKind::max;
    case AggregatorKind::mean: return PoolKind::mean;
    case AggregatorKind::sum: return PoolKind::sum;
    default: throw ContractError(std::string(to_string(kind)) + " is not a pooling aggregator");
  }
}

const Tensor& AggregatorParams::get(std::string_view name) const {
  for (const auto& [n, t] : weights) {
    if (n == name) return t;
  }
  throw ContractError("aggregator params have no tensor '" + std::string(name) + "'");
}

Aggregation attsets_fc(const Tensor& set, const AggregatorParams& params) {
  expect_kind(params, AggregatorKind::attsets_fc);
  expect_vector_set(set, params.width, "attsets_fc");
  Tensor act = matmul(set, params.get("W"));
  if (params.use_bias) act = add_bias(act, params.get("b"));
  return weighted_sum(set, act);
}

Aggregation attsets_conv(const Tensor& set, const AggregatorParams& params) {
  expect_kind(params, AggregatorKind::attsets_conv);
  if (set.rank() != 3 || set.dim(2) != params.width) {
    throw ShapeError("attsets_conv: expected set [N x S x " + std::to_string(params.width) +
                     "], got " + shape_str(set.shape()));
  }
  const std::size_t n = set.dim(0), s = set.dim(1), c = set.dim(2);
  Tensor act = matmul(reshape(set, {n * s, c}), params.get("W"));
  if (params.use_bias) act = add_bias(act, params.get("b"));
  Aggregation flat = weighted_sum(reshape(set, {n, s * c}), reshape(act, {n, s * c}));
  return {reshape(flat.output, {s, c}), AttentionMap{reshape(flat.attention->scores, {n, s, c})}};
}

Aggregation attsets_elem(const Tensor& set, const AggregatorParams& params) {
  expect_kind(params, AggregatorKind::attsets_elem);
  expect_vector_set(set, params.width, "attsets_elem");
  Tensor act = matmul(set, params.get("w"));
  if (params.use_bias) act = add_bias(act, params.get("b"));
  Tensor per_element = softmax_set(act);
  Tensor scores = repeat_cols(per_element, params.width);
  Tensor y = reduce_sum(mul(set, scores), 0);
  return {std::move(y), AttentionMap{std::move(scores)}};
}

Tensor pool(PoolKind kind, const Tensor& set) {
  if (set.rank() < 1) throw ShapeError("pool: set needs an element axis");
  switch (kind) {
    case PoolKind::max: return reduce_max(set, 0);
    case PoolKind::sum: return reduce_sum(set, 0);
    case PoolKind::mean: {
      // Scale then sum: the same arithmetic as attention with uniform 1/N scores.
      const double n = static_cast<double>(set.dim(0));
      return reduce_sum(mul(set, Tensor::scalar(1.0 / n)), 0);
    }
  }
  throw ContractError("pool: unknown kind");
}

Tensor gru_aggregate(const Tensor& set, const AggregatorParams& params) {
  expect_kind(params, AggregatorKind::gru);
  expect_vector_set(set, params.width, "gru_aggregate");
  const std::size_t n = set.dim(0), d = params.width;

  // Input projections for every step at once; the recurrence itself is sequential.
  const Tensor xz = add_bias(matmul(set, params.get("Wz")), params.get("bz"));
  const Tensor xr = add_bias(matmul(set, params.get("Wr")), params.get("br"));
  const Tensor xn = add_bias(matmul(set, params.get("Wn")), params.get("bn"));
  const Tensor& uz = params.get("Uz");
  const Tensor& ur = params.get("Ur");
  const Tensor& un = params.get("Un");

  Tensor h = Tensor::zeros({1, d});
  for (std::size_t t = 0; t < n; ++t) {
    Tensor z = sigmoid(add(slice_rows(xz, t, 1), matmul(h, uz)));
    Tensor r = sigmoid(add(slice_rows(xr, t, 1), matmul(h, ur)));
    Tensor cand = tanh(add(slice_rows(xn, t, 1), mul(r, matmul(h, un))));
    // h' = (1 - z) * cand + z * h  ==  cand + z * (h - cand)
    h = add(cand, mul(z, sub(h, cand)));
  }
  return reshape(h, {d});
}

AggregatorParams aggregator_init(AggregatorKind kind, std::size_t width, std::uint64_t seed,
                                 bool use_bias) {
  if (width == 0) throw ContractError("aggregator_init: width must be >= 1");
  AggregatorParams p;
  p.kind = kind;
  p.width = width;
  p.use_bias = use_bias && is_attsets(kind);
  switch (kind) {
    case AggregatorKind::attsets_fc:
    case AggregatorKind::attsets_conv:
      p.weights.emplace_back("W", trainable(Tensor::zeros({width, width})));
      if (p.use_bias) p.weights.emplace_back("b", trainable(Tensor::zeros({width})));
      break;
    case AggregatorKind::attsets_elem:
      p.weights.emplace_back("w", trainable(Tensor::zeros({width, 1})));
      if (p.use_bias) p.weights.emplace_back("b", trainable(Tensor::zeros({1})));
      break;
    case AggregatorKind::gru:
      for (std::size_t i = 0; i < kGruNames.size(); ++i) {
        const Shape shape = i < 6 ? Shape{width, width} : Shape{width};
        p.weights.emplace_back(std::string(kGruNames[i]),
                               trainable(Tensor::uniform(shape, -0.1, 0.1, mix_seed(seed, i))));
      }
      break;
    case AggregatorKind::max:
    case AggregatorKind::mean:
    case AggregatorKind::sum:
      break;
  }
  return p;
}

Aggregation aggregate(const Tensor& set, const AggregatorParams& params) {
  switch (params.kind) {
    case AggregatorKind::attsets_fc: return attsets_fc(set, params);
    case AggregatorKind::attsets_elem: return attsets_elem(set, params);
    case AggregatorKind::attsets_conv: {
      if (set.rank() != 2 || set.dim(1) % params.width != 0) {
        throw ShapeError("attsets_conv: feature width " + shape_str(set.shape()) +
                         " is not a multiple of the channel count " + std::to_string(params.width));
      }
      const std::size_t n = set.dim(0), d = set.dim(1);
      Aggregation a = attsets_conv(reshape(set, {n, d / params.width, params.width}), params);
      return {reshape(a.output, {d}), AttentionMap{reshape(a.attention->scores, {n, d})}};
    }
    case AggregatorKind::max:
    case AggregatorKind::mean:
    case AggregatorKind::sum:
      return {pool(pool_kind(params.kind), set), std::nullopt};
    case AggregatorKind::gru:
      return {gru_aggregate(set, params), std::nullopt};
  }
  throw ContractError("aggregate: unknown kind");
}

}  // namespace attsets::agg
