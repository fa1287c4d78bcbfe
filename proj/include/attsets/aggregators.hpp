// SPDX-License-Identifier: Apache-2.0
//
// Set aggregation operators: attention-weighted sums (feature-wise fc,
// pointwise-conv over spatial sets, element-wise scalar scores), the
// parameterless poolings, and a single-cell GRU used as the order-dependent
// baseline.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "attsets/tensor.hpp"

namespace attsets::agg {

enum class AggregatorKind { attsets_fc, attsets_conv, attsets_elem, max, mean, sum, gru };
enum class PoolKind { max, mean, sum };

std::string_view to_string(AggregatorKind kind);
AggregatorKind parse_aggregator_kind(std::string_view name);
const std::vector<AggregatorKind>& all_aggregator_kinds();

bool is_attsets(AggregatorKind kind);
bool is_pooling(AggregatorKind kind);
PoolKind pool_kind(AggregatorKind kind);

/// Softmax-normalized scores with the shape of the aggregated set.
struct AttentionMap {
  Tensor scores;
};

struct AggregatorParams {
  AggregatorKind kind = AggregatorKind::mean;
  /// Feature width D (channel count C for attsets_conv).
  std::size_t width = 0;
  bool use_bias = false;
  std::vector<std::pair<std::string, Tensor>> weights;

  const Tensor& get(std::string_view name) const;
  bool empty() const { return weights.empty(); }
};

struct Aggregation {
  Tensor output;
  std::optional<AttentionMap> attention;
};

/// y^d = sum_n x_n^d s_n^d with s = softmax over n of (X W [+ b]). set: [N x D].
Aggregation attsets_fc(const Tensor& set, const AggregatorParams& params);

/// set: [N x S x C]. A 1x1 convolution (shared C x C map) produces the
/// activations; the softmax runs over N for every (location, channel).
/// Output [S x C].
Aggregation attsets_conv(const Tensor& set, const AggregatorParams& params);

/// One scalar score per element: a_n = x_n . w, s = softmax(a), y = sum_n s_n x_n.
Aggregation attsets_elem(const Tensor& set, const AggregatorParams& params);

/// Parameterless pooling over the set axis of [N x D].
Tensor pool(PoolKind kind, const Tensor& set);

/// Left-to-right GRU recurrence from a zero hidden state; returns the final state.
Tensor gru_aggregate(const Tensor& set, const AggregatorParams& params);

/// AttSets weights start at zero (mean pooling); GRU weights ~ U(-0.1, 0.1).
AggregatorParams aggregator_init(AggregatorKind kind, std::size_t width, std::uint64_t seed,
                                 bool use_bias = false);

/// Aggregates a vector set [N x D] into [D]. attsets_conv views each D-vector
/// as (D / C) locations of C channels.
Aggregation aggregate(const Tensor& set, const AggregatorParams& params);

}  // namespace attsets::agg
