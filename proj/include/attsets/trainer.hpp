// SPDX-License-Identifier: Apache-2.0
//
// Two-stage feature/attention separate training, the joint end-to-end
// baseline, and whole-network fine-tuning for parameterless or recurrent
// aggregators.
//
// Stage 1 reconstructs every sampled image on its own and averages the loss
// over all M * N single-image reconstructions; only the base group moves.
// Stage 2 reconstructs each sampled set as a whole, averages over the M sets,
// and only the attention group moves. Updates descend the loss.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "attsets/basenet.hpp"
#include "attsets/synthdata.hpp"

namespace attsets::train {

struct NMode {
  enum class Kind { fixed, uniform };
  Kind kind = Kind::fixed;
  std::size_t min = 1;
  std::size_t max = 1;

  static NMode fixed(std::size_t n) { return {Kind::fixed, n, n}; }
  static NMode uniform(std::size_t lo, std::size_t hi) { return {Kind::uniform, lo, hi}; }
  /// Inverse of describe(): "fixed(N)" or "uniform(lo,hi)".
  static NMode parse(std::string_view text);
  std::string describe() const;
  bool operator==(const NMode&) const = default;
};

enum class OptimizerKind { sgd, adam };

struct TrainConfig {
  std::size_t batch_size = 16;
  std::size_t stage1_steps = 2000;
  std::size_t stage2_steps = 500;
  std::size_t joint_steps = 2500;
  /// Views drawn per sample in stage 1 (each view is reconstructed on its own).
  NMode stage1_n_mode = NMode::fixed(4);
  /// Set sizes for stage 2, joint training and fine-tuning.
  NMode n_mode = NMode::fixed(8);
  double learning_rate = 1e-3;
  /// Whole-network rate used by finetune (stage 2 for pooling and GRU models).
  double finetune_rate = 1e-5;
  OptimizerKind optimizer = OptimizerKind::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;

  void validate(std::size_t views_available) const;
};

struct TrainReport {
  std::string stage;
  std::size_t steps = 0;
  std::vector<double> losses;
  double wallclock_ms = 0.0;
  std::uint64_t base_checksum = 0;
  std::uint64_t att_checksum = 0;
  std::optional<std::string> warning;

  nlohmann::json to_json() const;
};

struct BatchItem {
  std::size_t sample = 0;             // index into dataset.samples
  std::vector<std::size_t> views;     // view directions, without replacement
};

/// Deterministic in (cfg.seed, step).
std::vector<BatchItem> sample_minibatch(const data::Dataset& dataset, const TrainConfig& cfg,
                                        std::size_t step);

/// Optimizer hyperparameters plus per-tensor moments keyed by parameter name.
class OptimizerState {
 public:
  explicit OptimizerState(OptimizerKind kind = OptimizerKind::adam, double beta1 = 0.9,
                          double beta2 = 0.999, double eps = 1e-8)
      : kind_(kind), beta1_(beta1), beta2_(beta2), eps_(eps) {}
  static OptimizerState from_config(const TrainConfig& cfg) {
    return OptimizerState(cfg.optimizer, cfg.beta1, cfg.beta2, cfg.adam_eps);
  }

  OptimizerKind kind() const { return kind_; }
  void reset() { slots_.clear(); }
  std::size_t slot_count() const { return slots_.size(); }

 private:
  struct Slot {
    std::vector<double> m, v;
    std::uint64_t t = 0;
  };
  OptimizerKind kind_;
  double beta1_, beta2_, eps_;
  std::map<std::string, Slot> slots_;

  friend void optimizer_step(net::ParamBundle&, net::GroupSelector, double, OptimizerState&);
};

/// Updates only tensors in `group`; every selected tensor must carry a gradient.
void optimizer_step(net::ParamBundle& params, net::GroupSelector group, double lr, OptimizerState& state);

/// Rows of every batch member's views stacked into [T x pixels].
Tensor gather_views(const data::Dataset& dataset, std::span<const BatchItem> batch);
/// Ground-truth grids as [rows x G^3]; with `per_image` each sample repeats once per view.
Tensor gather_targets(const data::Dataset& dataset, std::span<const BatchItem> batch, bool per_image);

/// Mean BCE of a batch. per_image: every view is its own single-element set
/// (stage-1 averaging); otherwise each item is one set (stage-2 averaging).
Tensor batch_loss(const net::Model& model, const data::Dataset& dataset, std::span<const BatchItem> batch,
                  bool per_image);

TrainReport faset_stage1(net::Model& model, const data::Dataset& dataset, const TrainConfig& cfg);
TrainReport faset_stage2(net::Model& model, const data::Dataset& dataset, const TrainConfig& cfg);
TrainReport joint_train(net::Model& model, const data::Dataset& dataset, const TrainConfig& cfg);
TrainReport finetune(net::Model& model, const data::Dataset& dataset, const TrainConfig& cfg);

}  // namespace attsets::train
