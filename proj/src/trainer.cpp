// SPDX-License-Identifier: Apache-2.0
#include "attsets/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>

#include "attsets/errors.hpp"
#include "attsets/rng.hpp"

namespace attsets::train {

namespace {

using net::GroupSelector;

std::string hex64(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof(buf), "0x%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct LoopSpec {
  std::string stage;
  std::size_t steps;
  bool per_image;
  GroupSelector grads;    // tensors tracked on the tape
  GroupSelector updates;  // tensors the optimizer may touch
  double lr;
};

TrainReport run_loop(net::Model& model, const data::Dataset& dataset, const TrainConfig& cfg,
                     const LoopSpec& spec) {
  cfg.validate(dataset.meta.views);
  if (dataset.samples.empty()) throw ContractError("training dataset is empty");
  const auto start = std::chrono::steady_clock::now();

  auto& params = model.params;
  params.set_requires_grad(GroupSelector::all, false);
  params.set_requires_grad(spec.grads, true);

  TrainReport report;
  report.stage = spec.stage;
  report.losses.reserve(spec.steps);
  OptimizerState state = OptimizerState::from_config(cfg);
  for (std::size_t step = 0; step < spec.steps; ++step) {
    const auto batch = sample_minibatch(dataset, cfg, step);
    params.clear_grads();
    {
      Tape tape;
      const Tensor loss = batch_loss(model, dataset, batch, spec.per_image);
      tape.backward(loss);
      report.losses.push_back(loss.item());
    }
    optimizer_step(params, spec.updates, spec.lr, state);
  }
  params.clear_grads();
  params.set_requires_grad(GroupSelector::all, true);

  report.steps = spec.steps;
  report.wallclock_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  report.base_checksum = params.checksum(net::ParamGroup::base);
  report.att_checksum = params.checksum(net::ParamGroup::att);
  return report;
}

}  // namespace

NMode NMode::parse(std::string_view text) {
  const auto bad = [&] { return ContractError("cannot parse N mode '" + std::string(text) + "'"); };
  const auto number = [&](std::string_view digits) {
    if (digits.empty() || digits.size() > 6) throw bad();
    std::size_t v = 0;
    for (char c : digits) {
      if (c < '0' || c > '9') throw bad();
      v = v * 10 + static_cast<std::size_t>(c - '0');
    }
    return v;
  };
  if (text.empty() || text.back() != ')') throw bad();
  const auto open = text.find('(');
  if (open == std::string_view::npos) throw bad();
  const auto name = text.substr(0, open);
  const auto args = text.substr(open + 1, text.size() - open - 2);
  if (name == "fixed") return fixed(number(args));
  if (name == "uniform") {
    const auto comma = args.find(',');
    if (comma == std::string_view::npos) throw bad();
    return uniform(number(args.substr(0, comma)), number(args.substr(comma + 1)));
  }
  throw bad();
}

std::string NMode::describe() const {
  if (kind == Kind::fixed) return "fixed(" + std::to_string(min) + ")";
  return "uniform(" + std::to_string(min) + "," + std::to_string(max) + ")";
}

void TrainConfig::validate(std::size_t views_available) const {
  if (batch_size == 0) throw ContractError("train config: batch_size must be >= 1");
  for (const NMode* mode : {&stage1_n_mode, &n_mode}) {
    if (mode->min == 0) throw ContractError("train config: N must be >= 1");
    if (mode->min > mode->max) throw ContractError("train config: N_min > N_max in " + mode->describe());
    if (mode->kind == NMode::Kind::fixed && mode->min != mode->max) {
      throw ContractError("train config: fixed N with differing bounds");
    }
    if (mode->max > views_available) {
      throw ContractError("train config: " + mode->describe() + " needs more views than the " +
                          std::to_string(views_available) + " available per sample");
    }
  }
  if (!(learning_rate >= 0.0) || !(finetune_rate >= 0.0)) {
    throw ContractError("train config: learning rates must be >= 0");
  }
}

nlohmann::json TrainReport::to_json() const {
  nlohmann::json j;
  j["stage"] = stage;
  j["steps"] = steps;
  j["losses"] = losses;
  j["wallclock_ms"] = wallclock_ms;
  j["base_checksum"] = hex64(base_checksum);
  j["att_checksum"] = hex64(att_checksum);
  if (warning) j["warning"] = *warning;
  return j;
}

std::vector<BatchItem> sample_minibatch(const data::Dataset& dataset, const TrainConfig& cfg,
                                        std::size_t step) {
  if (dataset.samples.empty()) throw ContractError("sample_minibatch: dataset is empty");
  const std::size_t k = dataset.meta.views;
  if (cfg.n_mode.max > k) {
    throw ContractError("sample_minibatch: " + cfg.n_mode.describe() + " exceeds the " + std::to_string(k) +
                        " views available");
  }
  Rng rng(cfg.seed, step);
  std::vector<BatchItem> batch(cfg.batch_size);
  for (auto& item : batch) {
    item.sample = rng.index(dataset.samples.size());
    const std::size_t n = cfg.n_mode.kind == NMode::Kind::fixed
                              ? cfg.n_mode.min
                              : cfg.n_mode.min + rng.index(cfg.n_mode.max - cfg.n_mode.min + 1);
    item.views = rng.sample_without_replacement(k, n);
  }
  return batch;
}

void optimizer_step(net::ParamBundle& params, net::GroupSelector group, double lr, OptimizerState& state) {
  for (auto& e : params.entries()) {
    if (!net::selects(group, e.group)) continue;
    if (!e.tensor.has_grad()) {
      throw ContractError("optimizer_step: parameter '" + e.name + "' has no gradient; run backward first");
    }
  }
  for (auto& e : params.entries()) {
    if (!net::selects(group, e.group)) continue;
    auto w = e.tensor.data();
    const auto g = e.tensor.grad();
    if (state.kind_ == OptimizerKind::sgd) {
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * g[i];
      continue;
    }
    auto& slot = state.slots_[e.name];
    if (slot.m.size() != w.size()) {
      slot.m.assign(w.size(), 0.0);
      slot.v.assign(w.size(), 0.0);
      slot.t = 0;
    }
    ++slot.t;
    const double c1 = 1.0 - std::pow(state.beta1_, static_cast<double>(slot.t));
    const double c2 = 1.0 - std::pow(state.beta2_, static_cast<double>(slot.t));
    for (std::size_t i = 0; i < w.size(); ++i) {
      slot.m[i] = state.beta1_ * slot.m[i] + (1.0 - state.beta1_) * g[i];
      slot.v[i] = state.beta2_ * slot.v[i] + (1.0 - state.beta2_) * g[i] * g[i];
      const double mhat = slot.m[i] / c1;
      const double vhat = slot.v[i] / c2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + state.eps_);
    }
  }
}

Tensor gather_views(const data::Dataset& dataset, std::span<const BatchItem> batch) {
  const std::size_t px = dataset.pixels_per_view();
  std::vector<double> flat;
  std::size_t rows = 0;
  for (const auto& item : batch) {
    const auto& sample = dataset.samples.at(item.sample);
    for (std::size_t v : item.views) {
      const auto img = sample.view(v, dataset.meta.image_side);
      flat.insert(flat.end(), img.begin(), img.end());
      ++rows;
    }
  }
  return Tensor({rows, px}, std::move(flat));
}

Tensor gather_targets(const data::Dataset& dataset, std::span<const BatchItem> batch, bool per_image) {
  const std::size_t g = dataset.meta.grid_side;
  const std::size_t voxels = g * g * g;
  std::vector<double> flat;
  std::size_t rows = 0;
  for (const auto& item : batch) {
    const auto& occ = dataset.samples.at(item.sample).gt.occ;
    const std::size_t repeats = per_image ? item.views.size() : 1;
    for (std::size_t r = 0; r < repeats; ++r) {
      for (std::uint8_t v : occ) flat.push_back(v ? 1.0 : 0.0);
      ++rows;
    }
  }
  return Tensor({rows, voxels}, std::move(flat));
}

Tensor batch_loss(const net::Model& model, const data::Dataset& dataset, std::span<const BatchItem> batch,
                  bool per_image) {
  if (batch.empty()) throw ContractError("batch_loss: empty batch");
  std::vector<std::size_t> sizes;
  for (const auto& item : batch) {
    if (item.views.empty()) throw ContractError("batch_loss: batch item without views");
    if (per_image) {
      sizes.insert(sizes.end(), item.views.size(), 1);
    } else {
      sizes.push_back(item.views.size());
    }
  }
  const Tensor probs = net::forward_sets(model, gather_views(dataset, batch), sizes);
  return bce_loss(probs, gather_targets(dataset, batch, per_image));
}

TrainReport faset_stage1(net::Model& model, const data::Dataset& dataset, const TrainConfig& cfg) {
  TrainConfig stage_cfg = cfg;
  stage_cfg.n_mode = cfg.stage1_n_mode;
  // Attention weights stay on the tape so their (identically zero) gradient is observable.
  return run_loop(model, dataset, stage_cfg,
                  {"faset_stage1", cfg.stage1_steps, true, GroupSelector::all, GroupSelector::base,
                   cfg.learning_rate});
}

TrainReport faset_stage2(net::Model& model, const data::Dataset& dataset, const TrainConfig& cfg) {
  if (model.params.group(net::ParamGroup::att).empty()) {
    TrainReport report;
    report.stage = "faset_stage2";
    report.base_checksum = model.params.checksum(net::ParamGroup::base);
    report.att_checksum = model.params.checksum(net::ParamGroup::att);
    report.warning = std::string("aggregator ") + std::string(agg::to_string(model.config.aggregator)) +
                     " has no attention parameters; stage 2 skipped";
    return report;
  }
  return run_loop(model, dataset, cfg,
                  {"faset_stage2", cfg.stage2_steps, false, GroupSelector::att, GroupSelector::att,
                   cfg.learning_rate});
}

TrainReport joint_train(net::Model& model, const data::Dataset& dataset, const TrainConfig& cfg) {
  return run_loop(model, dataset, cfg,
                  {"joint", cfg.joint_steps, false, GroupSelector::all, GroupSelector::all, cfg.learning_rate});
}

TrainReport finetune(net::Model& model, const data::Dataset& dataset, const TrainConfig& cfg) {
  return run_loop(model, dataset, cfg,
                  {"finetune", cfg.stage2_steps, false, GroupSelector::all, GroupSelector::all,
                   cfg.finetune_rate});
}

}  // namespace attsets::train
