// SPDX-License-Identifier: Apache-2.0
#include "attsets/config.hpp"

#include <fstream>
#include <limits>

#include "attsets/errors.hpp"

namespace attsets::config {

using nlohmann::json;

namespace {

std::string join_key(const std::string& where, const std::string& key) {
  return where.empty() ? key : where + "." + key;
}

bool compatible(const json& expected, const json& given) {
  if (expected.is_object()) return given.is_object();
  if (expected.is_boolean()) return given.is_boolean();
  if (expected.is_string()) return given.is_string();
  if (expected.is_number_unsigned()) return given.is_number_unsigned();
  if (expected.is_number_integer()) return given.is_number_integer();
  if (expected.is_number()) return given.is_number();
  if (expected.is_array()) {
    if (!given.is_array()) return false;
    if (expected.empty()) return true;
    for (const auto& item : given) {
      if (!compatible(expected.front(), item)) return false;
    }
    return true;
  }
  return false;
}

template <typename T>
T get_uint(const json& section, const char* key, const std::string& where) {
  const auto v = section.at(key).get<std::uint64_t>();
  if (v > std::numeric_limits<T>::max()) {
    throw ContractError("config: " + join_key(where, key) + " is out of range");
  }
  return static_cast<T>(v);
}

std::vector<std::size_t> get_sizes(const json& arr) {
  std::vector<std::size_t> out;
  for (const auto& v : arr) out.push_back(v.get<std::size_t>());
  return out;
}

}  // namespace

std::string_view to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::faset: return "faset";
    case TrainMode::joint: return "joint";
    case TrainMode::finetune: return "finetune";
  }
  return "?";
}

TrainMode parse_train_mode(std::string_view name) {
  if (name == "faset") return TrainMode::faset;
  if (name == "joint") return TrainMode::joint;
  if (name == "finetune") return TrainMode::finetune;
  throw ContractError("unknown training mode '" + std::string(name) + "' (expected faset, joint or finetune)");
}

json to_json(const RunConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["paths"] = {{"data_dir", cfg.paths.data_dir.string()},
                {"out_dir", cfg.paths.out_dir.string()},
                {"checkpoint", cfg.paths.checkpoint.string()}};
  j["dataset"] = {{"train_count", cfg.dataset.train_count}, {"test_count", cfg.dataset.test_count},
                  {"grid_side", cfg.dataset.grid_side},     {"image_side", cfg.dataset.image_side},
                  {"views", cfg.dataset.views},             {"seed", cfg.dataset.seed}};
  j["model"] = {{"latent_dim", cfg.model.latent_dim},
                {"encoder_hidden", cfg.model.encoder_hidden},
                {"decoder_hidden", cfg.model.decoder_hidden},
                {"conv_channels", cfg.model.conv_channels},
                {"max_views", cfg.model.max_views},
                {"aggregator", std::string(agg::to_string(cfg.model.aggregator))},
                {"attention_bias", cfg.model.attention_bias}};
  const auto& t = cfg.train;
  j["train"] = {{"mode", std::string(to_string(cfg.train_mode))},
                {"batch_size", t.batch_size},
                {"stage1_steps", t.stage1_steps},
                {"stage2_steps", t.stage2_steps},
                {"joint_steps", t.joint_steps},
                {"stage1_n_mode", t.stage1_n_mode.describe()},
                {"n_mode", t.n_mode.describe()},
                {"learning_rate", t.learning_rate},
                {"finetune_rate", t.finetune_rate},
                {"optimizer", t.optimizer == train::OptimizerKind::adam ? "adam" : "sgd"},
                {"beta1", t.beta1},
                {"beta2", t.beta2},
                {"adam_eps", t.adam_eps}};
  j["eval"] = {{"view_counts", cfg.eval.view_counts}, {"thresholds", cfg.eval.thresholds}, {"chunk", cfg.eval.chunk}};
  std::vector<std::string> kinds;
  for (auto k : cfg.bench.kinds) kinds.emplace_back(agg::to_string(k));
  j["bench"] = {{"aggregators", kinds},
                {"view_counts", cfg.bench.view_counts},
                {"reps", cfg.bench.reps},
                {"warmup", cfg.bench.warmup}};
  return j;
}

json default_config_json() { return to_json(RunConfig{}); }

void merge_config(json& base, const json& overlay, const std::string& where) {
  if (!overlay.is_object()) {
    throw ContractError("config: " + (where.empty() ? std::string("document") : where) + " must be an object");
  }
  for (auto it = overlay.begin(); it != overlay.end(); ++it) {
    const std::string key = join_key(where, it.key());
    if (!base.contains(it.key())) throw ContractError("config: unknown key '" + key + "'");
    json& slot = base[it.key()];
    if (!compatible(slot, it.value())) {
      throw ContractError("config: '" + key + "' expects " + std::string(slot.type_name()) + ", got " +
                          std::string(it.value().type_name()));
    }
    if (slot.is_object()) {
      merge_config(slot, it.value(), key);
    } else {
      slot = it.value();
    }
  }
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ContractError("override '" + assignment + "' is not of the form key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json overlay = value;
  std::string rest = key;
  std::vector<std::string> parts;
  for (std::size_t pos; (pos = rest.find('.')) != std::string::npos; rest = rest.substr(pos + 1)) {
    parts.push_back(rest.substr(0, pos));
  }
  parts.push_back(rest);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) {
    if (it->empty()) throw ContractError("override key '" + key + "' has an empty component");
    overlay = json{{*it, overlay}};
  }
  merge_config(doc, overlay);
}

RunConfig resolve(const json& doc) {
  json full = default_config_json();
  merge_config(full, doc);
  RunConfig cfg;
  try {
    cfg.seed = full.at("seed").get<std::uint64_t>();

    const auto& p = full.at("paths");
    cfg.paths.data_dir = p.at("data_dir").get<std::string>();
    cfg.paths.out_dir = p.at("out_dir").get<std::string>();
    cfg.paths.checkpoint = p.at("checkpoint").get<std::string>();

    const auto& d = full.at("dataset");
    cfg.dataset.train_count = get_uint<std::uint32_t>(d, "train_count", "dataset");
    cfg.dataset.test_count = get_uint<std::uint32_t>(d, "test_count", "dataset");
    cfg.dataset.grid_side = get_uint<std::uint32_t>(d, "grid_side", "dataset");
    cfg.dataset.image_side = get_uint<std::uint32_t>(d, "image_side", "dataset");
    cfg.dataset.views = get_uint<std::uint32_t>(d, "views", "dataset");
    cfg.dataset.seed = d.at("seed").get<std::uint64_t>();

    const auto& m = full.at("model");
    cfg.model.image_side = cfg.dataset.image_side;
    cfg.model.grid_side = cfg.dataset.grid_side;
    cfg.model.latent_dim = m.at("latent_dim").get<std::size_t>();
    cfg.model.encoder_hidden = m.at("encoder_hidden").get<std::size_t>();
    cfg.model.decoder_hidden = m.at("decoder_hidden").get<std::size_t>();
    cfg.model.conv_channels = m.at("conv_channels").get<std::size_t>();
    cfg.model.max_views = m.at("max_views").get<std::size_t>();
    cfg.model.aggregator = agg::parse_aggregator_kind(m.at("aggregator").get<std::string>());
    cfg.model.attention_bias = m.at("attention_bias").get<bool>();
    cfg.model.seed = cfg.seed;

    const auto& t = full.at("train");
    cfg.train_mode = parse_train_mode(t.at("mode").get<std::string>());
    cfg.train.batch_size = t.at("batch_size").get<std::size_t>();
    cfg.train.stage1_steps = t.at("stage1_steps").get<std::size_t>();
    cfg.train.stage2_steps = t.at("stage2_steps").get<std::size_t>();
    cfg.train.joint_steps = t.at("joint_steps").get<std::size_t>();
    cfg.train.stage1_n_mode = train::NMode::parse(t.at("stage1_n_mode").get<std::string>());
    cfg.train.n_mode = train::NMode::parse(t.at("n_mode").get<std::string>());
    cfg.train.learning_rate = t.at("learning_rate").get<double>();
    cfg.train.finetune_rate = t.at("finetune_rate").get<double>();
    const auto opt = t.at("optimizer").get<std::string>();
    if (opt == "adam") {
      cfg.train.optimizer = train::OptimizerKind::adam;
    } else if (opt == "sgd") {
      cfg.train.optimizer = train::OptimizerKind::sgd;
    } else {
      throw ContractError("config: train.optimizer must be 'adam' or 'sgd', got '" + opt + "'");
    }
    cfg.train.beta1 = t.at("beta1").get<double>();
    cfg.train.beta2 = t.at("beta2").get<double>();
    cfg.train.adam_eps = t.at("adam_eps").get<double>();
    cfg.train.seed = cfg.seed;

    const auto& e = full.at("eval");
    cfg.eval.view_counts = get_sizes(e.at("view_counts"));
    cfg.eval.thresholds = e.at("thresholds").get<std::vector<double>>();
    cfg.eval.chunk = e.at("chunk").get<std::size_t>();
    cfg.eval.permutation_seed = cfg.seed;

    const auto& b = full.at("bench");
    cfg.bench.kinds.clear();
    for (const auto& name : b.at("aggregators")) {
      cfg.bench.kinds.push_back(agg::parse_aggregator_kind(name.get<std::string>()));
    }
    cfg.bench.view_counts = get_sizes(b.at("view_counts"));
    cfg.bench.reps = b.at("reps").get<std::size_t>();
    cfg.bench.warmup = b.at("warmup").get<std::size_t>();
    cfg.bench.model = cfg.model;
    cfg.bench.seed = cfg.seed;
  } catch (const json::exception& ex) {
    throw ContractError(std::string("config: ") + ex.what());
  }

  cfg.dataset.validate();
  cfg.model.validate();
  cfg.train.validate(cfg.dataset.views);
  cfg.eval.validate(cfg.dataset.views);
  cfg.bench.validate();
  return cfg;
}

RunConfig load_run_config(const std::optional<std::filesystem::path>& file,
                          const std::vector<std::string>& overrides, std::optional<std::uint64_t> seed) {
  json doc = default_config_json();
  if (file) {
    std::ifstream in(*file);
    if (!in) throw IoError("cannot open config file " + file->string());
    json user = json::parse(in, nullptr, false);
    if (user.is_discarded()) throw FormatError("config file " + file->string() + " is not valid JSON", 0);
    merge_config(doc, user);
  }
  for (const auto& o : overrides) apply_override(doc, o);
  if (seed) doc["seed"] = *seed;
  return resolve(doc);
}

}  // namespace attsets::config
