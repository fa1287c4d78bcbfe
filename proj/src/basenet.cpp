// SPDX-License-Identifier: Apache-2.0
#include "attsets/basenet.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

#include "attsets/errors.hpp"
#include "attsets/rng.hpp"
#include "binary_io.hpp"

namespace attsets::net {

namespace {

constexpr char kMagic[4] = {'S', 'F', 'C', 'K'};
constexpr std::string_view kAttPrefix = "att.";

struct Fnv1a {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      const auto b = static_cast<std::uint8_t>(v >> (8 * i));
      bytes(&b, 1);
    }
  }
};

Tensor glorot(std::size_t fan_in, std::size_t fan_out, std::uint64_t seed) {
  const double r = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t = Tensor::uniform({fan_in, fan_out}, -r, r, seed);
  t.set_requires_grad(true);
  return t;
}

Tensor zero_bias(std::size_t n) {
  Tensor t = Tensor::zeros({n});
  t.set_requires_grad(true);
  return t;
}

// Expected (name, group, shape) for every tensor of a model configuration.
std::vector<std::tuple<std::string, ParamGroup, Shape>> layout(const ModelConfig& cfg) {
  std::vector<std::tuple<std::string, ParamGroup, Shape>> out = {
      {"enc.w1", ParamGroup::base, {cfg.pixel_count(), cfg.encoder_hidden}},
      {"enc.b1", ParamGroup::base, {cfg.encoder_hidden}},
      {"enc.w2", ParamGroup::base, {cfg.encoder_hidden, cfg.latent_dim}},
      {"enc.b2", ParamGroup::base, {cfg.latent_dim}},
      {"dec.w1", ParamGroup::base, {cfg.latent_dim, cfg.decoder_hidden}},
      {"dec.b1", ParamGroup::base, {cfg.decoder_hidden}},
      {"dec.w2", ParamGroup::base, {cfg.decoder_hidden, cfg.voxel_count()}},
      {"dec.b2", ParamGroup::base, {cfg.voxel_count()}},
  };
  const auto agg = agg::aggregator_init(cfg.aggregator, cfg.aggregator_width(), 0, cfg.attention_bias);
  for (const auto& [name, t] : agg.weights) {
    out.emplace_back(std::string(kAttPrefix) + name, ParamGroup::att, t.shape());
  }
  return out;
}

Tensor stack_images(std::span<const Tensor> views, std::size_t pixels) {
  std::vector<double> flat;
  flat.reserve(views.size() * pixels);
  for (const auto& v : views) {
    if (v.numel() != pixels) {
      throw ShapeError("view of shape " + shape_str(v.shape()) + " does not have " +
                       std::to_string(pixels) + " pixels");
    }
    flat.insert(flat.end(), v.values().begin(), v.values().end());
  }
  return Tensor({views.size(), pixels}, std::move(flat));
}

}  // namespace

void ModelConfig::validate() const {
  if (image_side == 0 || latent_dim == 0 || encoder_hidden == 0 || decoder_hidden == 0 ||
      grid_side == 0 || max_views == 0) {
    throw ContractError("model config: all extents must be >= 1");
  }
  if (aggregator == agg::AggregatorKind::attsets_conv &&
      (conv_channels == 0 || latent_dim % conv_channels != 0)) {
    throw ContractError("model config: latent_dim " + std::to_string(latent_dim) +
                        " must be a multiple of conv_channels " + std::to_string(conv_channels));
  }
}

std::size_t ModelConfig::aggregator_width() const {
  return aggregator == agg::AggregatorKind::attsets_conv ? conv_channels : latent_dim;
}

bool selects(GroupSelector selector, ParamGroup group) {
  switch (selector) {
    case GroupSelector::base: return group == ParamGroup::base;
    case GroupSelector::att: return group == ParamGroup::att;
    case GroupSelector::all: return true;
  }
  return false;
}

// ParamBundle -----------------------------------------------------------------

ParamBundle::ParamBundle(std::vector<NamedParam> entries) : entries_(std::move(entries)) {
  for (std::size_t i = 0; i < entries_.size(); ++i)
    for (std::size_t j = i + 1; j < entries_.size(); ++j)
      if (entries_[i].name == entries_[j].name) {
        throw ContractError("duplicate parameter name '" + entries_[i].name + "'");
      }
}

const Tensor& ParamBundle::at(std::string_view name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e.tensor;
  throw ContractError("no parameter named '" + std::string(name) + "'");
}

Tensor& ParamBundle::at(std::string_view name) {
  return const_cast<Tensor&>(static_cast<const ParamBundle&>(*this).at(name));
}

bool ParamBundle::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.name == name; });
}

std::vector<const NamedParam*> ParamBundle::group(ParamGroup g) const {
  std::vector<const NamedParam*> out;
  for (const auto& e : entries_)
    if (e.group == g) out.push_back(&e);
  return out;
}

std::size_t ParamBundle::parameter_count(ParamGroup g) const {
  std::size_t n = 0;
  for (const auto* e : group(g)) n += e->tensor.numel();
  return n;
}

std::uint64_t ParamBundle::checksum(ParamGroup g) const {
  Fnv1a h;
  for (const auto* e : group(g)) {
    h.bytes(e->name.data(), e->name.size());
    for (std::size_t extent : e->tensor.shape()) h.u64(extent);
    for (double v : e->tensor.values()) h.u64(std::bit_cast<std::uint64_t>(v));
  }
  return h.h;
}

void ParamBundle::set_requires_grad(GroupSelector selector, bool on) {
  for (auto& e : entries_)
    if (selects(selector, e.group)) e.tensor.set_requires_grad(on);
}

void ParamBundle::clear_grads() {
  for (auto& e : entries_) e.tensor.clear_grad();
}

ParamBundle ParamBundle::clone() const {
  std::vector<NamedParam> copy;
  copy.reserve(entries_.size());
  for (const auto& e : entries_) {
    Tensor t = e.tensor.detach();
    t.set_requires_grad(e.tensor.requires_grad());
    copy.push_back({e.name, e.group, std::move(t)});
  }
  return ParamBundle(std::move(copy));
}

// Model -----------------------------------------------------------------------

agg::AggregatorParams Model::aggregator() const {
  agg::AggregatorParams p;
  p.kind = config.aggregator;
  p.width = config.aggregator_width();
  p.use_bias = config.attention_bias && agg::is_attsets(config.aggregator);
  for (const auto* e : params.group(ParamGroup::att)) {
    p.weights.emplace_back(e->name.substr(kAttPrefix.size()), e->tensor);
  }
  return p;
}

Model model_init(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<NamedParam> entries;
  entries.push_back({"enc.w1", ParamGroup::base, glorot(cfg.pixel_count(), cfg.encoder_hidden, mix_seed(cfg.seed, 1))});
  entries.push_back({"enc.b1", ParamGroup::base, zero_bias(cfg.encoder_hidden)});
  entries.push_back({"enc.w2", ParamGroup::base, glorot(cfg.encoder_hidden, cfg.latent_dim, mix_seed(cfg.seed, 2))});
  entries.push_back({"enc.b2", ParamGroup::base, zero_bias(cfg.latent_dim)});
  entries.push_back({"dec.w1", ParamGroup::base, glorot(cfg.latent_dim, cfg.decoder_hidden, mix_seed(cfg.seed, 3))});
  entries.push_back({"dec.b1", ParamGroup::base, zero_bias(cfg.decoder_hidden)});
  entries.push_back({"dec.w2", ParamGroup::base, glorot(cfg.decoder_hidden, cfg.voxel_count(), mix_seed(cfg.seed, 4))});
  entries.push_back({"dec.b2", ParamGroup::base, zero_bias(cfg.voxel_count())});
  auto agg_params = agg::aggregator_init(cfg.aggregator, cfg.aggregator_width(), mix_seed(cfg.seed, 100),
                                         cfg.attention_bias);
  for (auto& [name, t] : agg_params.weights) {
    entries.push_back({std::string(kAttPrefix) + name, ParamGroup::att, std::move(t)});
  }
  return Model{cfg, ParamBundle(std::move(entries))};
}

Model model_from_bundle(const ModelConfig& cfg, ParamBundle params) {
  cfg.validate();
  const auto expected = layout(cfg);
  if (expected.size() != params.entries().size()) {
    throw FormatError("checkpoint holds " + std::to_string(params.entries().size()) + " tensors, model " +
                          "configuration (" + std::string(agg::to_string(cfg.aggregator)) + ") expects " +
                          std::to_string(expected.size()),
                      0);
  }
  for (const auto& [name, group, shape] : expected) {
    if (!params.contains(name)) throw FormatError("checkpoint is missing tensor '" + name + "'", 0);
    const auto it = std::find_if(params.entries().begin(), params.entries().end(),
                                 [&](const NamedParam& e) { return e.name == name; });
    if (it->group != group || it->tensor.shape() != shape) {
      throw FormatError("checkpoint tensor '" + name + "' has shape " + shape_str(it->tensor.shape()) +
                            ", configuration expects " + shape_str(shape),
                        0);
    }
    it->tensor.set_requires_grad(true);
  }
  return Model{cfg, std::move(params)};
}

Tensor encode_views(const Model& model, const Tensor& images) {
  const auto& p = model.params;
  if (images.rank() != 2 || images.dim(1) != model.config.pixel_count()) {
    throw ShapeError("encode_views: expected [V x " + std::to_string(model.config.pixel_count()) +
                     "], got " + shape_str(images.shape()));
  }
  Tensor h = relu(add_bias(matmul(images, p.at("enc.w1")), p.at("enc.b1")));
  return add_bias(matmul(h, p.at("enc.w2")), p.at("enc.b2"));
}

Tensor encode_view(const Model& model, const Tensor& image) {
  if (image.numel() != model.config.pixel_count()) {
    throw ShapeError("encode_view: image " + shape_str(image.shape()) + " does not match image_side " +
                     std::to_string(model.config.image_side));
  }
  return reshape(encode_views(model, reshape(image, {1, image.numel()})), {model.config.latent_dim});
}

Tensor decode_batch(const Model& model, const Tensor& latents) {
  const auto& p = model.params;
  if (latents.rank() != 2 || latents.dim(1) != model.config.latent_dim) {
    throw ShapeError("decode: expected [M x " + std::to_string(model.config.latent_dim) + "], got " +
                     shape_str(latents.shape()));
  }
  Tensor h = relu(add_bias(matmul(latents, p.at("dec.w1")), p.at("dec.b1")));
  return sigmoid(add_bias(matmul(h, p.at("dec.w2")), p.at("dec.b2")));
}

VoxelGrid decode_voxels(const Model& model, const Tensor& latent) {
  if (latent.numel() != model.config.latent_dim) {
    throw ShapeError("decode_voxels: latent " + shape_str(latent.shape()) + " does not have width " +
                     std::to_string(model.config.latent_dim));
  }
  Tensor probs = decode_batch(model, reshape(latent, {1, latent.numel()}));
  return {model.config.grid_side, reshape(probs, {model.config.voxel_count()})};
}

Tensor forward_sets(const Model& model, const Tensor& images, std::span<const std::size_t> set_sizes,
                    std::vector<agg::AttentionMap>* attention) {
  if (set_sizes.empty()) throw ContractError("forward_sets: no sets");
  const Tensor latents = encode_views(model, images);
  const auto params = model.aggregator();
  const std::size_t d = model.config.latent_dim;
  std::vector<Tensor> pooled;
  pooled.reserve(set_sizes.size());
  std::size_t offset = 0;
  for (std::size_t n : set_sizes) {
    if (n == 0) throw ContractError("forward_sets: empty set");
    agg::Aggregation a = agg::aggregate(slice_rows(latents, offset, n), params);
    pooled.push_back(reshape(a.output, {1, d}));
    if (attention && a.attention) attention->push_back(std::move(*a.attention));
    offset += n;
  }
  if (offset != images.dim(0)) {
    throw ShapeError("forward_sets: set sizes cover " + std::to_string(offset) + " of " +
                     std::to_string(images.dim(0)) + " images");
  }
  return decode_batch(model, concat_rows(pooled));
}

Prediction predict(const Model& model, std::span<const Tensor> views) {
  if (views.empty()) throw ContractError("predict: at least one view is required");
  if (views.size() > model.config.max_views) {
    throw ContractError("predict: " + std::to_string(views.size()) + " views exceed the configured maximum " +
                        std::to_string(model.config.max_views));
  }
  const Tensor images = stack_images(views, model.config.pixel_count());
  const std::size_t n = views.size();
  std::vector<agg::AttentionMap> attention;
  Tensor probs = forward_sets(model, images, std::span<const std::size_t>(&n, 1), &attention);
  Prediction out{{model.config.grid_side, reshape(probs, {model.config.voxel_count()})}, std::nullopt};
  if (!attention.empty()) out.attention = std::move(attention.front());
  return out;
}

// Checkpoints -----------------------------------------------------------------

std::vector<std::uint8_t> serialize_checkpoint(const ParamBundle& params) {
  io::ByteWriter w;
  w.bytes(kMagic, 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(params.entries().size()));
  for (const auto& e : params.entries()) {
    w.u32(static_cast<std::uint32_t>(e.name.size()));
    w.bytes(e.name.data(), e.name.size());
    w.u8(static_cast<std::uint8_t>(e.group));
    w.u32(static_cast<std::uint32_t>(e.tensor.rank()));
    for (std::size_t extent : e.tensor.shape()) w.u32(static_cast<std::uint32_t>(extent));
    for (double v : e.tensor.values()) w.f64(v);
  }
  return w.buffer();
}

ParamBundle parse_checkpoint(std::vector<std::uint8_t> bytes) {
  io::ByteReader r(std::move(bytes));
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("not a checkpoint: bad magic bytes", 0);
  const std::uint64_t version_at = r.offset();
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint version " + std::to_string(version) + " does not match supported version " +
                          std::to_string(kCheckpointVersion),
                      version_at);
  }
  const std::uint32_t count = r.u32("tensor count");
  std::vector<NamedParam> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = r.u32("name length");
    std::string name(len, '\0');
    r.bytes(name.data(), len, "tensor name");
    const std::uint64_t group_at = r.offset();
    const std::uint8_t group = r.u8("group tag");
    if (group > 1) throw FormatError("invalid group tag " + std::to_string(group), group_at);
    const std::uint32_t rank = r.u32("rank");
    Shape shape(rank);
    for (auto& extent : shape) {
      const std::uint64_t at = r.offset();
      extent = r.u32("extent");
      if (extent == 0) throw FormatError("zero extent in tensor '" + name + "'", at);
    }
    const std::size_t n = shape_numel(shape);
    r.need(n * 8, "tensor values");
    std::vector<double> values(n);
    for (double& v : values) v = r.f64("tensor values");
    Tensor t(std::move(shape), std::move(values));
    t.set_requires_grad(true);
    entries.push_back({std::move(name), static_cast<ParamGroup>(group), std::move(t)});
  }
  if (!r.at_end()) throw FormatError("trailing bytes after last tensor", r.offset());
  return ParamBundle(std::move(entries));
}

void save_checkpoint(const std::filesystem::path& path, const ParamBundle& params) {
  io::ByteWriter w;
  const auto bytes = serialize_checkpoint(params);
  w.bytes(bytes.data(), bytes.size());
  w.write_file(path);
}

ParamBundle load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint(std::move(data));
}

}  // namespace attsets::net
