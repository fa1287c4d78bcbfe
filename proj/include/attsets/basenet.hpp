// SPDX-License-Identifier: Apache-2.0
//
// Encoder -> set aggregation -> voxel decoder.
//
//   encoder: flatten(image) -> affine -> relu -> affine        (latent, D)
//   decoder: latent -> affine -> relu -> affine -> sigmoid      (G^3 probabilities)
//
// Parameters are split into the base group (encoder + decoder) and the
// attention group (aggregator weights).
//
// Checkpoint layout (little-endian):
//   "SFCK" magic, u32 version, u32 tensor count, then per tensor:
//   u32 name length, name bytes, u8 group (0 = base, 1 = att), u32 rank,
//   u32 extent per axis, f64 values (row-major)
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "attsets/aggregators.hpp"
#include "attsets/tensor.hpp"

namespace attsets::net {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct ModelConfig {
  std::size_t image_side = 16;
  std::size_t latent_dim = 128;
  std::size_t encoder_hidden = 256;
  std::size_t decoder_hidden = 512;
  std::size_t grid_side = 16;
  /// Channel count C used by attsets_conv (latent viewed as D / C locations).
  std::size_t conv_channels = 16;
  std::size_t max_views = 24;
  agg::AggregatorKind aggregator = agg::AggregatorKind::attsets_fc;
  bool attention_bias = false;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t voxel_count() const { return grid_side * grid_side * grid_side; }
  std::size_t pixel_count() const { return image_side * image_side; }
  /// Width handed to aggregator_init.
  std::size_t aggregator_width() const;
};

enum class ParamGroup : std::uint8_t { base = 0, att = 1 };
enum class GroupSelector { base, att, all };

bool selects(GroupSelector selector, ParamGroup group);

struct NamedParam {
  std::string name;
  ParamGroup group;
  Tensor tensor;
};

class ParamBundle {
 public:
  ParamBundle() = default;
  explicit ParamBundle(std::vector<NamedParam> entries);

  std::vector<NamedParam>& entries() { return entries_; }
  const std::vector<NamedParam>& entries() const { return entries_; }

  const Tensor& at(std::string_view name) const;
  Tensor& at(std::string_view name);
  bool contains(std::string_view name) const;

  std::vector<const NamedParam*> group(ParamGroup g) const;
  std::size_t parameter_count(ParamGroup g) const;

  /// FNV-1a over names, shapes and value bits of one group, in entry order.
  std::uint64_t checksum(ParamGroup g) const;

  void set_requires_grad(GroupSelector selector, bool on);
  void clear_grads();

  /// Independent copy (fresh storage) of every tensor.
  ParamBundle clone() const;

 private:
  std::vector<NamedParam> entries_;
};

struct VoxelGrid {
  std::size_t side = 0;
  Tensor probs;  // [G^3]
};

struct Model {
  ModelConfig config;
  ParamBundle params;

  /// Aggregator params sharing storage with the att group.
  agg::AggregatorParams aggregator() const;
};

/// Glorot-uniform encoder/decoder weights, zero biases, aggregator via aggregator_init.
Model model_init(const ModelConfig& cfg);

/// Rebuilds a model around loaded parameters; throws FormatError when the
/// tensors do not match `cfg`.
Model model_from_bundle(const ModelConfig& cfg, ParamBundle params);

/// image: [H x W] (or flat [H*W]). Returns [D].
Tensor encode_view(const Model& model, const Tensor& image);
/// images: [V x H*W]. Returns [V x D].
Tensor encode_views(const Model& model, const Tensor& images);

VoxelGrid decode_voxels(const Model& model, const Tensor& latent);
/// latents: [M x D]. Returns [M x G^3].
Tensor decode_batch(const Model& model, const Tensor& latents);

struct Prediction {
  VoxelGrid grid;
  std::optional<agg::AttentionMap> attention;
};

/// views: each [H x W] or flat [H*W]; 1 <= count <= max_views.
Prediction predict(const Model& model, std::span<const Tensor> views);

/// Batched forward: rows of `images` ([T x H*W]) are grouped into consecutive
/// sets of the given sizes. Returns [M x G^3] with one row per set.
Tensor forward_sets(const Model& model, const Tensor& images, std::span<const std::size_t> set_sizes,
                    std::vector<agg::AttentionMap>* attention = nullptr);

void save_checkpoint(const std::filesystem::path& path, const ParamBundle& params);
ParamBundle load_checkpoint(const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_checkpoint(const ParamBundle& params);
ParamBundle parse_checkpoint(std::vector<std::uint8_t> bytes);

}  // namespace attsets::net
