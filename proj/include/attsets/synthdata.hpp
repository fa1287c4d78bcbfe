// SPDX-License-Identifier: Apache-2.0
//
// Procedural multi-view dataset: unions of boxes and spheres voxelized on a
// G^3 grid and rendered to orthographic depth images from K fixed directions.
//
// Voxel (x, y, z) occupies the unit cube [x, x+1) x [y, y+1) x [z, z+1) and is
// stored at flat index (x * G + y) * G + z. A voxel is inside a primitive when
// its center is.
//
// Dataset file layout (all integers and floats little-endian):
//   "SFDS"  magic, 4 bytes
//   u32     format version (kDatasetVersion)
//   u32 G, u32 image_side, u32 K, u32 train_count, u32 test_count, u64 seed,
//   u32     split (0 = train, 1 = test)
//   per sample, in id order:
//     u64 id; G^3 bytes of occupancy in {0, 1}; K * image_side^2 f64 depths
//     (view-major, then row-major pixels)
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <variant>
#include <vector>

namespace attsets::data {

inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr std::size_t kViewCount = 8;
inline constexpr double kMinOccupancy = 0.02;
inline constexpr double kMaxOccupancy = 0.5;
inline constexpr int kMaxShapeAttempts = 100;

struct BinaryGrid {
  std::size_t side = 0;
  std::vector<std::uint8_t> occ;

  static BinaryGrid empty(std::size_t side) {
    return {side, std::vector<std::uint8_t>(side * side * side, 0)};
  }
  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
    return (x * side + y) * side + z;
  }
  bool at(std::size_t x, std::size_t y, std::size_t z) const { return occ[index(x, y, z)] != 0; }
  double occupancy() const;
  bool operator==(const BinaryGrid&) const = default;
};

struct Box {
  std::array<double, 3> center;
  std::array<double, 3> half;
};

struct Sphere {
  std::array<double, 3> center;
  double radius;
};

using Primitive = std::variant<Box, Sphere>;

struct ShapeSpec {
  std::vector<Primitive> primitives;
};

BinaryGrid voxelize(const ShapeSpec& spec, std::size_t side);

/// Deterministic in (seed, index). Rejection-samples 1-3 primitives until the
/// union's occupancy lies in [kMinOccupancy, kMaxOccupancy].
std::pair<ShapeSpec, BinaryGrid> make_shape(std::uint64_t seed, std::uint64_t index,
                                            std::size_t side = 16);

/// Orthographic camera: rays travel along `dir`; image columns follow `u`,
/// rows follow `v`. The image plane spans `extent * G` around the grid center
/// and depths are normalized by `chord * G`.
struct ViewDirection {
  std::array<double, 3> dir;
  std::array<double, 3> u;
  std::array<double, 3> v;
  double extent;
  double chord;
};

/// The eight fixed views: +x, -x, +y, -y, +z, -z, then the diagonals
/// (1,1,1)/sqrt3 and (-1,1,-1)/sqrt3.
const std::array<ViewDirection, kViewCount>& view_table();

/// Depth image (row-major, image_side^2): 1 - hit_distance / (chord * G) at the
/// first occupied voxel along each pixel ray, 0 where the ray hits nothing.
std::vector<double> render_view(const BinaryGrid& grid, std::size_t direction, std::size_t image_side);

struct DatasetMeta {
  std::uint32_t train_count = 2000;
  std::uint32_t test_count = 500;
  std::uint32_t grid_side = 16;
  std::uint32_t image_side = 16;
  std::uint32_t views = kViewCount;
  std::uint64_t seed = 1;
  std::uint32_t version = kDatasetVersion;

  void validate() const;
  bool operator==(const DatasetMeta&) const = default;
};

enum class Split : std::uint32_t { train = 0, test = 1 };

struct MultiViewSample {
  std::uint64_t id = 0;
  BinaryGrid gt;
  std::vector<double> views;  // K * image_side^2

  std::span<const double> view(std::size_t k, std::size_t image_side) const {
    const std::size_t px = image_side * image_side;
    return std::span<const double>(views).subspan(k * px, px);
  }
};

struct Dataset {
  DatasetMeta meta;
  Split split = Split::train;
  std::vector<MultiViewSample> samples;

  std::size_t pixels_per_view() const {
    return static_cast<std::size_t>(meta.image_side) * meta.image_side;
  }
};

/// Sample ids: train uses [0, train_count), test [train_count, train_count + test_count).
MultiViewSample make_sample(const DatasetMeta& meta, std::uint64_t id);
Dataset build_split(const DatasetMeta& meta, Split split);

void write_dataset(const std::filesystem::path& path, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& path);

struct DatasetFiles {
  std::filesystem::path train;
  std::filesystem::path test;
};

/// Writes <dir>/train.sfds and <dir>/test.sfds.
DatasetFiles generate_dataset(const DatasetMeta& meta, const std::filesystem::path& dir);

}  // namespace attsets::data
