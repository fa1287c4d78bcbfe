// SPDX-License-Identifier: Apache-2.0
#include "attsets/synthdata.hpp"

#include <cmath>
#include <limits>

#include "attsets/errors.hpp"
#include "attsets/rng.hpp"
#include "binary_io.hpp"

namespace attsets::data {

namespace {

constexpr char kMagic[4] = {'S', 'F', 'D', 'S'};

using Vec3 = std::array<double, 3>;

Vec3 normalized(Vec3 v) {
  const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  return {v[0] / n, v[1] / n, v[2] / n};
}

Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

ViewDirection axis_view(Vec3 dir, Vec3 u, Vec3 v) { return {dir, u, v, 1.0, 1.0}; }

ViewDirection diagonal_view(Vec3 dir, Vec3 u) {
  const Vec3 d = normalized(dir);
  const Vec3 un = normalized(u);
  return {d, un, normalized(cross(d, un)), std::sqrt(3.0), std::sqrt(3.0)};
}

bool inside(const Primitive& prim, double x, double y, double z) {
  if (const auto* box = std::get_if<Box>(&prim)) {
    return std::abs(x - box->center[0]) <= box->half[0] && std::abs(y - box->center[1]) <= box->half[1] &&
           std::abs(z - box->center[2]) <= box->half[2];
  }
  const auto& s = std::get<Sphere>(prim);
  const double dx = x - s.center[0], dy = y - s.center[1], dz = z - s.center[2];
  return dx * dx + dy * dy + dz * dz <= s.radius * s.radius;
}

// First occupied voxel along the ray o + t d, as a distance from where the ray
// enters the grid box. Negative when nothing is hit.
double march(const BinaryGrid& grid, const Vec3& o, const Vec3& d) {
  const double g = static_cast<double>(grid.side);
  double t_enter = -std::numeric_limits<double>::infinity();
  double t_exit = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 0.0) {
      if (o[a] < 0.0 || o[a] >= g) return -1.0;
      continue;
    }
    double t0 = (0.0 - o[a]) / d[a];
    double t1 = (g - o[a]) / d[a];
    if (t0 > t1) std::swap(t0, t1);
    t_enter = std::max(t_enter, t0);
    t_exit = std::min(t_exit, t1);
  }
  if (!(t_enter < t_exit)) return -1.0;

  const long side = static_cast<long>(grid.side);
  std::array<long, 3> idx{};
  std::array<long, 3> step{};
  std::array<double, 3> t_max{};
  std::array<double, 3> t_delta{};
  for (int a = 0; a < 3; ++a) {
    const double p = o[a] + t_enter * d[a];
    idx[a] = std::clamp(static_cast<long>(std::floor(p)), 0L, side - 1);
    if (d[a] > 0.0) {
      step[a] = 1;
      t_max[a] = (static_cast<double>(idx[a] + 1) - o[a]) / d[a];
      t_delta[a] = 1.0 / d[a];
    } else if (d[a] < 0.0) {
      step[a] = -1;
      t_max[a] = (static_cast<double>(idx[a]) - o[a]) / d[a];
      t_delta[a] = -1.0 / d[a];
    } else {
      step[a] = 0;
      t_max[a] = std::numeric_limits<double>::infinity();
      t_delta[a] = std::numeric_limits<double>::infinity();
    }
  }

  double t = t_enter;
  while (true) {
    if (grid.at(static_cast<std::size_t>(idx[0]), static_cast<std::size_t>(idx[1]),
                static_cast<std::size_t>(idx[2]))) {
      return t - t_enter;
    }
    int a = 0;
    if (t_max[1] < t_max[a]) a = 1;
    if (t_max[2] < t_max[a]) a = 2;
    t = t_max[a];
    idx[a] += step[a];
    if (idx[a] < 0 || idx[a] >= side) return -1.0;
    t_max[a] += t_delta[a];
  }
}

void write_meta(io::ByteWriter& w, const DatasetMeta& meta, Split split) {
  w.bytes(kMagic, 4);
  w.u32(meta.version);
  w.u32(meta.grid_side);
  w.u32(meta.image_side);
  w.u32(meta.views);
  w.u32(meta.train_count);
  w.u32(meta.test_count);
  w.u64(meta.seed);
  w.u32(static_cast<std::uint32_t>(split));
}

}  // namespace

double BinaryGrid::occupancy() const {
  std::size_t n = 0;
  for (std::uint8_t v : occ) n += v != 0;
  return occ.empty() ? 0.0 : static_cast<double>(n) / static_cast<double>(occ.size());
}

BinaryGrid voxelize(const ShapeSpec& spec, std::size_t side) {
  BinaryGrid grid = BinaryGrid::empty(side);
  for (std::size_t x = 0; x < side; ++x)
    for (std::size_t y = 0; y < side; ++y)
      for (std::size_t z = 0; z < side; ++z) {
        const double cx = static_cast<double>(x) + 0.5;
        const double cy = static_cast<double>(y) + 0.5;
        const double cz = static_cast<double>(z) + 0.5;
        for (const auto& prim : spec.primitives) {
          if (inside(prim, cx, cy, cz)) {
            grid.occ[grid.index(x, y, z)] = 1;
            break;
          }
        }
      }
  return grid;
}

std::pair<ShapeSpec, BinaryGrid> make_shape(std::uint64_t seed, std::uint64_t index, std::size_t side) {
  if (side == 0) throw ContractError("make_shape: grid side must be >= 1");
  Rng rng(seed, index);
  const double g = static_cast<double>(side);
  for (int attempt = 0; attempt < kMaxShapeAttempts; ++attempt) {
    ShapeSpec spec;
    const std::size_t count = 1 + rng.index(3);
    for (std::size_t i = 0; i < count; ++i) {
      const Vec3 center = {rng.uniform(0.25 * g, 0.75 * g), rng.uniform(0.25 * g, 0.75 * g),
                           rng.uniform(0.25 * g, 0.75 * g)};
      if (rng.index(2) == 0) {
        spec.primitives.push_back(Box{center,
                                      {rng.uniform(0.08 * g, 0.3 * g), rng.uniform(0.08 * g, 0.3 * g),
                                       rng.uniform(0.08 * g, 0.3 * g)}});
      } else {
        spec.primitives.push_back(Sphere{center, rng.uniform(0.12 * g, 0.35 * g)});
      }
    }
    BinaryGrid grid = voxelize(spec, side);
    const double occ = grid.occupancy();
    if (occ >= kMinOccupancy && occ <= kMaxOccupancy) return {std::move(spec), std::move(grid)};
  }
  throw GenerationError("make_shape: no shape within occupancy bounds after " +
                        std::to_string(kMaxShapeAttempts) + " attempts (seed " + std::to_string(seed) +
                        ", index " + std::to_string(index) + ")");
}

const std::array<ViewDirection, kViewCount>& view_table() {
  static const std::array<ViewDirection, kViewCount> table = {
      axis_view({1, 0, 0}, {0, 1, 0}, {0, 0, 1}),   axis_view({-1, 0, 0}, {0, 1, 0}, {0, 0, 1}),
      axis_view({0, 1, 0}, {1, 0, 0}, {0, 0, 1}),   axis_view({0, -1, 0}, {1, 0, 0}, {0, 0, 1}),
      axis_view({0, 0, 1}, {1, 0, 0}, {0, 1, 0}),   axis_view({0, 0, -1}, {1, 0, 0}, {0, 1, 0}),
      diagonal_view({1, 1, 1}, {1, -1, 0}),         diagonal_view({-1, 1, -1}, {1, 1, 0}),
  };
  return table;
}

std::vector<double> render_view(const BinaryGrid& grid, std::size_t direction, std::size_t image_side) {
  if (direction >= kViewCount) {
    throw ContractError("render_view: direction " + std::to_string(direction) + " out of range [0, " +
                        std::to_string(kViewCount) + ")");
  }
  if (image_side == 0) throw ContractError("render_view: image side must be >= 1");
  const ViewDirection& view = view_table()[direction];
  const double g = static_cast<double>(grid.side);
  const double half = 0.5 * g;
  const double span = view.extent * g;
  const double norm = view.chord * g;
  const double s = static_cast<double>(image_side);

  std::vector<double> image(image_side * image_side, 0.0);
  for (std::size_t row = 0; row < image_side; ++row) {
    const double b = ((static_cast<double>(row) + 0.5) / s - 0.5) * span;
    for (std::size_t col = 0; col < image_side; ++col) {
      const double a = ((static_cast<double>(col) + 0.5) / s - 0.5) * span;
      Vec3 origin;
      for (int k = 0; k < 3; ++k) origin[k] = half + a * view.u[k] + b * view.v[k];
      const double dist = march(grid, origin, view.dir);
      if (dist >= 0.0) image[row * image_side + col] = 1.0 - dist / norm;
    }
  }
  return image;
}

void DatasetMeta::validate() const {
  if (grid_side == 0 || image_side == 0) throw ContractError("dataset: grid and image sides must be >= 1");
  if (views == 0 || views > kViewCount) {
    throw ContractError("dataset: view count must be in [1, " + std::to_string(kViewCount) + "]");
  }
  if (train_count == 0 || test_count == 0) throw ContractError("dataset: split counts must be >= 1");
}

MultiViewSample make_sample(const DatasetMeta& meta, std::uint64_t id) {
  MultiViewSample sample;
  sample.id = id;
  sample.gt = make_shape(meta.seed, id, meta.grid_side).second;
  sample.views.reserve(static_cast<std::size_t>(meta.views) * meta.image_side * meta.image_side);
  for (std::size_t k = 0; k < meta.views; ++k) {
    const auto img = render_view(sample.gt, k, meta.image_side);
    sample.views.insert(sample.views.end(), img.begin(), img.end());
  }
  return sample;
}

Dataset build_split(const DatasetMeta& meta, Split split) {
  meta.validate();
  Dataset ds;
  ds.meta = meta;
  ds.split = split;
  const std::uint64_t first = split == Split::train ? 0 : meta.train_count;
  const std::uint64_t count = split == Split::train ? meta.train_count : meta.test_count;
  ds.samples.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) ds.samples.push_back(make_sample(meta, first + i));
  return ds;
}

void write_dataset(const std::filesystem::path& path, const Dataset& dataset) {
  io::ByteWriter w;
  write_meta(w, dataset.meta, dataset.split);
  for (const auto& s : dataset.samples) {
    w.u64(s.id);
    w.bytes(s.gt.occ.data(), s.gt.occ.size());
    for (double v : s.views) w.f64(v);
  }
  w.write_file(path);
}

Dataset load_dataset(const std::filesystem::path& path) {
  auto r = io::ByteReader::from_file(path);
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("not a dataset file: bad magic bytes", 0);
  const std::uint64_t version_at = r.offset();
  const std::uint32_t version = r.u32("version");
  if (version != kDatasetVersion) {
    throw FormatError("dataset format version " + std::to_string(version) +
                          " does not match supported version " + std::to_string(kDatasetVersion),
                      version_at);
  }
  Dataset ds;
  ds.meta.version = version;
  ds.meta.grid_side = r.u32("grid side");
  ds.meta.image_side = r.u32("image side");
  ds.meta.views = r.u32("view count");
  ds.meta.train_count = r.u32("train count");
  ds.meta.test_count = r.u32("test count");
  ds.meta.seed = r.u64("seed");
  const std::uint64_t split_at = r.offset();
  const std::uint32_t split = r.u32("split");
  if (split > 1) throw FormatError("invalid split tag " + std::to_string(split), split_at);
  ds.split = static_cast<Split>(split);
  try {
    ds.meta.validate();
  } catch (const ContractError& e) {
    throw FormatError(std::string("invalid meta block: ") + e.what(), r.offset());
  }

  const std::size_t voxels = static_cast<std::size_t>(ds.meta.grid_side) * ds.meta.grid_side * ds.meta.grid_side;
  const std::size_t values = static_cast<std::size_t>(ds.meta.views) * ds.meta.image_side * ds.meta.image_side;
  const std::uint64_t count = ds.split == Split::train ? ds.meta.train_count : ds.meta.test_count;
  ds.samples.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    MultiViewSample s;
    s.id = r.u64("sample id");
    s.gt = BinaryGrid::empty(ds.meta.grid_side);
    const std::uint64_t grid_at = r.offset();
    r.bytes(s.gt.occ.data(), voxels, "occupancy grid");
    for (std::size_t k = 0; k < voxels; ++k) {
      if (s.gt.occ[k] > 1) throw FormatError("occupancy byte outside {0, 1}", grid_at + k);
    }
    r.need(values * 8, "view images");
    s.views.resize(values);
    for (double& v : s.views) v = r.f64("view images");
    ds.samples.push_back(std::move(s));
  }
  if (!r.at_end()) throw FormatError("trailing bytes after last sample", r.offset());
  return ds;
}

DatasetFiles generate_dataset(const DatasetMeta& meta, const std::filesystem::path& dir) {
  meta.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
  DatasetFiles files{dir / "train.sfds", dir / "test.sfds"};
  write_dataset(files.train, build_split(meta, Split::train));
  write_dataset(files.test, build_split(meta, Split::test));
  return files;
}

}  // namespace attsets::data
