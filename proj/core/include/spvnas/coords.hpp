#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "spvnas/feature_matrix.hpp"

namespace spvnas {

// Integer lattice site, tagged with the scene (batch) it belongs to.
struct Coord {
  std::int32_t batch = 0;
  std::int32_t x = 0;
  std::int32_t y = 0;
  std::int32_t z = 0;

  auto operator<=>(const Coord&) const = default;
};

inline Coord offset(const Coord& c, std::int32_t dx, std::int32_t dy, std::int32_t dz) {
  return {c.batch, c.x + dx, c.y + dy, c.z + dz};
}

// Floor division toward negative infinity.
constexpr std::int32_t floor_div(std::int32_t a, std::int32_t b) {
  const std::int32_t q = a / b;
  return (a % b != 0 && ((a < 0) != (b < 0))) ? q - 1 : q;
}

// Rounds each spatial component down to a multiple of `stride`.
inline Coord snap_to_stride(const Coord& c, std::int32_t stride) {
  return {c.batch, floor_div(c.x, stride) * stride, floor_div(c.y, stride) * stride,
          floor_div(c.z, stride) * stride};
}

// FNV-1a (64-bit) over the 16 little-endian bytes of (batch, x, y, z).
std::uint64_t hash_coord(const Coord& c);

inline constexpr std::int32_t kNotFound = -1;

// Open-addressing coordinate -> row index table with linear probing.
// Immutable after construction; capacity is a power of two >= 2 * size().
class CoordHashMap {
 public:
  CoordHashMap() = default;

  // Throws ConfigError on a duplicate coordinate.
  static CoordHashMap build(std::span<const Coord> coords);

  std::int32_t query(const Coord& c) const {
    if (size_ == 0) return kNotFound;
    std::uint64_t slot = hash_coord(c) & mask_;
    while (true) {
      const std::int32_t v = values_[slot];
      if (v == kNotFound) return kNotFound;
      if (keys_[slot] == c) return v;
      slot = (slot + 1) & mask_;
    }
  }

  std::size_t size() const { return size_; }
  std::size_t capacity() const { return keys_.size(); }

 private:
  std::vector<Coord> keys_;
  std::vector<std::int32_t> values_;
  std::uint64_t mask_ = 0;
  std::size_t size_ = 0;
};

using Position = std::array<float, 3>;

// High-resolution point set: positions in meters plus one feature row each.
struct PointTensor {
  std::vector<Position> positions;
  FeatureMatrix features;
  std::vector<std::int32_t> batch;  // empty means every point is in scene 0

  std::size_t size() const { return positions.size(); }
  std::int32_t batch_of(std::size_t k) const { return batch.empty() ? 0 : batch[k]; }
  // Throws ShapeError / DataError when row counts disagree or positions are non-finite.
  void validate() const;
};

// Occupied lattice sites with one feature row per site.
struct SparseTensor {
  std::vector<Coord> coords;
  FeatureMatrix features;
  double voxel_size = 1.0;
  std::int32_t tensor_stride = 1;
};

// Point -> voxel assignment and per-voxel member counts (N_m).
struct VoxelizeMap {
  std::vector<std::int32_t> point_to_voxel;
  std::vector<std::int32_t> voxel_point_count;

  std::size_t voxel_count() const { return voxel_point_count.size(); }
};

// floor(position / v) per point; unique sites in first-appearance order.
std::pair<std::vector<Coord>, VoxelizeMap> voxelize_coords(const PointTensor& points,
                                                           double voxel_size);
// Unique sites of `lattice` in first-appearance order plus the point -> site map.
std::pair<std::vector<Coord>, VoxelizeMap> unique_coords(std::span<const Coord> lattice);

// Per-point stride-1 lattice coordinates (no deduplication).
std::vector<Coord> point_lattice_coords(const PointTensor& points, double voxel_size);

// Assigns each point (given its stride-1 lattice site) to the stride-`stride`
// site that contains it. Every containing site must be present in `hash`.
VoxelizeMap assign_points(std::span<const Coord> point_lattice, std::int32_t stride,
                          const CoordHashMap& hash, std::size_t voxel_count);

// Mean of member point features per voxel.
FeatureMatrix voxelize_features(const FeatureMatrix& point_features, const VoxelizeMap& vmap);
FeatureMatrix voxelize_features(const PointTensor& points, const VoxelizeMap& vmap,
                                std::size_t voxel_count);
FeatureMatrix voxelize_backward(const FeatureMatrix& grad_voxels, const VoxelizeMap& vmap);

// Per point: the 8 lattice corners surrounding position / (v * stride) and
// their trilinear weights. Inactive corners carry row kNotFound; their weight
// is dropped without renormalizing the others.
struct TrilinearMap {
  std::vector<std::array<std::int32_t, 8>> corner;
  std::vector<std::array<float, 8>> weight;

  std::size_t size() const { return corner.size(); }
};

TrilinearMap build_trilinear_map(std::span<const Position> positions,
                                 std::span<const std::int32_t> batch, const CoordHashMap& hash,
                                 double voxel_size, std::int32_t tensor_stride);

FeatureMatrix devoxelize(const TrilinearMap& tmap, const FeatureMatrix& voxel_features);
FeatureMatrix devoxelize_backward(const TrilinearMap& tmap, const FeatureMatrix& grad_points,
                                  std::size_t voxel_count);

// Convenience forms taking the sparse tensor directly.
FeatureMatrix devoxelize(const PointTensor& points, const SparseTensor& s,
                         const CoordHashMap& hash);
FeatureMatrix devoxelize_backward(const PointTensor& points, const SparseTensor& s,
                                  const CoordHashMap& hash, const FeatureMatrix& grad_points);

}  // namespace spvnas
