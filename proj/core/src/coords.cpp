#include "spvnas/coords.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>

#include "spvnas/errors.hpp"

namespace spvnas {

namespace {

std::string to_string(const Coord& c) {
  return "(" + std::to_string(c.batch) + ", " + std::to_string(c.x) + ", " + std::to_string(c.y) +
         ", " + std::to_string(c.z) + ")";
}

std::size_t table_capacity(std::size_t n) {
  return std::bit_ceil(std::max<std::size_t>(2 * n, 8));
}

// Insert-or-find table used while the unique coordinate set is discovered.
class ProbeTable {
 public:
  explicit ProbeTable(std::size_t max_entries)
      : keys_(table_capacity(max_entries)),
        values_(keys_.size(), kNotFound),
        mask_(keys_.size() - 1) {}

  // Returns {row, inserted}.
  std::pair<std::int32_t, bool> insert(const Coord& c, std::int32_t next_row) {
    std::uint64_t slot = hash_coord(c) & mask_;
    while (values_[slot] != kNotFound) {
      if (keys_[slot] == c) return {values_[slot], false};
      slot = (slot + 1) & mask_;
    }
    keys_[slot] = c;
    values_[slot] = next_row;
    return {next_row, true};
  }

 private:
  std::vector<Coord> keys_;
  std::vector<std::int32_t> values_;
  std::uint64_t mask_;
};

std::int32_t lattice_index(float p, double cell) {
  const double q = std::floor(static_cast<double>(p) / cell);
  if (q < std::numeric_limits<std::int32_t>::min() || q > std::numeric_limits<std::int32_t>::max()) {
    throw DataError("voxelize: lattice coordinate out of 32-bit range");
  }
  return static_cast<std::int32_t>(q);
}

}  // namespace

std::uint64_t hash_coord(const Coord& c) {
  std::uint64_t h = 14695981039346656037ULL;
  const std::uint32_t words[4] = {static_cast<std::uint32_t>(c.batch), static_cast<std::uint32_t>(c.x),
                                  static_cast<std::uint32_t>(c.y), static_cast<std::uint32_t>(c.z)};
  for (std::uint32_t w : words) {
    for (int b = 0; b < 4; ++b) {
      h ^= (w >> (8 * b)) & 0xFFu;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

CoordHashMap CoordHashMap::build(std::span<const Coord> coords) {
  CoordHashMap map;
  map.keys_.resize(table_capacity(coords.size()));
  map.values_.assign(map.keys_.size(), kNotFound);
  map.mask_ = map.keys_.size() - 1;
  for (std::size_t i = 0; i < coords.size(); ++i) {
    std::uint64_t slot = hash_coord(coords[i]) & map.mask_;
    while (map.values_[slot] != kNotFound) {
      if (map.keys_[slot] == coords[i]) {
        throw ConfigError("duplicate coordinate " + to_string(coords[i]) + " at rows " +
                          std::to_string(map.values_[slot]) + " and " + std::to_string(i));
      }
      slot = (slot + 1) & map.mask_;
    }
    map.keys_[slot] = coords[i];
    map.values_[slot] = static_cast<std::int32_t>(i);
  }
  map.size_ = coords.size();
  return map;
}

void PointTensor::validate() const {
  if (features.rows != positions.size()) {
    throw ShapeError("point tensor: " + std::to_string(positions.size()) + " positions but " +
                     std::to_string(features.rows) + " feature rows");
  }
  if (!batch.empty() && batch.size() != positions.size()) {
    throw ShapeError("point tensor: batch id count does not match point count");
  }
  for (const auto& p : positions) {
    if (!std::isfinite(p[0]) || !std::isfinite(p[1]) || !std::isfinite(p[2])) {
      throw DataError("point tensor: non-finite position");
    }
  }
}

std::vector<Coord> point_lattice_coords(const PointTensor& points, double voxel_size) {
  if (!(voxel_size > 0.0)) throw ConfigError("voxel size must be positive");
  std::vector<Coord> out(points.size());
  for (std::size_t k = 0; k < points.size(); ++k) {
    const auto& p = points.positions[k];
    out[k] = {points.batch_of(k), lattice_index(p[0], voxel_size), lattice_index(p[1], voxel_size),
              lattice_index(p[2], voxel_size)};
  }
  return out;
}

std::pair<std::vector<Coord>, VoxelizeMap> unique_coords(std::span<const Coord> lattice) {
  std::vector<Coord> coords;
  VoxelizeMap vmap;
  vmap.point_to_voxel.resize(lattice.size());
  ProbeTable table(lattice.size());
  for (std::size_t k = 0; k < lattice.size(); ++k) {
    const auto [row, inserted] = table.insert(lattice[k], static_cast<std::int32_t>(coords.size()));
    if (inserted) {
      coords.push_back(lattice[k]);
      vmap.voxel_point_count.push_back(0);
    }
    vmap.point_to_voxel[k] = row;
    ++vmap.voxel_point_count[row];
  }
  return {std::move(coords), std::move(vmap)};
}

std::pair<std::vector<Coord>, VoxelizeMap> voxelize_coords(const PointTensor& points,
                                                           double voxel_size) {
  return unique_coords(point_lattice_coords(points, voxel_size));
}

VoxelizeMap assign_points(std::span<const Coord> point_lattice, std::int32_t stride,
                          const CoordHashMap& hash, std::size_t voxel_count) {
  VoxelizeMap vmap;
  vmap.point_to_voxel.resize(point_lattice.size());
  vmap.voxel_point_count.assign(voxel_count, 0);
  for (std::size_t k = 0; k < point_lattice.size(); ++k) {
    const Coord c = snap_to_stride(point_lattice[k], stride);
    const std::int32_t row = hash.query(c);
    if (row == kNotFound || static_cast<std::size_t>(row) >= voxel_count) {
      throw ConfigError("assign_points: containing voxel " + to_string(c) + " is not active");
    }
    vmap.point_to_voxel[k] = row;
    ++vmap.voxel_point_count[row];
  }
  return vmap;
}

FeatureMatrix voxelize_features(const FeatureMatrix& point_features, const VoxelizeMap& vmap) {
  if (point_features.rows != vmap.point_to_voxel.size()) {
    throw ShapeError("voxelize: feature rows do not match voxelize map");
  }
  const std::size_t c = point_features.cols;
  FeatureMatrix out(vmap.voxel_count(), c);
  for (std::size_t k = 0; k < point_features.rows; ++k) {
    const float* f = point_features.row(k);
    float* v = out.row(static_cast<std::size_t>(vmap.point_to_voxel[k]));
    for (std::size_t j = 0; j < c; ++j) v[j] += f[j];
  }
  for (std::size_t m = 0; m < vmap.voxel_count(); ++m) {
    const std::int32_t n = vmap.voxel_point_count[m];
    if (n <= 0) throw ConfigError("voxelize: voxel " + std::to_string(m) + " has no member points");
    const float inv = 1.0f / static_cast<float>(n);
    float* v = out.row(m);
    for (std::size_t j = 0; j < c; ++j) v[j] *= inv;
  }
  return out;
}

FeatureMatrix voxelize_features(const PointTensor& points, const VoxelizeMap& vmap,
                                std::size_t voxel_count) {
  if (voxel_count != vmap.voxel_count()) throw ShapeError("voxelize: voxel count mismatch");
  return voxelize_features(points.features, vmap);
}

FeatureMatrix voxelize_backward(const FeatureMatrix& grad_voxels, const VoxelizeMap& vmap) {
  if (grad_voxels.rows != vmap.voxel_count()) {
    throw ShapeError("voxelize backward: gradient rows do not match voxel count");
  }
  const std::size_t c = grad_voxels.cols;
  FeatureMatrix out(vmap.point_to_voxel.size(), c);
  for (std::size_t k = 0; k < out.rows; ++k) {
    const auto m = static_cast<std::size_t>(vmap.point_to_voxel[k]);
    const float inv = 1.0f / static_cast<float>(vmap.voxel_point_count[m]);
    const float* g = grad_voxels.row(m);
    float* o = out.row(k);
    for (std::size_t j = 0; j < c; ++j) o[j] = g[j] * inv;
  }
  return out;
}

TrilinearMap build_trilinear_map(std::span<const Position> positions,
                                 std::span<const std::int32_t> batch, const CoordHashMap& hash,
                                 double voxel_size, std::int32_t tensor_stride) {
  if (!(voxel_size > 0.0) || tensor_stride <= 0) {
    throw ConfigError("devoxelize: voxel size and stride must be positive");
  }
  const double cell = voxel_size * tensor_stride;
  TrilinearMap tmap;
  tmap.corner.resize(positions.size());
  tmap.weight.resize(positions.size());
  for (std::size_t k = 0; k < positions.size(); ++k) {
    std::array<std::int32_t, 3> base{};
    std::array<double, 3> frac{};
    for (int a = 0; a < 3; ++a) {
      const double q = static_cast<double>(positions[k][a]) / cell;
      const double b = std::floor(q);
      base[a] = static_cast<std::int32_t>(b);
      frac[a] = q - b;
    }
    const std::int32_t bid = batch.empty() ? 0 : batch[k];
    for (int d = 0; d < 8; ++d) {
      const int dx = (d >> 2) & 1, dy = (d >> 1) & 1, dz = d & 1;
      const Coord c{bid, (base[0] + dx) * tensor_stride, (base[1] + dy) * tensor_stride,
                    (base[2] + dz) * tensor_stride};
      const double w = (dx ? frac[0] : 1.0 - frac[0]) * (dy ? frac[1] : 1.0 - frac[1]) *
                       (dz ? frac[2] : 1.0 - frac[2]);
      const std::int32_t row = hash.query(c);
      tmap.corner[k][d] = row;
      tmap.weight[k][d] = row == kNotFound ? 0.0f : static_cast<float>(w);
    }
  }
  return tmap;
}

FeatureMatrix devoxelize(const TrilinearMap& tmap, const FeatureMatrix& voxel_features) {
  const std::size_t c = voxel_features.cols;
  FeatureMatrix out(tmap.size(), c);
  for (std::size_t k = 0; k < tmap.size(); ++k) {
    float* o = out.row(k);
    for (int d = 0; d < 8; ++d) {
      const std::int32_t row = tmap.corner[k][d];
      if (row == kNotFound) continue;
      const float w = tmap.weight[k][d];
      const float* f = voxel_features.row(static_cast<std::size_t>(row));
      for (std::size_t j = 0; j < c; ++j) o[j] += w * f[j];
    }
  }
  return out;
}

FeatureMatrix devoxelize_backward(const TrilinearMap& tmap, const FeatureMatrix& grad_points,
                                  std::size_t voxel_count) {
  if (grad_points.rows != tmap.size()) {
    throw ShapeError("devoxelize backward: gradient rows do not match point count");
  }
  const std::size_t c = grad_points.cols;
  FeatureMatrix out(voxel_count, c);
  for (std::size_t k = 0; k < tmap.size(); ++k) {
    const float* g = grad_points.row(k);
    for (int d = 0; d < 8; ++d) {
      const std::int32_t row = tmap.corner[k][d];
      if (row == kNotFound) continue;
      const float w = tmap.weight[k][d];
      float* o = out.row(static_cast<std::size_t>(row));
      for (std::size_t j = 0; j < c; ++j) o[j] += w * g[j];
    }
  }
  return out;
}

FeatureMatrix devoxelize(const PointTensor& points, const SparseTensor& s,
                         const CoordHashMap& hash) {
  const TrilinearMap tmap =
      build_trilinear_map(points.positions, points.batch, hash, s.voxel_size, s.tensor_stride);
  return devoxelize(tmap, s.features);
}

FeatureMatrix devoxelize_backward(const PointTensor& points, const SparseTensor& s,
                                  const CoordHashMap& hash, const FeatureMatrix& grad_points) {
  const TrilinearMap tmap =
      build_trilinear_map(points.positions, points.batch, hash, s.voxel_size, s.tensor_stride);
  return devoxelize_backward(tmap, grad_points, s.coords.size());
}

}  // namespace spvnas
