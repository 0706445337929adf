#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "spvnas/coords.hpp"

namespace spvnas {

inline constexpr std::int32_t kClassGround = 0;
inline constexpr std::int32_t kClassLarge = 1;
inline constexpr std::int32_t kClassSmall = 2;
inline constexpr std::int32_t kClassClutter = 3;
inline constexpr int kSceneClasses = 4;

const char* class_name(std::int32_t c);

struct IntensityModel {
  double mean = 0.5;
  double stddev = 0.1;
  bool operator==(const IntensityModel&) const = default;
};

// Square patch of ground [0, extent]^2 populated with boxes (large), thin
// cylinders (small) and blob-shaped clutter. Densities are points per m^2 of
// sampled surface.
struct SceneGenConfig {
  double extent = 12.8;
  double ground_density = 10.0;
  double ground_noise = 0.03;

  int large_min = 2, large_max = 3;
  double large_length_min = 3.4, large_length_max = 4.6;
  double large_width_min = 1.7, large_width_max = 2.2;
  double large_height_min = 1.3, large_height_max = 1.7;
  double large_density = 12.0;

  int small_min = 2, small_max = 4;
  double small_radius_min = 0.15, small_radius_max = 0.22;
  double small_height_min = 1.5, small_height_max = 1.9;
  double small_density = 16.0;
  // Probability a small object is placed right next to a box or clutter blob.
  double small_adjacent_prob = 0.6;

  // Clutter points as a fraction of ground + large + small points.
  double clutter_fraction = 0.12;
  double clutter_blob_radius_min = 0.3, clutter_blob_radius_max = 0.8;

  IntensityModel ground_intensity{0.25, 0.12};
  IntensityModel large_intensity{0.45, 0.12};
  IntensityModel small_intensity{0.62, 0.12};
  IntensityModel clutter_intensity{0.5, 0.15};

  // Coarse cell edge used for the small-object footprint guarantee
  // (input voxel size times 2^4 by default).
  double coarse_cell = 3.2;

  std::uint64_t seed = 0;

  bool operator==(const SceneGenConfig&) const = default;
};

// Throws ConfigError on impossible or non-positive settings.
void require_valid(const SceneGenConfig& cfg);
std::string to_json(const SceneGenConfig& cfg);
SceneGenConfig scene_config_from_json(const std::string& text);

struct Scene {
  std::string id;
  std::uint64_t seed = 0;
  std::vector<Position> positions;
  std::vector<float> intensity;
  std::vector<std::int32_t> labels;

  std::size_t size() const { return positions.size(); }
  // Features (x, y, z, intensity), one row per point.
  PointTensor point_tensor() const;
};

// Deterministic in (cfg, seed): only integer-seeded mt19937_64 plus the
// conversions in Rng are used.
Scene generate_scene(const SceneGenConfig& cfg, std::uint64_t seed);

// KITTI conventions: .bin holds little-endian f32 (x, y, z, intensity) per
// point; .label holds little-endian u32 per point, semantic class in the low
// 16 bits.
void write_points_bin(const std::filesystem::path& path, const Scene& scene);
void write_labels(const std::filesystem::path& path, std::span<const std::int32_t> labels);
PointTensor read_points_bin(const std::filesystem::path& path);
std::vector<std::int32_t> read_labels(const std::filesystem::path& path);
// Reads both files and checks that their record counts agree.
Scene read_scene(const std::filesystem::path& points, const std::filesystem::path& labels);

}  // namespace spvnas
