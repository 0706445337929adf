#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "spvnas/scene.hpp"
#include "spvnas/sparse_conv.hpp"

namespace spvnas {

// Directory layout:
//   DIR/points/<id>.bin   DIR/labels/<id>.label
//   DIR/split.json        {"train": [ids], "val": [ids]}
//   DIR/config.json       generator config (synthetic datasets only)
struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> val;
};

struct Dataset {
  std::filesystem::path root;
  DatasetSplit split;

  std::filesystem::path points_path(const std::string& id) const;
  std::filesystem::path labels_path(const std::string& id) const;
};

std::string scene_id(std::size_t index);

// Writes `count` scenes (scene i uses seed i); the last round(count *
// val_fraction) ids form the validation split.
Dataset generate_dataset(const SceneGenConfig& cfg, const std::filesystem::path& dir,
                         std::size_t count, double val_fraction = 0.2);
// Throws DataError on a missing/malformed split or overlapping splits.
Dataset open_dataset(const std::filesystem::path& dir);
Scene load_scene(const Dataset& ds, const std::string& id);

// A scene with every geometry-only structure precomputed.
struct PreparedScene {
  std::string id;
  CoordinatePipeline pipeline;
  FeatureMatrix features;
  std::vector<std::int32_t> labels;
};

PreparedScene prepare_scene(const Scene& scene, double voxel_size);
std::vector<PreparedScene> prepare_scenes(std::span<const Scene> scenes, double voxel_size);
std::vector<PreparedScene> load_prepared(const Dataset& ds, const std::vector<std::string>& ids,
                                         double voxel_size);

}  // namespace spvnas
