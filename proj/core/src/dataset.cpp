#include "spvnas/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "spvnas/backbone.hpp"
#include "spvnas/errors.hpp"

namespace spvnas {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path Dataset::points_path(const std::string& id) const { return root / "points" / (id + ".bin"); }
fs::path Dataset::labels_path(const std::string& id) const {
  return root / "labels" / (id + ".label");
}

std::string scene_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu", index);
  return buf;
}

namespace {

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::trunc);
  if (!f) throw DataError("cannot write " + p.string());
  f << text << '\n';
}

std::string read_text(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw DataError("cannot read " + p.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

Dataset generate_dataset(const SceneGenConfig& cfg, const fs::path& dir, std::size_t count,
                         double val_fraction) {
  require_valid(cfg);
  if (val_fraction < 0.0 || val_fraction >= 1.0) throw ConfigError("val_fraction must be in [0, 1)");
  std::error_code ec;
  fs::create_directories(dir / "points", ec);
  fs::create_directories(dir / "labels", ec);
  if (ec) throw DataError("cannot create dataset directory " + dir.string() + ": " + ec.message());
  Dataset ds;
  ds.root = dir;
  const auto n_val = static_cast<std::size_t>(std::llround(double(count) * val_fraction));
  for (std::size_t i = 0; i < count; ++i) {
    Scene s = generate_scene(cfg, i);
    s.id = scene_id(i);
    write_points_bin(ds.points_path(s.id), s);
    write_labels(ds.labels_path(s.id), s.labels);
    (i + n_val < count ? ds.split.train : ds.split.val).push_back(s.id);
  }
  write_text(dir / "split.json", json{{"train", ds.split.train}, {"val", ds.split.val}}.dump());
  write_text(dir / "config.json", to_json(cfg));
  return ds;
}

Dataset open_dataset(const fs::path& dir) {
  Dataset ds;
  ds.root = dir;
  const fs::path split = dir / "split.json";
  if (!fs::exists(split)) throw DataError("dataset " + dir.string() + " has no split.json");
  try {
    const json j = json::parse(read_text(split));
    ds.split.train = j.at("train").get<std::vector<std::string>>();
    ds.split.val = j.at("val").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw DataError(split.string() + ": " + e.what());
  }
  std::set<std::string> train(ds.split.train.begin(), ds.split.train.end());
  for (const auto& id : ds.split.val) {
    if (train.count(id)) throw DataError("scene " + id + " is in both train and val splits");
  }
  return ds;
}

Scene load_scene(const Dataset& ds, const std::string& id) {
  Scene s = read_scene(ds.points_path(id), ds.labels_path(id));
  s.id = id;
  return s;
}

PreparedScene prepare_scene(const Scene& scene, double voxel_size) {
  if (scene.size() == 0) throw DataError("scene " + scene.id + " is empty");
  PreparedScene p;
  p.id = scene.id;
  const PointTensor pts = scene.point_tensor();
  pts.validate();
  p.pipeline = build_coordinate_pipeline(pts.positions, pts.batch, voxel_size, kBackboneTrilinearLevels);
  p.features = pts.features;
  p.labels = scene.labels;
  return p;
}

std::vector<PreparedScene> prepare_scenes(std::span<const Scene> scenes, double voxel_size) {
  std::vector<PreparedScene> out;
  out.reserve(scenes.size());
  for (const auto& s : scenes) out.push_back(prepare_scene(s, voxel_size));
  return out;
}

std::vector<PreparedScene> load_prepared(const Dataset& ds, const std::vector<std::string>& ids,
                                         double voxel_size) {
  std::vector<PreparedScene> out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back(prepare_scene(load_scene(ds, id), voxel_size));
  return out;
}

}  // namespace spvnas
