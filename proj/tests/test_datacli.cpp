#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include <unistd.h>

#include "spvnas/coords.hpp"
#include "spvnas/dataset.hpp"
#include "spvnas/errors.hpp"
#include "spvnas/scene.hpp"

using namespace spvnas;
namespace fs = std::filesystem;

namespace {

// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("spvnas_" + tag + "_" + std::to_string(getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_bytes(const fs::path& p, const void* data, std::size_t n) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

std::vector<char> read_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

}  // namespace

TEST(SceneGen, DeterministicPerSeed) {
  const SceneGenConfig cfg;
  const Scene a = generate_scene(cfg, 5), b = generate_scene(cfg, 5), c = generate_scene(cfg, 6);
  EXPECT_EQ(a.positions, b.positions);
  EXPECT_EQ(a.intensity, b.intensity);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_NE(a.positions, c.positions);
  EXPECT_EQ(a.labels.size(), a.size());
  EXPECT_EQ(a.intensity.size(), a.size());
  for (const auto& p : a.positions) {
    EXPECT_GE(p[0], 0.0);
    EXPECT_LE(p[0], cfg.extent);
    EXPECT_GE(p[1], 0.0);
    EXPECT_LE(p[1], cfg.extent);
  }
}

TEST(SceneGen, NoObjectsIsGroundOnly) {
  SceneGenConfig cfg;
  cfg.large_min = cfg.large_max = 0;
  cfg.small_min = cfg.small_max = 0;
  cfg.clutter_fraction = 0.0;
  const Scene s = generate_scene(cfg, 1);
  ASSERT_GT(s.size(), 0u);
  for (auto l : s.labels) EXPECT_EQ(l, kClassGround);
}

TEST(SceneGen, ClassCensusOverHundredSeeds) {
  const SceneGenConfig cfg;
  std::array<double, kSceneClasses> counts{};
  double total = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Scene s = generate_scene(cfg, seed);
    for (auto l : s.labels) ++counts[static_cast<std::size_t>(l)];
    total += double(s.size());
  }
  const double small = counts[kClassSmall] / total;
  EXPECT_GE(small, 0.01);
  EXPECT_LE(small, 0.05);
  for (double c : counts) EXPECT_GT(c, 0.0);
}

TEST(SceneGen, SmallObjectSpansAtMostTwoCoarseCells) {
  SceneGenConfig cfg;
  cfg.small_min = cfg.small_max = 1;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Scene s = generate_scene(cfg, seed);
    std::set<std::pair<std::int64_t, std::int64_t>> cells;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s.labels[i] != kClassSmall) continue;
      const auto& p = s.positions[i];
      cells.insert({static_cast<std::int64_t>(std::floor(p[0] / cfg.coarse_cell)),
                    static_cast<std::int64_t>(std::floor(p[1] / cfg.coarse_cell))});
    }
    EXPECT_GE(cells.size(), 1u) << "seed " << seed;
    EXPECT_LE(cells.size(), 2u) << "seed " << seed;
  }
}

TEST(SceneGen, ConfigValidationAndJson) {
  SceneGenConfig cfg;
  cfg.ground_density = 0.0;
  EXPECT_THROW(require_valid(cfg), ConfigError);
  cfg = {};
  cfg.extent = 2.0;
  EXPECT_THROW(generate_scene(cfg, 0), ConfigError);
  cfg = {};
  cfg.small_radius_min = cfg.small_radius_max = 2.0;
  EXPECT_THROW(require_valid(cfg), ConfigError);
  cfg = {};
  cfg.seed = 7;
  cfg.small_density = 20.0;
  EXPECT_EQ(scene_config_from_json(to_json(cfg)), cfg);
  EXPECT_THROW(scene_config_from_json("{not json"), ConfigError);
}

TEST(KittiFormat, SinglePointFile) {
  TempDir dir("bin1");
  const float rec[4] = {1.0f, 2.0f, 3.0f, 0.5f};
  write_bytes(dir.path / "one.bin", rec, sizeof rec);
  const PointTensor p = read_points_bin(dir.path / "one.bin");
  ASSERT_EQ(p.size(), 1u);
  EXPECT_EQ(p.positions[0], (Position{1.0, 2.0, 3.0}));
  EXPECT_EQ(p.features(0, 3), 0.5f);
  EXPECT_EQ(p.features(0, 0), 1.0f);
}

TEST(KittiFormat, LabelMasksInstanceBits) {
  TempDir dir("lbl");
  const std::uint32_t words[2] = {0x00010009u, 0xFFFF0002u};
  write_bytes(dir.path / "x.label", words, sizeof words);
  EXPECT_EQ(read_labels(dir.path / "x.label"), (std::vector<std::int32_t>{9, 2}));
}

TEST(KittiFormat, RoundTripIsBitIdentical) {
  TempDir dir("rt");
  const Scene s = generate_scene(SceneGenConfig{}, 3);
  write_points_bin(dir.path / "s.bin", s);
  write_labels(dir.path / "s.label", s.labels);
  EXPECT_EQ(fs::file_size(dir.path / "s.bin"), 16 * s.size());
  const Scene back = read_scene(dir.path / "s.bin", dir.path / "s.label");
  ASSERT_EQ(back.size(), s.size());
  EXPECT_EQ(back.labels, s.labels);
  EXPECT_EQ(back.intensity, s.intensity);
  EXPECT_EQ(back.positions, s.positions);
  // written again from what was read, the bytes do not change
  write_points_bin(dir.path / "t.bin", back);
  EXPECT_EQ(read_bytes(dir.path / "t.bin"), read_bytes(dir.path / "s.bin"));
}

TEST(KittiFormat, MalformedFiles) {
  TempDir dir("bad");
  const char junk[18] = {};
  write_bytes(dir.path / "odd.bin", junk, sizeof junk);
  EXPECT_THROW(read_points_bin(dir.path / "odd.bin"), DataError);
  write_bytes(dir.path / "odd.label", junk, 6);
  EXPECT_THROW(read_labels(dir.path / "odd.label"), DataError);
  EXPECT_THROW(read_points_bin(dir.path / "missing.bin"), DataError);

  const float two[8] = {0, 0, 0, 0, 1, 1, 1, 1};
  const std::uint32_t three[3] = {0, 1, 2};
  write_bytes(dir.path / "a.bin", two, sizeof two);
  write_bytes(dir.path / "a.label", three, sizeof three);
  try {
    read_scene(dir.path / "a.bin", dir.path / "a.label");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find((dir.path / "a.bin").string()), std::string::npos) << msg;
    EXPECT_NE(msg.find((dir.path / "a.label").string()), std::string::npos) << msg;
  }
}

TEST(Dataset, SplitIsDisjointAndReloads) {
  TempDir dir("ds");
  SceneGenConfig cfg;
  cfg.extent = 6.4;
  const Dataset ds = generate_dataset(cfg, dir.path, 10, 0.3);
  EXPECT_EQ(ds.split.train.size(), 7u);
  EXPECT_EQ(ds.split.val.size(), 3u);
  std::set<std::string> train(ds.split.train.begin(), ds.split.train.end());
  for (const auto& id : ds.split.val) EXPECT_EQ(train.count(id), 0u) << id;

  const Dataset again = open_dataset(dir.path);
  EXPECT_EQ(again.split.train, ds.split.train);
  EXPECT_EQ(again.split.val, ds.split.val);
  const Scene s = load_scene(again, ds.split.val[0]);
  const Scene direct = generate_scene(cfg, 7);
  EXPECT_EQ(s.labels, direct.labels);
  EXPECT_EQ(s.size(), direct.size());

  const auto prepared = load_prepared(again, {ds.split.train[0]}, 0.2);
  ASSERT_EQ(prepared.size(), 1u);
  EXPECT_EQ(prepared[0].features.rows, prepared[0].labels.size());
  EXPECT_EQ(prepared[0].pipeline.point_count, prepared[0].labels.size());
}

TEST(Dataset, OverlappingOrMissingSplitIsRejected) {
  TempDir dir("ov");
  SceneGenConfig cfg;
  cfg.extent = 6.4;
  generate_dataset(cfg, dir.path, 4, 0.5);
  std::ofstream(dir.path / "split.json", std::ios::trunc) << R"({"train":["000000","000001"],"val":["000001"]})";
  EXPECT_THROW(open_dataset(dir.path), DataError);
  fs::remove(dir.path / "split.json");
  EXPECT_THROW(open_dataset(dir.path), DataError);
  EXPECT_THROW(generate_dataset(cfg, dir.path / "x", 4, 1.0), ConfigError);
}
