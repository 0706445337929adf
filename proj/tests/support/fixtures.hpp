#pragma once

#include <vector>

#include "spvnas/arch_spec.hpp"
#include "spvnas/backbone.hpp"
#include "spvnas/dataset.hpp"
#include "spvnas/rng.hpp"
#include "spvnas/scene.hpp"

namespace fixtures {

// Widths drawn from {8, ..., max_width} in steps of 8, depths from [1, m].
inline spvnas::ArchSpec random_arch(spvnas::Rng& rng, int m, int max_width = 32) {
  const int choices = max_width / 8;
  auto width = [&] { return 8 * (1 + static_cast<int>(rng.index(static_cast<std::size_t>(choices)))); };
  spvnas::ArchSpec a;
  a.stem_channels = width();
  for (int s = 0; s < spvnas::kStages; ++s) {
    a.stage_channels[s].resize(static_cast<std::size_t>(m) + 1);
    for (auto& w : a.stage_channels[s]) w = width();
    a.stage_depths[s] = rng.uniform_int(1, m);
  }
  return a;
}

inline spvnas::ArchSpec small_arch(int width = 8, int m = 1, int depth = 1) {
  std::array<int, spvnas::kStages> w;
  w.fill(width);
  return spvnas::uniform_arch(width, w, m, depth);
}

// A generated scene with every geometry structure the backbone needs.
inline spvnas::PreparedScene toy_scene(std::uint64_t seed, double voxel_size = 0.2) {
  const spvnas::SceneGenConfig cfg;
  return spvnas::prepare_scene(spvnas::generate_scene(cfg, seed), voxel_size);
}

inline spvnas::PreparedScene prepared_from(const std::vector<spvnas::Position>& pos, const spvnas::FeatureMatrix& f,
                                           double voxel_size = 0.2) {
  spvnas::PreparedScene s;
  s.pipeline = spvnas::build_coordinate_pipeline(pos, {}, voxel_size, spvnas::kBackboneTrilinearLevels);
  s.features = f;
  s.labels.assign(pos.size(), 0);
  return s;
}

}  // namespace fixtures
