#include <benchmark/benchmark.h>

#include <vector>

#include "spvnas/backbone.hpp"
#include "spvnas/coords.hpp"
#include "spvnas/dataset.hpp"
#include "spvnas/rng.hpp"
#include "spvnas/scene.hpp"
#include "spvnas/sparse_conv.hpp"

using namespace spvnas;

namespace {

// Uniform cloud in a cube of `side` meters; voxel size 1 keeps ~side^3 sites.
PointTensor cloud(std::size_t n, double side, std::uint64_t seed = 1) {
  Rng rng(seed);
  PointTensor p;
  p.positions.resize(n);
  for (auto& x : p.positions) {
    x = {float(rng.uniform(0, side)), float(rng.uniform(0, side)), float(rng.uniform(0, side))};
  }
  p.features = FeatureMatrix(n, 4, 1.0f);
  return p;
}

const PreparedScene& scene() {
  static const PreparedScene s = prepare_scene(generate_scene(SceneGenConfig{}, 0), 0.2);
  return s;
}

}  // namespace

static void BM_HashBuild(benchmark::State& st) {
  const auto p = cloud(static_cast<std::size_t>(st.range(0)), 20.0);
  const auto coords = voxelize_coords(p, 1.0).first;
  for (auto _ : st) benchmark::DoNotOptimize(CoordHashMap::build(coords));
  st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(coords.size()));
}
BENCHMARK(BM_HashBuild)->Arg(1 << 14)->Arg(1 << 17);

static void BM_Voxelize(benchmark::State& st) {
  const auto p = cloud(static_cast<std::size_t>(st.range(0)), 20.0);
  for (auto _ : st) {
    auto [coords, vmap] = voxelize_coords(p, 1.0);
    benchmark::DoNotOptimize(voxelize_features(p.features, vmap));
  }
  st.SetItemsProcessed(st.iterations() * st.range(0));
}
BENCHMARK(BM_Voxelize)->RangeMultiplier(4)->Range(1 << 12, 1 << 18);

static void BM_KernelMapStride1(benchmark::State& st) {
  const auto& c = scene().pipeline.coords[0];
  const auto h = CoordHashMap::build(c);
  for (auto _ : st) benchmark::DoNotOptimize(build_kernel_map_stride1(c, h, 1));
  st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(c.size()));
}
BENCHMARK(BM_KernelMapStride1);

static void BM_CoordinatePipeline(benchmark::State& st) {
  const Scene raw = generate_scene(SceneGenConfig{}, 0);
  for (auto _ : st) benchmark::DoNotOptimize(prepare_scene(raw, 0.2));
}
BENCHMARK(BM_CoordinatePipeline)->Unit(benchmark::kMillisecond);

static void BM_SparseConv(benchmark::State& st) {
  const auto& s = scene();
  const auto& km = s.pipeline.submanifold[0];
  const auto c = static_cast<std::size_t>(st.range(0));
  Rng rng(2);
  SparseConvLayer l(c, c);
  l.init(rng);
  FeatureMatrix x(km.in_count, c, 0.5f);
  for (auto _ : st) benchmark::DoNotOptimize(sparse_conv_forward(l, x, km));
  st.counters["MACs"] = benchmark::Counter(double(km.total_entries()) * double(c * c), benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_SparseConv)->Arg(8)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

static void BM_NetworkForward(benchmark::State& st) {
  const auto& s = scene();
  std::array<int, kStages> w;
  w.fill(16);
  const ArchSpec a = uniform_arch(16, w, 2, 2);
  Network net(a, st.range(0) ? Family::kSpvcnn : Family::kVoxelOnly);
  net.init(3);
  net.set_mode(nn::BnMode::kInference);
  for (auto _ : st) benchmark::DoNotOptimize(net.forward(s.pipeline, s.features));
  st.SetLabel(st.range(0) ? "spvcnn" : "voxel_only");
}
BENCHMARK(BM_NetworkForward)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
