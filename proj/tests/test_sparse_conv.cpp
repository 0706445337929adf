#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <set>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "spvnas/errors.hpp"
#include "spvnas/sparse_conv.hpp"

using namespace spvnas;

namespace {

std::vector<Coord> cube(int n, int step = 1) {
  std::vector<Coord> cs;
  for (int x = 0; x < n; ++x)
    for (int y = 0; y < n; ++y)
      for (int z = 0; z < n; ++z) cs.push_back({0, x * step, y * step, z * step});
  return cs;
}

std::vector<Coord> random_sparse(Rng& rng, std::size_t n, int range, int step = 1) {
  std::set<Coord> seen;
  std::vector<Coord> out;
  while (out.size() < n) {
    Coord c{0, rng.uniform_int(-range, range) * step, rng.uniform_int(-range, range) * step,
            rng.uniform_int(-range, range) * step};
    if (seen.insert(c).second) out.push_back(c);
  }
  return out;
}

void randomize(Rng& rng, SparseConvLayer& l) {
  for (auto& w : l.weight) w = static_cast<float>(rng.uniform(-1, 1));
}

std::set<std::pair<std::int32_t, std::int32_t>> pair_set(const KernelMap& m, int k) {
  std::set<std::pair<std::int32_t, std::int32_t>> out;
  for (std::size_t p = 0; p < m.pairs(k); ++p) out.emplace(m.in_rows[k][p], m.out_rows[k][p]);
  return out;
}

KernelMap submanifold(const std::vector<Coord>& cs, std::int32_t ts = 1) {
  return build_kernel_map_stride1(cs, CoordHashMap::build(cs), ts);
}

oracle::DenseGrid to_dense(const std::vector<Coord>& cs, const FeatureMatrix& f, int n, int step = 1) {
  oracle::DenseGrid g;
  g.n = n;
  g.c = static_cast<int>(f.cols);
  g.v.assign(static_cast<std::size_t>(n) * n * n * f.cols, 0.0);
  for (std::size_t r = 0; r < cs.size(); ++r)
    for (std::size_t j = 0; j < f.cols; ++j) g.at(cs[r].x / step, cs[r].y / step, cs[r].z / step, int(j)) = f(r, j);
  return g;
}

}  // namespace

TEST(KernelOffsets, LexicographicWithCenter13) {
  const auto& off = kernel_offsets();
  EXPECT_EQ(off[0], (std::array<std::int32_t, 3>{-1, -1, -1}));
  EXPECT_EQ(off[1], (std::array<std::int32_t, 3>{-1, -1, 0}));
  EXPECT_EQ(off[kCenterOffset], (std::array<std::int32_t, 3>{0, 0, 0}));
  EXPECT_EQ(off[26], (std::array<std::int32_t, 3>{1, 1, 1}));
  EXPECT_TRUE(std::is_sorted(off.begin(), off.end()));
}

TEST(KernelMapStride1, HandCases) {
  const auto one = submanifold({{0, 0, 0, 0}});
  EXPECT_EQ(one.total_entries(), 1);
  EXPECT_EQ(one.pairs(kCenterOffset), 1u);

  const auto two = submanifold({{0, 0, 0, 0}, {0, 1, 0, 0}});
  EXPECT_EQ(two.total_entries(), 4);
  EXPECT_EQ(two.pairs(kCenterOffset), 2u);
  EXPECT_EQ(two.pairs(4), 1u);   // (-1, 0, 0)
  EXPECT_EQ(two.pairs(22), 1u);  // (1, 0, 0)
}

TEST(KernelMapStride1, DenseBlockNeighborCounts) {
  const auto cs = cube(4);
  const auto km = submanifold(cs);
  const auto& off = kernel_offsets();
  for (int k = 0; k < kKernelVolume; ++k) {
    std::size_t expect = 0;
    for (int x = 0; x < 4; ++x)
      for (int y = 0; y < 4; ++y)
        for (int z = 0; z < 4; ++z) {
          const int a = x + off[k][0], b = y + off[k][1], c = z + off[k][2];
          expect += a >= 0 && a < 4 && b >= 0 && b < 4 && c >= 0 && c < 4;
        }
    EXPECT_EQ(km.pairs(k), expect) << "offset " << k;
  }
  EXPECT_EQ(km.probes, 27u * cs.size());
}

TEST(KernelMapStride1, IndexHygieneUnderFuzzing) {
  for (int trial = 0; trial < 20; ++trial) {
    Rng rng(50 + trial);
    const std::int32_t ts = 1 << (trial % 3);
    const auto cs = random_sparse(rng, 1 + rng.index(300), 5, ts);
    const auto km = submanifold(cs, ts);
    EXPECT_LE(km.total_entries(), 27 * static_cast<std::int64_t>(cs.size()));
    for (int k = 0; k < kKernelVolume; ++k) {
      std::set<std::int32_t> outs;
      for (std::size_t p = 0; p < km.pairs(k); ++p) {
        const auto i = km.in_rows[k][p], o = km.out_rows[k][p];
        ASSERT_GE(i, 0);
        ASSERT_LT(static_cast<std::size_t>(i), cs.size());
        ASSERT_GE(o, 0);
        ASSERT_LT(static_cast<std::size_t>(o), cs.size());
        EXPECT_TRUE(outs.insert(o).second);
        const auto& d = kernel_offsets()[k];
        EXPECT_EQ(cs[i], offset(cs[o], d[0] * ts, d[1] * ts, d[2] * ts));
      }
    }
  }
}

TEST(Downsample, HandAndOracle) {
  const std::vector<Coord> cs{{0, 0, 0, 0}, {0, 1, 1, 1}, {0, 2, 0, 0}};
  EXPECT_EQ(downsample_coords(cs, 1), (std::vector<Coord>{{0, 0, 0, 0}, {0, 2, 0, 0}}));
  const std::vector<Coord> coarse{{0, 0, 0, 0}, {0, 4, -4, 8}};
  auto twice = downsample_coords(coarse, 2);
  EXPECT_EQ(std::set<Coord>(twice.begin(), twice.end()), std::set<Coord>(coarse.begin(), coarse.end()));

  Rng rng(60);
  const auto r = random_sparse(rng, 500, 9);
  const auto got = downsample_coords(r, 1);
  std::set<Coord> expect;
  for (const auto& c : r) expect.insert(snap_to_stride(c, 2));
  EXPECT_EQ(std::set<Coord>(got.begin(), got.end()), expect);
  EXPECT_EQ(got.size(), expect.size());
}

TEST(KernelMapStrided, HandCaseAndTranspose) {
  const std::vector<Coord> in{{0, 0, 0, 0}, {0, 1, 1, 1}};
  const std::vector<Coord> out{{0, 0, 0, 0}};
  const auto down = build_kernel_map_strided(in, out, 1, false);
  EXPECT_EQ(down.total_entries(), 2);
  EXPECT_EQ(down.pairs(kCenterOffset), 1u);
  EXPECT_EQ(down.pairs(26), 1u);

  const auto up = build_kernel_map_strided(out, in, 1, true);
  for (int k = 0; k < kKernelVolume; ++k) {
    EXPECT_EQ(up.in_rows[k], down.out_rows[k]);
    EXPECT_EQ(up.out_rows[k], down.in_rows[k]);
  }
  EXPECT_THROW(build_kernel_map_strided(in, std::vector<Coord>{{0, 1, 0, 0}}, 1, false), ConfigError);
}

TEST(KernelMapStrided, TransposeReachesOriginalSet) {
  for (int trial = 0; trial < 10; ++trial) {
    Rng rng(70 + trial);
    const auto fine = random_sparse(rng, 400, 10, 2);
    const auto coarse = downsample_coords(fine, 2);
    const auto down = build_kernel_map_strided(fine, coarse, 2, false);
    const auto up = build_kernel_map_strided(coarse, fine, 2, true);
    const auto tr = transpose_kernel_map(down, fine);
    std::set<std::int32_t> reached;
    for (int k = 0; k < kKernelVolume; ++k) {
      EXPECT_EQ(pair_set(up, k), pair_set(tr, k));
      reached.insert(up.out_rows[k].begin(), up.out_rows[k].end());
    }
    EXPECT_EQ(reached.size(), fine.size());
    EXPECT_EQ(tr.out_coords, fine);
  }
}

TEST(SparseConv, SingleVoxelAndIdentity) {
  Rng rng(80);
  SparseConvLayer l(3, 2);
  randomize(rng, l);
  const std::vector<Coord> one{{0, 5, 5, 5}};
  const auto x = oracle::random_matrix(rng, 1, 3);
  const auto y = sparse_conv_forward(l, x, submanifold(one));
  for (std::size_t o = 0; o < 2; ++o) {
    double s = 0;
    for (std::size_t i = 0; i < 3; ++i) s += double(l.at(kCenterOffset, i, o)) * x(0, i);
    EXPECT_NEAR(y(0, o), s, 1e-6);
  }
  l.zero_grad();
  const auto go = oracle::random_matrix(rng, 1, 2);
  const auto gi = sparse_conv_backward(l, x, go, submanifold(one));
  for (std::size_t i = 0; i < 3; ++i) {
    double s = 0;
    for (std::size_t o = 0; o < 2; ++o) s += double(l.at(kCenterOffset, i, o)) * go(0, o);
    EXPECT_NEAR(gi(0, i), s, 1e-6);
  }

  SparseConvLayer id(4, 4);
  for (std::size_t i = 0; i < 4; ++i) id.at(kCenterOffset, i, i) = 1.0f;
  const auto cs = random_sparse(rng, 100, 4);
  const auto f = oracle::random_matrix(rng, cs.size(), 4);
  EXPECT_EQ(sparse_conv_forward(id, f, submanifold(cs)), f);

  const auto gz = sparse_conv_backward(l, x, FeatureMatrix(1, 2), submanifold(one));
  for (float v : gz.data) EXPECT_EQ(v, 0.0f);
}

TEST(SparseConv, ChannelMismatch) {
  SparseConvLayer l(3, 2);
  const std::vector<Coord> one{{0, 0, 0, 0}};
  EXPECT_THROW(sparse_conv_forward(l, FeatureMatrix(1, 4), submanifold(one)), ShapeError);
}

TEST(SparseConv, DenseEquivalenceStride1) {
  const auto cs = cube(8);
  const auto km = submanifold(cs);
  for (int draw = 0; draw < 10; ++draw) {
    Rng rng(90 + draw);
    SparseConvLayer l(3, 4);
    randomize(rng, l);
    const auto f = oracle::random_matrix(rng, cs.size(), 3);
    const auto y = sparse_conv_forward(l, f, km);
    const auto ref = oracle::dense_conv(to_dense(cs, f, 8), l.weight, 4, 1);
    for (std::size_t r = 0; r < cs.size(); ++r)
      for (int o = 0; o < 4; ++o) ASSERT_NEAR(y(r, o), ref.at(cs[r].x, cs[r].y, cs[r].z, o), 1e-5);
  }
}

TEST(SparseConv, DenseEquivalenceStride2) {
  const auto cs = cube(8);
  const auto out = downsample_coords(cs, 1);
  ASSERT_EQ(out.size(), 64u);
  const auto km = build_kernel_map_strided(cs, out, 1, false);
  for (int draw = 0; draw < 10; ++draw) {
    Rng rng(100 + draw);
    SparseConvLayer l(3, 4, 2);
    randomize(rng, l);
    const auto f = oracle::random_matrix(rng, cs.size(), 3);
    const auto y = sparse_conv_forward(l, f, km);
    const auto ref = oracle::dense_conv(to_dense(cs, f, 8), l.weight, 4, 2);
    for (std::size_t r = 0; r < out.size(); ++r)
      for (int o = 0; o < 4; ++o) ASSERT_NEAR(y(r, o), ref.at(out[r].x / 2, out[r].y / 2, out[r].z / 2, o), 1e-5);
  }
}

TEST(SparseConv, LeadingSliceMatchesSmallLayer) {
  Rng rng(110);
  SparseConvLayer big(8, 8), small(5, 3);
  randomize(rng, big);
  for (int k = 0; k < 27; ++k)
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t o = 0; o < 3; ++o) small.at(k, i, o) = big.at(k, i, o);
  const auto cs = random_sparse(rng, 200, 4);
  const auto km = submanifold(cs);
  const auto f = oracle::random_matrix(rng, cs.size(), 5);
  EXPECT_EQ(sparse_conv_forward(big, f, km, 3), sparse_conv_forward(small, f, km));
}

TEST(SparseConv, FiniteDifferences) {
  for (int trial = 0; trial < 5; ++trial) {
    Rng rng(120 + trial);
    const auto cs = random_sparse(rng, 40, 2);
    const bool strided = trial % 2 == 1;
    const auto out = strided ? downsample_coords(cs, 1) : cs;
    const auto km = strided ? build_kernel_map_strided(cs, out, 1, false) : submanifold(cs);
    SparseConvLayer l(3, 2, strided ? 2 : 1);
    randomize(rng, l);
    auto f = oracle::random_matrix(rng, cs.size(), 3);
    const auto w = oracle::random_matrix(rng, out.size(), 2);
    l.zero_grad();
    const auto gi = sparse_conv_backward(l, f, w, km);
    auto loss = [&] { return oracle::weighted_sum(sparse_conv_forward(l, f, km), w); };
    EXPECT_LT(oracle::relative_error(oracle::to_double(gi.data), oracle::numeric_grad(f.data, loss, 1e-3)), 1e-3);
    EXPECT_LT(oracle::relative_error(oracle::to_double(l.grad), oracle::numeric_grad(l.weight, loss, 1e-3)), 1e-3);
  }
}

TEST(SparseConv, TransposedIsAdjointOfDownsample) {
  Rng rng(130);
  const auto fine = random_sparse(rng, 300, 6);
  const auto coarse = downsample_coords(fine, 1);
  const auto down = build_kernel_map_strided(fine, coarse, 1, false);
  const auto up = build_kernel_map_strided(coarse, fine, 1, true);
  SparseConvLayer a(3, 5, 2), b(5, 3, 2, true);
  randomize(rng, a);
  for (int k = 0; k < 27; ++k)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t o = 0; o < 5; ++o) b.at(k, o, i) = a.at(k, i, o);
  const auto u = oracle::random_matrix(rng, fine.size(), 3);
  const auto w = oracle::random_matrix(rng, coarse.size(), 5);
  EXPECT_NEAR(dot(sparse_conv_forward(a, u, down), w), dot(u, sparse_conv_forward(b, w, up)), 1e-4);
}

TEST(ResidualBlock, ZeroWeightsGiveReluOfSkip) {
  Rng rng(140);
  const auto cs = random_sparse(rng, 50, 3);
  const auto km = submanifold(cs);
  ResidualBlock same(4, 4, false);
  const auto x = oracle::random_matrix(rng, cs.size(), 4);
  EXPECT_EQ(same.forward(km, x, 4), nn::relu_forward(x));

  ResidualBlock proj(4, 6, true);
  for (auto& w : proj.proj.weight) w = static_cast<float>(rng.uniform(-1, 1));
  const auto y = proj.forward(km, x, 6);
  nn::BatchNormLayer bn(6);
  const auto expect = nn::relu_forward(nn::batchnorm_forward(bn, nn::linear_forward(proj.proj, x)));
  for (std::size_t i = 0; i < y.data.size(); ++i) EXPECT_NEAR(y.data[i], expect.data[i], 1e-6);
}

TEST(ResidualBlock, PreservesCoordinates) {
  Rng rng(141);
  ResidualBlock blk(3, 3, false);
  blk.init(rng);
  SparseTensor s;
  s.coords = random_sparse(rng, 80, 3);
  s.features = oracle::random_matrix(rng, 80, 3);
  const auto out = residual_block_forward(blk, s);
  EXPECT_EQ(out.coords, s.coords);
  EXPECT_EQ(out.features.rows, 80u);
}

TEST(ResidualBlock, HandComposableTwoVoxels) {
  // Two far-apart voxels: only center weights act, BN sees a two-row batch.
  const std::vector<Coord> cs{{0, 0, 0, 0}, {0, 9, 9, 9}};
  const auto km = submanifold(cs);
  ResidualBlock blk(1, 1, false);
  blk.conv1.at(kCenterOffset, 0, 0) = 2.0f;
  blk.conv2.at(kCenterOffset, 0, 0) = 3.0f;
  const FeatureMatrix x(2, 1, {1, 3});
  const auto y = blk.forward(km, x, 1);
  // conv1 -> {2, 6} -> BN -> {-k, k} -> ReLU -> {0, k} -> conv2 -> {0, 3k} -> BN -> {-k', k'}
  const double k = 1.0 / std::sqrt(1.0 + 1e-5 / 4.0);
  const double k2 = 1.0 / std::sqrt(1.0 + 1e-5 / (2.25 * k * k));
  EXPECT_NEAR(y(0, 0), std::max(0.0, 1.0 - k2), 1e-5);
  EXPECT_NEAR(y(1, 0), 3.0 + k2, 1e-5);
}

TEST(ResidualBlock, FiniteDifferences) {
  for (int trial = 0; trial < 5; ++trial) {
    Rng rng(150 + trial);
    const auto cs = random_sparse(rng, 30, 2);
    const auto km = submanifold(cs);
    const std::size_t in = 3, out = trial % 2 ? 4 : 3;
    ResidualBlock blk(in, out, in != out);
    blk.init(rng);
    for (auto& w : blk.proj.weight) w = static_cast<float>(rng.uniform(-1, 1));
    auto x = oracle::random_matrix(rng, cs.size(), in);
    const auto w = oracle::random_matrix(rng, cs.size(), out);
    blk.forward(km, x, out);
    blk.zero_grad();
    const auto gx = blk.backward(km, w);
    auto loss = [&] { return oracle::weighted_sum(blk.forward(km, x, out), w); };
    auto pattern = [&] {
      gradcheck::Pattern p;
      gradcheck::residual_pattern(blk, km, x, out, p);
      return p;
    };
    for (auto* t : {&x.data, &blk.conv1.weight, &blk.conv2.weight, &blk.bn1.gamma, &blk.bn2.beta}) {
      std::vector<float> analytic;
      if (t == &x.data) analytic = gx.data;
      if (t == &blk.conv1.weight) analytic = blk.conv1.grad;
      if (t == &blk.conv2.weight) analytic = blk.conv2.grad;
      if (t == &blk.bn1.gamma) analytic = blk.bn1.grad_gamma;
      if (t == &blk.bn2.beta) analytic = blk.bn2.grad_beta;
      const auto r = gradcheck::check(*t, analytic, loss, pattern);
      EXPECT_LT(r.error, 1e-3);
      EXPECT_LT(r.skipped * 4, r.checked + r.skipped) << trial << " " << r.skipped << "/" << r.checked << " err " << r.error;
    }
  }
}

TEST(KernelMapStats, MeansAndDeterminism) {
  Rng rng(160);
  std::vector<Position> a{{0.05f, 0.05f, 0.05f}};
  const auto pa = build_coordinate_pipeline(a, {}, 0.2);
  EXPECT_EQ(kernel_map_stats(pa).submanifold[0], 1.0);

  auto b = oracle::random_positions(rng, 500, 0, 3);
  auto c = oracle::random_positions(rng, 800, 0, 3);
  const auto pb = build_coordinate_pipeline(b, {}, 0.2);
  const auto pc = build_coordinate_pipeline(c, {}, 0.2);
  const std::vector<const CoordinatePipeline*> scenes{&pb, &pc};
  const auto st = estimate_kernel_map_sizes(scenes);
  EXPECT_EQ(st.scenes, 2u);
  for (int l = 0; l < kLevels; ++l) {
    EXPECT_DOUBLE_EQ(st.submanifold[l],
                     (pb.submanifold[l].total_entries() + pc.submanifold[l].total_entries()) / 2.0);
  }
  for (int l = 0; l < kLevels - 1; ++l) {
    EXPECT_DOUBLE_EQ(st.down[l], (pb.down[l].total_entries() + pc.down[l].total_entries()) / 2.0);
    EXPECT_EQ(pb.down[l].total_entries(), pb.up[l].total_entries());
  }
  EXPECT_EQ(st, estimate_kernel_map_sizes(scenes));
  EXPECT_THROW(estimate_kernel_map_sizes({}), ConfigError);
}

TEST(CoordinatePipeline, DecoderReachesEncoderCoords) {
  Rng rng(170);
  const auto pos = oracle::random_positions(rng, 3000, -4, 4);
  const auto p = build_coordinate_pipeline(pos, {}, 0.2);
  for (int l = 0; l + 1 < kLevels; ++l) {
    EXPECT_EQ(p.up[l].out_coords, p.coords[l]);
    EXPECT_EQ(p.down[l].out_coords, p.coords[l + 1]);
    for (const auto& c : p.coords[l + 1]) {
      EXPECT_EQ(c.x % CoordinatePipeline::stride_of(l + 1), 0);
    }
  }
}
