#include "spvnas/sparse_conv.hpp"

#include <algorithm>
#include <cmath>

#include "spvnas/errors.hpp"

namespace spvnas {

const std::array<std::array<std::int32_t, 3>, kKernelVolume>& kernel_offsets() {
  static const auto offsets = [] {
    std::array<std::array<std::int32_t, 3>, kKernelVolume> o{};
    int k = 0;
    for (int dx = -1; dx <= 1; ++dx)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dz = -1; dz <= 1; ++dz) o[k++] = {dx, dy, dz};
    return o;
  }();
  return offsets;
}

std::int64_t KernelMap::total_entries() const {
  std::int64_t n = 0;
  for (const auto& v : in_rows) n += static_cast<std::int64_t>(v.size());
  return n;
}

KernelMap build_kernel_map_stride1(std::span<const Coord> coords, const CoordHashMap& hash,
                                   std::int32_t tensor_stride) {
  KernelMap map;
  map.in_count = coords.size();
  map.out_count = coords.size();
  map.out_coords.assign(coords.begin(), coords.end());
  const auto& offs = kernel_offsets();
  for (int k = 0; k < kKernelVolume; ++k) {
    const std::int32_t dx = offs[k][0] * tensor_stride;
    const std::int32_t dy = offs[k][1] * tensor_stride;
    const std::int32_t dz = offs[k][2] * tensor_stride;
    auto& ins = map.in_rows[k];
    auto& outs = map.out_rows[k];
    for (std::size_t o = 0; o < coords.size(); ++o) {
      const std::int32_t i = hash.query(offset(coords[o], dx, dy, dz));
      if (i != kNotFound) {
        ins.push_back(i);
        outs.push_back(static_cast<std::int32_t>(o));
      }
    }
    map.probes += coords.size();
  }
  return map;
}

std::vector<Coord> downsample_coords(std::span<const Coord> coords, std::int32_t tensor_stride) {
  std::vector<Coord> snapped(coords.size());
  for (std::size_t i = 0; i < coords.size(); ++i) snapped[i] = snap_to_stride(coords[i], 2 * tensor_stride);
  return unique_coords(snapped).first;
}

namespace {

bool on_lattice(std::span<const Coord> coords, std::int32_t stride) {
  return std::all_of(coords.begin(), coords.end(), [stride](const Coord& c) {
    return c.x % stride == 0 && c.y % stride == 0 && c.z % stride == 0;
  });
}

}  // namespace

KernelMap build_kernel_map_strided(std::span<const Coord> in_coords,
                                   std::span<const Coord> out_coords, std::int32_t tensor_stride,
                                   bool transposed) {
  const std::int32_t coarse = 2 * tensor_stride;
  if (!transposed && !on_lattice(out_coords, coarse)) {
    throw ConfigError("strided kernel map: output coordinates are not on the stride-" +
                      std::to_string(coarse) + " lattice");
  }
  if (transposed && (!on_lattice(in_coords, coarse) || !on_lattice(out_coords, tensor_stride))) {
    throw ConfigError("transposed kernel map: inputs must lie on the stride-" +
                      std::to_string(coarse) + " lattice and outputs on the stride-" +
                      std::to_string(tensor_stride) + " lattice");
  }
  const CoordHashMap in_hash = CoordHashMap::build(in_coords);
  KernelMap map;
  map.in_count = in_coords.size();
  map.out_count = out_coords.size();
  map.out_coords.assign(out_coords.begin(), out_coords.end());
  const auto& offs = kernel_offsets();
  const std::int32_t sign = transposed ? -1 : 1;
  for (int k = 0; k < kKernelVolume; ++k) {
    const std::int32_t dx = sign * offs[k][0] * tensor_stride;
    const std::int32_t dy = sign * offs[k][1] * tensor_stride;
    const std::int32_t dz = sign * offs[k][2] * tensor_stride;
    for (std::size_t o = 0; o < out_coords.size(); ++o) {
      const std::int32_t i = in_hash.query(offset(out_coords[o], dx, dy, dz));
      if (i != kNotFound) {
        map.in_rows[k].push_back(i);
        map.out_rows[k].push_back(static_cast<std::int32_t>(o));
      }
    }
    map.probes += out_coords.size();
  }
  return map;
}

KernelMap transpose_kernel_map(const KernelMap& map, std::span<const Coord> in_coords) {
  if (in_coords.size() != map.in_count) throw ShapeError("transpose: coordinate count mismatch");
  KernelMap t;
  t.in_count = map.out_count;
  t.out_count = map.in_count;
  t.out_coords.assign(in_coords.begin(), in_coords.end());
  for (int k = 0; k < kKernelVolume; ++k) {
    t.in_rows[k] = map.out_rows[k];
    t.out_rows[k] = map.in_rows[k];
  }
  return t;
}

SparseConvLayer::SparseConvLayer(std::size_t in, std::size_t out, int stride_, bool transposed_)
    : in_channels(in),
      out_channels(out),
      stride(stride_),
      transposed(transposed_),
      weight(kKernelVolume * in * out, 0.0f),
      grad(kKernelVolume * in * out, 0.0f) {
  if (stride != 1 && stride != 2) throw ConfigError("sparse conv: stride must be 1 or 2");
  if (stride == 1 && transposed) throw ConfigError("sparse conv: transposed layers have stride 2");
}

void SparseConvLayer::init(Rng& rng) {
  const double bound =
      std::sqrt(1.0 / static_cast<double>(std::max<std::size_t>(in_channels, 1) * kKernelVolume));
  for (auto& w : weight) w = static_cast<float>(rng.uniform(-bound, bound));
}

void SparseConvLayer::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0f); }

void SparseConvLayer::collect(const std::string& prefix, TensorList& out) {
  out.push_back({prefix + ".weight", {kKernelVolume, in_channels, out_channels}, weight.data(),
                 grad.data()});
}

FeatureMatrix sparse_conv_forward(const SparseConvLayer& layer, const FeatureMatrix& in,
                                  const KernelMap& kmap, std::size_t out_active,
                                  std::uint64_t* macs) {
  if (in.cols > layer.in_channels || out_active > layer.out_channels) {
    throw ShapeError("sparse conv: input has " + std::to_string(in.cols) + " channels, output " +
                     std::to_string(out_active) + "; layer is " + std::to_string(layer.in_channels) +
                     "->" + std::to_string(layer.out_channels));
  }
  if (in.rows != kmap.in_count) {
    throw ShapeError("sparse conv: " + std::to_string(in.rows) + " input rows but kernel map expects " +
                     std::to_string(kmap.in_count));
  }
  const std::size_t cin = in.cols;
  const std::size_t ld = layer.out_channels;
  FeatureMatrix out(kmap.out_count, out_active);
  std::uint64_t pairs = 0;
  for (int k = 0; k < kKernelVolume; ++k) {
    const auto& ins = kmap.in_rows[k];
    const auto& outs = kmap.out_rows[k];
    const float* w = layer.kernel(k);
    for (std::size_t p = 0; p < ins.size(); ++p) {
      const float* x = in.row(static_cast<std::size_t>(ins[p]));
      float* y = out.row(static_cast<std::size_t>(outs[p]));
      for (std::size_t a = 0; a < cin; ++a) {
        const float xa = x[a];
        if (xa == 0.0f) continue;
        const float* wa = w + a * ld;
        for (std::size_t c = 0; c < out_active; ++c) y[c] += wa[c] * xa;
      }
    }
    pairs += ins.size();
  }
  if (macs) *macs += pairs * cin * out_active;
  return out;
}

FeatureMatrix sparse_conv_forward(const SparseConvLayer& layer, const FeatureMatrix& in,
                                  const KernelMap& kmap) {
  if (in.cols != layer.in_channels) {
    throw ShapeError("sparse conv: input has " + std::to_string(in.cols) +
                     " channels but layer expects " + std::to_string(layer.in_channels));
  }
  return sparse_conv_forward(layer, in, kmap, layer.out_channels);
}

FeatureMatrix sparse_conv_backward(SparseConvLayer& layer, const FeatureMatrix& in,
                                   const FeatureMatrix& grad_out, const KernelMap& kmap) {
  if (in.rows != kmap.in_count || grad_out.rows != kmap.out_count ||
      in.cols > layer.in_channels || grad_out.cols > layer.out_channels) {
    throw ShapeError("sparse conv backward: shape mismatch");
  }
  const std::size_t cin = in.cols;
  const std::size_t cout = grad_out.cols;
  const std::size_t ld = layer.out_channels;
  FeatureMatrix grad_in(in.rows, cin);
  std::vector<float> wt(cin * cout);
  for (int k = 0; k < kKernelVolume; ++k) {
    const auto& ins = kmap.in_rows[k];
    const auto& outs = kmap.out_rows[k];
    if (ins.empty()) continue;
    const float* w = layer.kernel(k);
    float* gw = layer.grad.data() + static_cast<std::size_t>(k) * layer.in_channels * ld;
    // Active block of W_k transposed to [out][in] so both loops below run
    // over contiguous memory.
    for (std::size_t a = 0; a < cin; ++a)
      for (std::size_t c = 0; c < cout; ++c) wt[c * cin + a] = w[a * ld + c];
    for (std::size_t p = 0; p < ins.size(); ++p) {
      const float* x = in.row(static_cast<std::size_t>(ins[p]));
      const float* g = grad_out.row(static_cast<std::size_t>(outs[p]));
      float* gi = grad_in.row(static_cast<std::size_t>(ins[p]));
      for (std::size_t c = 0; c < cout; ++c) {
        const float gc = g[c];
        if (gc == 0.0f) continue;
        const float* wc = wt.data() + c * cin;
        for (std::size_t a = 0; a < cin; ++a) gi[a] += wc[a] * gc;
      }
      for (std::size_t a = 0; a < cin; ++a) {
        const float xa = x[a];
        if (xa == 0.0f) continue;
        float* gwa = gw + a * ld;
        for (std::size_t c = 0; c < cout; ++c) gwa[c] += xa * g[c];
      }
    }
  }
  return grad_in;
}

ConvBnRelu::ConvBnRelu(std::size_t in, std::size_t out, int stride, bool transposed, bool relu_)
    : conv(in, out, stride, transposed), bn(out), relu(relu_) {}

FeatureMatrix ConvBnRelu::forward(const KernelMap& kmap, const FeatureMatrix& x,
                                  std::size_t out_active, std::uint64_t* macs) {
  x_ = x;
  conv_out_ = sparse_conv_forward(conv, x, kmap, out_active, macs);
  out_ = nn::batchnorm_forward(bn, conv_out_);
  if (relu) nn::relu_inplace(out_);
  return out_;
}

FeatureMatrix ConvBnRelu::backward(const KernelMap& kmap, const FeatureMatrix& grad_out) {
  const FeatureMatrix g = relu ? nn::relu_backward(out_, grad_out) : grad_out;
  const FeatureMatrix g_conv = nn::batchnorm_backward(bn, conv_out_, g);
  return sparse_conv_backward(conv, x_, g_conv, kmap);
}

void ConvBnRelu::zero_grad() {
  conv.zero_grad();
  bn.zero_grad();
}

void ConvBnRelu::collect(const std::string& prefix, TensorList& out) {
  conv.collect(prefix + ".conv", out);
  nn::collect(bn, prefix + ".bn", out);
}

ResidualBlock::ResidualBlock(std::size_t in, std::size_t out, bool with_projection)
    : conv1(in, out),
      conv2(out, out),
      bn1(out),
      bn2(out),
      has_projection_(with_projection) {
  if (with_projection) {
    proj = nn::LinearLayer(in, out, /*with_bias=*/false);
    proj_bn = nn::BatchNormLayer(out);
  }
}

void ResidualBlock::init(Rng& rng) {
  conv1.init(rng);
  conv2.init(rng);
  if (has_projection_) proj.init(rng);
}

void ResidualBlock::set_mode(nn::BnMode mode) {
  bn1.mode = mode;
  bn2.mode = mode;
  proj_bn.mode = mode;
}

void ResidualBlock::zero_grad() {
  conv1.zero_grad();
  conv2.zero_grad();
  bn1.zero_grad();
  bn2.zero_grad();
  if (has_projection_) {
    proj.zero_grad();
    proj_bn.zero_grad();
  }
}

void ResidualBlock::collect(const std::string& prefix, TensorList& out) {
  conv1.collect(prefix + ".conv1", out);
  nn::collect(bn1, prefix + ".bn1", out);
  conv2.collect(prefix + ".conv2", out);
  nn::collect(bn2, prefix + ".bn2", out);
  if (has_projection_) {
    nn::collect(proj, prefix + ".proj", out);
    nn::collect(proj_bn, prefix + ".proj_bn", out);
  }
}

FeatureMatrix ResidualBlock::forward(const KernelMap& kmap, const FeatureMatrix& x,
                                     std::size_t out_active, std::uint64_t* macs) {
  used_projection_ = x.cols != out_active;
  if (used_projection_ && !has_projection_) {
    throw ShapeError("residual block: widths " + std::to_string(x.cols) + "->" +
                     std::to_string(out_active) + " need a projection that was not allocated");
  }
  x_ = x;
  c1_ = sparse_conv_forward(conv1, x, kmap, out_active, macs);
  a1_ = nn::batchnorm_forward(bn1, c1_);
  nn::relu_inplace(a1_);
  c2_ = sparse_conv_forward(conv2, a1_, kmap, out_active, macs);
  out_ = nn::batchnorm_forward(bn2, c2_);
  if (used_projection_) {
    p_ = nn::linear_forward(proj, x, out_active, macs);
    add_inplace(out_, nn::batchnorm_forward(proj_bn, p_));
  } else {
    add_inplace(out_, x);
  }
  nn::relu_inplace(out_);
  return out_;
}

FeatureMatrix ResidualBlock::backward(const KernelMap& kmap, const FeatureMatrix& grad_out) {
  const FeatureMatrix g = nn::relu_backward(out_, grad_out);
  FeatureMatrix g_main = nn::batchnorm_backward(bn2, c2_, g);
  g_main = sparse_conv_backward(conv2, a1_, g_main, kmap);
  g_main = nn::relu_backward(a1_, g_main);
  g_main = nn::batchnorm_backward(bn1, c1_, g_main);
  FeatureMatrix grad_in = sparse_conv_backward(conv1, x_, g_main, kmap);
  if (used_projection_) {
    const FeatureMatrix g_p = nn::batchnorm_backward(proj_bn, p_, g);
    add_inplace(grad_in, nn::linear_backward(proj, x_, g_p));
  } else {
    add_inplace(grad_in, g);
  }
  return grad_in;
}

SparseTensor residual_block_forward(ResidualBlock& block, const SparseTensor& s,
                                    std::uint64_t* macs) {
  const CoordHashMap hash = CoordHashMap::build(s.coords);
  const KernelMap kmap = build_kernel_map_stride1(s.coords, hash, s.tensor_stride);
  SparseTensor out;
  out.coords = s.coords;
  out.voxel_size = s.voxel_size;
  out.tensor_stride = s.tensor_stride;
  out.features = block.forward(kmap, s.features, block.out_channels(), macs);
  return out;
}

CoordinatePipeline build_coordinate_pipeline(std::span<const Position> positions,
                                             std::span<const std::int32_t> batch,
                                             double voxel_size, unsigned trilinear_levels) {
  if (!(voxel_size > 0.0)) throw ConfigError("voxel size must be positive");
  CoordinatePipeline p;
  p.voxel_size = voxel_size;
  p.point_count = positions.size();
  PointTensor pts;
  pts.positions.assign(positions.begin(), positions.end());
  pts.batch.assign(batch.begin(), batch.end());
  p.point_lattice = point_lattice_coords(pts, voxel_size);

  auto [coords0, vmap0] = unique_coords(p.point_lattice);
  p.coords[0] = std::move(coords0);
  p.point_voxel[0] = std::move(vmap0);
  p.hashes[0] = CoordHashMap::build(p.coords[0]);
  for (int l = 1; l < kLevels; ++l) {
    p.coords[l] = downsample_coords(p.coords[l - 1], CoordinatePipeline::stride_of(l - 1));
    p.hashes[l] = CoordHashMap::build(p.coords[l]);
    p.point_voxel[l] = assign_points(p.point_lattice, CoordinatePipeline::stride_of(l), p.hashes[l],
                                     p.coords[l].size());
  }
  for (int l = 0; l < kLevels; ++l) {
    p.submanifold[l] =
        build_kernel_map_stride1(p.coords[l], p.hashes[l], CoordinatePipeline::stride_of(l));
    if (trilinear_levels & (1u << l)) {
      p.trilinear[l] = build_trilinear_map(positions, batch, p.hashes[l], voxel_size,
                                           CoordinatePipeline::stride_of(l));
    }
  }
  for (int l = 0; l + 1 < kLevels; ++l) {
    p.down[l] = build_kernel_map_strided(p.coords[l], p.coords[l + 1],
                                         CoordinatePipeline::stride_of(l), false);
    p.up[l] = transpose_kernel_map(p.down[l], p.coords[l]);
  }
  return p;
}

KernelMapStats kernel_map_stats(const CoordinatePipeline& pipeline) {
  KernelMapStats s;
  s.scenes = 1;
  s.points = static_cast<double>(pipeline.point_count);
  for (int l = 0; l < kLevels; ++l) {
    s.voxels[l] = static_cast<double>(pipeline.coords[l].size());
    s.submanifold[l] = static_cast<double>(pipeline.submanifold[l].total_entries());
  }
  for (int l = 0; l + 1 < kLevels; ++l) {
    s.down[l] = static_cast<double>(pipeline.down[l].total_entries());
  }
  return s;
}

KernelMapStats estimate_kernel_map_sizes(std::span<const CoordinatePipeline* const> scenes) {
  if (scenes.empty()) throw ConfigError("kernel map statistics need at least one calibration scene");
  KernelMapStats acc;
  for (const CoordinatePipeline* scene : scenes) {
    const KernelMapStats s = kernel_map_stats(*scene);
    acc.points += s.points;
    for (int l = 0; l < kLevels; ++l) {
      acc.voxels[l] += s.voxels[l];
      acc.submanifold[l] += s.submanifold[l];
    }
    for (int l = 0; l + 1 < kLevels; ++l) acc.down[l] += s.down[l];
  }
  const double n = static_cast<double>(scenes.size());
  acc.scenes = scenes.size();
  acc.points /= n;
  for (int l = 0; l < kLevels; ++l) {
    acc.voxels[l] /= n;
    acc.submanifold[l] /= n;
  }
  for (int l = 0; l + 1 < kLevels; ++l) acc.down[l] /= n;
  return acc;
}

}  // namespace spvnas
