#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "spvnas/coords.hpp"
#include "spvnas/feature_matrix.hpp"
#include "spvnas/nn.hpp"
#include "spvnas/rng.hpp"
#include "spvnas/tensor_slot.hpp"

namespace spvnas {

inline constexpr int kKernelVolume = 27;

// The 27 offsets of a 3x3x3 kernel in lexicographic (dx, dy, dz) order,
// dx outermost; index 13 is the center.
const std::array<std::array<std::int32_t, 3>, kKernelVolume>& kernel_offsets();
inline constexpr int kCenterOffset = 13;

// Per-offset (input row, output row) pairs: the active synapses of one
// sparse convolution.
struct KernelMap {
  std::array<std::vector<std::int32_t>, kKernelVolume> in_rows;
  std::array<std::vector<std::int32_t>, kKernelVolume> out_rows;
  std::size_t in_count = 0;
  std::size_t out_count = 0;
  std::vector<Coord> out_coords;
  // Number of hash lookups issued while building.
  std::uint64_t probes = 0;

  std::int64_t total_entries() const;
  std::size_t pairs(int k) const { return in_rows[k].size(); }
};

// Submanifold map: outputs are the inputs; pair (i, o) at offset d when
// coord(o) + d * stride is active at row i.
KernelMap build_kernel_map_stride1(std::span<const Coord> coords, const CoordHashMap& hash,
                                   std::int32_t tensor_stride = 1);

// Unique { floor(c / (2 ts)) * 2 ts } in first-appearance order.
std::vector<Coord> downsample_coords(std::span<const Coord> coords, std::int32_t tensor_stride);

// Downsample (transposed = false): in is the ts lattice, out the 2 ts lattice,
// pair (i, o) when c_in(i) = c_out(o) + d * ts.
// Transposed: in is the 2 ts lattice, out the cached ts lattice, pair (i, o)
// when c_out(o) = c_in(i) + d * ts. The same offset index is used in both
// directions, so each map is the transpose of the other.
KernelMap build_kernel_map_strided(std::span<const Coord> in_coords,
                                   std::span<const Coord> out_coords, std::int32_t tensor_stride,
                                   bool transposed);

// Swaps the roles of every pair; `in_coords` become the output coordinates.
KernelMap transpose_kernel_map(const KernelMap& map, std::span<const Coord> in_coords);

// 3x3x3 sparse convolution without bias. Kernel k is stored input-major
// ([in][out]) so the inner loop runs over contiguous output channels.
struct SparseConvLayer {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  int stride = 1;
  bool transposed = false;
  std::vector<float> weight;  // [27][in][out]
  std::vector<float> grad;

  SparseConvLayer() = default;
  SparseConvLayer(std::size_t in, std::size_t out, int stride_ = 1, bool transposed_ = false);

  float* kernel(int k) { return weight.data() + static_cast<std::size_t>(k) * in_channels * out_channels; }
  const float* kernel(int k) const {
    return weight.data() + static_cast<std::size_t>(k) * in_channels * out_channels;
  }
  // Element (k, i, o) of W_k, mapping input channel i to output channel o.
  float& at(int k, std::size_t i, std::size_t o) { return kernel(k)[i * out_channels + o]; }

  // Uniform in +-sqrt(1 / (in * 27)).
  void init(Rng& rng);
  void zero_grad();
  void collect(const std::string& prefix, TensorList& out);
};

// out[o] = sum over offsets d and pairs (i, o) of W_d in[i]. Leading-slice
// semantics: in.cols <= in_channels, out_active <= out_channels.
FeatureMatrix sparse_conv_forward(const SparseConvLayer& layer, const FeatureMatrix& in,
                                  const KernelMap& kmap, std::size_t out_active,
                                  std::uint64_t* macs = nullptr);
FeatureMatrix sparse_conv_forward(const SparseConvLayer& layer, const FeatureMatrix& in,
                                  const KernelMap& kmap);
// Returns dL/din; accumulates weight gradients of the active block.
FeatureMatrix sparse_conv_backward(SparseConvLayer& layer, const FeatureMatrix& in,
                                   const FeatureMatrix& grad_out, const KernelMap& kmap);

// Sparse conv -> batch norm -> optional ReLU, caching what backward needs.
class ConvBnRelu {
 public:
  ConvBnRelu() = default;
  ConvBnRelu(std::size_t in, std::size_t out, int stride, bool transposed, bool relu = true);

  FeatureMatrix forward(const KernelMap& kmap, const FeatureMatrix& x, std::size_t out_active,
                        std::uint64_t* macs = nullptr);
  FeatureMatrix backward(const KernelMap& kmap, const FeatureMatrix& grad_out);

  void init(Rng& rng) { conv.init(rng); }
  void set_mode(nn::BnMode mode) { bn.mode = mode; }
  void zero_grad();
  void collect(const std::string& prefix, TensorList& out);

  SparseConvLayer conv;
  nn::BatchNormLayer bn;
  bool relu = true;

 private:
  FeatureMatrix x_, conv_out_, out_;
};

// conv3 -> BN -> ReLU -> conv3 -> BN, plus identity skip (or 1x1 projection +
// BN when the active input and output widths differ), then ReLU.
class ResidualBlock {
 public:
  ResidualBlock() = default;
  // A projection is allocated when `with_projection` is set; it is used
  // whenever the active input width differs from the active output width.
  ResidualBlock(std::size_t in, std::size_t out, bool with_projection);

  FeatureMatrix forward(const KernelMap& kmap, const FeatureMatrix& x, std::size_t out_active,
                        std::uint64_t* macs = nullptr);
  FeatureMatrix backward(const KernelMap& kmap, const FeatureMatrix& grad_out);

  void init(Rng& rng);
  void set_mode(nn::BnMode mode);
  void zero_grad();
  void collect(const std::string& prefix, TensorList& out);

  std::size_t in_channels() const { return conv1.in_channels; }
  std::size_t out_channels() const { return conv2.out_channels; }
  bool has_projection() const { return has_projection_; }

  SparseConvLayer conv1, conv2;
  nn::BatchNormLayer bn1, bn2;
  nn::LinearLayer proj;  // 1x1 convolution, no bias
  nn::BatchNormLayer proj_bn;

 private:
  bool has_projection_ = false;
  bool used_projection_ = false;
  FeatureMatrix x_, c1_, a1_, c2_, b2_, p_, out_;
};

// Stride-1 residual block over a sparse tensor; coordinates pass through.
SparseTensor residual_block_forward(ResidualBlock& block, const SparseTensor& s,
                                    std::uint64_t* macs = nullptr);

// Number of tensor-stride levels in the U-Net (strides 1, 2, 4, 8, 16).
inline constexpr int kLevels = 5;

// Everything about a scene that depends on geometry alone: lattice
// coordinates at every stride, their hash tables, all kernel maps, and the
// point <-> voxel maps. Independent of architecture and weights.
struct CoordinatePipeline {
  double voxel_size = 0.0;
  std::size_t point_count = 0;
  std::vector<Coord> point_lattice;
  std::array<std::vector<Coord>, kLevels> coords;
  std::array<CoordHashMap, kLevels> hashes;
  std::array<KernelMap, kLevels> submanifold;
  std::array<KernelMap, kLevels - 1> down;  // level l -> l + 1
  std::array<KernelMap, kLevels - 1> up;    // level l + 1 -> l
  std::array<VoxelizeMap, kLevels> point_voxel;
  std::array<TrilinearMap, kLevels> trilinear;  // only built for requested levels

  static std::int32_t stride_of(int level) { return std::int32_t{1} << level; }
};

// Trilinear maps are built for each level whose bit is set in `trilinear_levels`.
CoordinatePipeline build_coordinate_pipeline(std::span<const Position> positions,
                                             std::span<const std::int32_t> batch,
                                             double voxel_size,
                                             unsigned trilinear_levels = 0b11111u);

// Mean kernel-map sizes over a calibration set, per map position.
struct KernelMapStats {
  std::size_t scenes = 0;
  double points = 0.0;
  std::array<double, kLevels> voxels{};
  std::array<double, kLevels> submanifold{};
  std::array<double, kLevels - 1> down{};  // equal to the matching transposed map

  bool operator==(const KernelMapStats&) const = default;
};

KernelMapStats kernel_map_stats(const CoordinatePipeline& pipeline);
// Throws ConfigError on an empty calibration set. Scenes are reduced in order.
KernelMapStats estimate_kernel_map_sizes(std::span<const CoordinatePipeline* const> scenes);

}  // namespace spvnas
