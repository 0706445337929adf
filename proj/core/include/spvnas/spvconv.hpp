#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "spvnas/coords.hpp"
#include "spvnas/nn.hpp"
#include "spvnas/sparse_conv.hpp"

namespace spvnas {

// High-resolution point branch: linear -> BN -> ReLU on every point.
class PointBranch {
 public:
  PointBranch() = default;
  PointBranch(std::size_t in, std::size_t out);

  FeatureMatrix forward(const FeatureMatrix& x, std::size_t out_active,
                        std::uint64_t* macs = nullptr);
  FeatureMatrix backward(const FeatureMatrix& grad_out);

  void init(Rng& rng) { linear.init(rng); }
  void set_mode(nn::BnMode mode) { bn.mode = mode; }
  void zero_grad();
  void collect(const std::string& prefix, TensorList& out);
  const FeatureMatrix& output() const { return out_; }

  nn::LinearLayer linear;
  nn::BatchNormLayer bn;

 private:
  FeatureMatrix x_, lin_, out_;
};

// Sparse voxel branch (voxelize -> residual blocks -> trilinear devoxelize)
// running next to a point branch; the two are fused by addition. The output
// keeps the input point set and order.
class SpvConvModule {
 public:
  // `block_widths` lists the output width of each stride-1 residual block;
  // the point branch maps in -> point_out. Throws ConfigError unless the last
  // voxel width equals point_out.
  SpvConvModule(std::size_t in, std::vector<std::size_t> block_widths, std::size_t point_out);

  PointTensor forward(const PointTensor& points, double voxel_size);
  // Gradient w.r.t. the input point features, summed over both branches.
  FeatureMatrix backward(const FeatureMatrix& grad_out);

  void init(Rng& rng);
  void set_mode(nn::BnMode mode);
  void zero_grad();
  void collect(const std::string& prefix, TensorList& out);

  const FeatureMatrix& point_branch_output() const { return point_branch.output(); }
  const FeatureMatrix& voxel_branch_output() const { return voxel_points_; }

  std::vector<ResidualBlock> voxel_blocks;
  PointBranch point_branch;
  bool voxel_enabled = true;
  bool point_enabled = true;

 private:
  std::size_t in_channels_ = 0;
  VoxelizeMap vmap_;
  KernelMap kmap_;
  TrilinearMap tmap_;
  std::size_t voxel_count_ = 0;
  FeatureMatrix voxel_points_;
};

struct ActivationStats {
  std::vector<double> norms;  // L2 norm of each point's branch output
  std::vector<bool> mask;     // top ceil(q * n) norms; ties go to the lower index
  std::size_t selected = 0;
};

ActivationStats point_branch_activation_stats(const FeatureMatrix& branch_output,
                                              double quantile = 0.05);

}  // namespace spvnas
