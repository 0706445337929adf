#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "spvnas/arch_spec.hpp"
#include "spvnas/feature_matrix.hpp"
#include "spvnas/nn.hpp"
#include "spvnas/sparse_conv.hpp"
#include "spvnas/spvconv.hpp"
#include "spvnas/tensor_slot.hpp"

namespace spvnas {

// Multiply-adds as counted by the kernels themselves during a forward pass.
struct MacCounter {
  std::uint64_t conv = 0;   // sparse convolutions and 1x1 projections
  std::uint64_t point = 0;  // point-branch MLPs
  std::uint64_t head = 0;   // per-point classifier
  std::uint64_t total() const { return conv + point + head; }
};

struct LayerMacs {
  std::string name;
  std::string kind;  // "conv", "point" or "head"
  double entries = 0.0;  // kernel-map entries, voxels or points
  int in_channels = 0;
  int out_channels = 0;
  double macs = 0.0;
};

struct MacsReport {
  double conv = 0.0;
  double point = 0.0;
  double head = 0.0;
  std::vector<LayerMacs> layers;
  double total() const { return conv + point + head; }
};

// Analytic counts from a scene's kernel maps, or from averaged kernel-map
// statistics over a calibration set.
MacsReport count_macs(const ArchSpec& spec, Family family, const CoordinatePipeline& scene);
MacsReport count_macs(const ArchSpec& spec, Family family, const KernelMapStats& stats);

// Which trilinear levels the backbone reads.
inline constexpr unsigned kBackboneTrilinearLevels = (1u << 0) | (1u << 2) | (1u << 4);

// U-Net of sparse residual stages wrapped by four point-voxel fusions:
//   #1 around the stem, #2 around the four downsampling stages,
//   #3 and #4 around two upsampling stages each.
// The voxel-only family keeps the same voxelize/devoxelize round trips but
// has no point branches.
//
// The network is allocated from `allocation`; forward accepts any active
// spec that fits inside it and runs leading channel slices and the first d
// blocks of each stage. A supernet is simply an allocation at maximal width
// and depth built with `elastic` set (every block gets a projection, since
// active widths vary).
class Network {
 public:
  Network() = default;
  Network(const ArchSpec& allocation, Family family, bool elastic = false);

  void init(std::uint64_t seed);

  const ArchSpec& allocation() const { return alloc_; }
  Family family() const { return family_; }
  bool elastic() const { return elastic_; }

  // Per-point logits, one row per point of the scene.
  FeatureMatrix forward(const CoordinatePipeline& scene, const FeatureMatrix& point_features,
                        const ArchSpec& active, MacCounter* macs = nullptr);
  FeatureMatrix forward(const CoordinatePipeline& scene, const FeatureMatrix& point_features,
                        MacCounter* macs = nullptr) {
    return forward(scene, point_features, alloc_, macs);
  }
  // Backpropagates the most recent forward; accumulates into parameter grads.
  void backward(const FeatureMatrix& grad_logits);

  void set_mode(nn::BnMode mode);
  // Cumulative BN recalibration: clear running statistics and average the
  // batch statistics of subsequent training-mode forwards.
  void begin_bn_recalibration();
  void end_bn_recalibration();

  void zero_grad();
  // Every named parameter and buffer, in a fixed order.
  TensorList tensors();
  std::vector<nn::ParamRef> parameters();
  std::size_t parameter_count();

  // Point-branch output of the last fusion (empty for voxel_only).
  const FeatureMatrix& last_point_branch_output() const { return point_[3].output(); }
  // Zeroes all point-branch tensors (diagnostics).
  void zero_point_branches();

 private:
  struct Stage {
    ConvBnRelu strided;
    std::vector<ResidualBlock> blocks;
  };

  std::vector<nn::BatchNormLayer*> batch_norms();
  void require_fits(const ArchSpec& active) const;

  ArchSpec alloc_;
  Family family_ = Family::kSpvcnn;
  bool elastic_ = false;

  std::array<ConvBnRelu, 2> stem_;
  std::array<Stage, kStages> stages_;
  std::array<PointBranch, 4> point_;
  nn::LinearLayer classifier_;

  // Forward state for backward.
  const CoordinatePipeline* scene_ = nullptr;
  ArchSpec active_;
  std::array<FeatureMatrix, 4> z_;  // fused point features after each fusion
  std::array<std::size_t, kStages> up_width_{};
};


}  // namespace spvnas
