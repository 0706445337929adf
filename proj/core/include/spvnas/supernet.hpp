#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "spvnas/backbone.hpp"
#include "spvnas/dataset.hpp"
#include "spvnas/metrics.hpp"
#include "spvnas/search_space.hpp"

namespace spvnas {

// A leading sub-block of one supernet tensor. Nothing is copied: `data`
// points into the supernet and elements are addressed with the full strides.
struct SliceView {
  std::string name;
  std::vector<std::size_t> full_shape;
  std::vector<std::size_t> active_shape;
  float* data = nullptr;

  std::size_t active_numel() const;
  bool covers_full_tensor() const { return full_shape == active_shape; }
  float& at(std::span<const std::size_t> index) const;
};

// Every layer at its widest choice and maximal depth, with a projection on
// every residual block.
Network build_supernet(const SearchSpace& space, Family family);

// The tensors a standalone copy of `spec` would read, as views into the
// supernet. Throws ConfigError when spec does not fit.
std::vector<SliceView> slice_weights(Network& supernet, const ArchSpec& spec);

// Standalone network for `spec` holding copies of the sliced weights.
Network extract_subnet(Network& supernet, const ArchSpec& spec);

// Clears BN running statistics and re-estimates them as the average of the
// batch statistics over `scenes`; leaves the network in inference mode.
void recalibrate_bn(Network& net, const ArchSpec& active, std::span<const PreparedScene> scenes);

// Per-point argmax of the logits.
std::vector<std::int32_t> predict_classes(const FeatureMatrix& logits);

// Inference-mode evaluation over `scenes`.
IouResult evaluate(Network& net, const ArchSpec& active, std::span<const PreparedScene> scenes);

// Extract, recalibrate BN on `calib`, then mIoU on `val`.
double subnet_fitness(Network& supernet, const ArchSpec& spec, std::span<const PreparedScene> calib,
                      std::span<const PreparedScene> val);

}  // namespace spvnas
