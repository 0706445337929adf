#include "spvnas/spvconv.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "spvnas/errors.hpp"

namespace spvnas {

PointBranch::PointBranch(std::size_t in, std::size_t out) : linear(in, out), bn(out) {}

FeatureMatrix PointBranch::forward(const FeatureMatrix& x, std::size_t out_active,
                                   std::uint64_t* macs) {
  x_ = x;
  lin_ = nn::linear_forward(linear, x, out_active, macs);
  out_ = nn::batchnorm_forward(bn, lin_);
  nn::relu_inplace(out_);
  return out_;
}

FeatureMatrix PointBranch::backward(const FeatureMatrix& grad_out) {
  FeatureMatrix g = nn::relu_backward(out_, grad_out);
  g = nn::batchnorm_backward(bn, lin_, g);
  return nn::linear_backward(linear, x_, g);
}

void PointBranch::zero_grad() {
  linear.zero_grad();
  bn.zero_grad();
}

void PointBranch::collect(const std::string& prefix, TensorList& out) {
  nn::collect(linear, prefix + ".linear", out);
  nn::collect(bn, prefix + ".bn", out);
}

SpvConvModule::SpvConvModule(std::size_t in, std::vector<std::size_t> block_widths,
                             std::size_t point_out)
    : point_branch(in, point_out), in_channels_(in) {
  if (block_widths.empty()) throw ConfigError("spvconv: voxel branch needs at least one block");
  if (block_widths.back() != point_out) {
    throw ConfigError("spvconv: voxel branch ends at " + std::to_string(block_widths.back()) +
                      " channels but point branch produces " + std::to_string(point_out));
  }
  std::size_t prev = in;
  for (std::size_t w : block_widths) {
    voxel_blocks.emplace_back(prev, w, prev != w);
    prev = w;
  }
}

void SpvConvModule::init(Rng& rng) {
  for (auto& b : voxel_blocks) b.init(rng);
  point_branch.init(rng);
}

void SpvConvModule::set_mode(nn::BnMode mode) {
  for (auto& b : voxel_blocks) b.set_mode(mode);
  point_branch.set_mode(mode);
}

void SpvConvModule::zero_grad() {
  for (auto& b : voxel_blocks) b.zero_grad();
  point_branch.zero_grad();
}

void SpvConvModule::collect(const std::string& prefix, TensorList& out) {
  for (std::size_t i = 0; i < voxel_blocks.size(); ++i) {
    voxel_blocks[i].collect(prefix + ".voxel" + std::to_string(i), out);
  }
  point_branch.collect(prefix + ".point", out);
}

PointTensor SpvConvModule::forward(const PointTensor& points, double voxel_size) {
  points.validate();
  if (points.features.cols != in_channels_) {
    throw ShapeError("spvconv: input has " + std::to_string(points.features.cols) +
                     " channels but module expects " + std::to_string(in_channels_));
  }
  const std::size_t out_c = point_branch.linear.out_channels;
  auto [coords, vmap] = voxelize_coords(points, voxel_size);
  vmap_ = std::move(vmap);
  voxel_count_ = coords.size();
  const CoordHashMap hash = CoordHashMap::build(coords);
  kmap_ = build_kernel_map_stride1(coords, hash, 1);
  tmap_ = build_trilinear_map(points.positions, points.batch, hash, voxel_size, 1);

  PointTensor out;
  out.positions = points.positions;
  out.batch = points.batch;
  out.features = FeatureMatrix(points.size(), out_c);
  if (voxel_enabled) {
    FeatureMatrix v = voxelize_features(points.features, vmap_);
    for (auto& b : voxel_blocks) v = b.forward(kmap_, v, b.out_channels());
    voxel_points_ = devoxelize(tmap_, v);
    add_inplace(out.features, voxel_points_);
  }
  if (point_enabled) {
    add_inplace(out.features, point_branch.forward(points.features, out_c));
  }
  return out;
}

FeatureMatrix SpvConvModule::backward(const FeatureMatrix& grad_out) {
  FeatureMatrix grad_in(grad_out.rows, in_channels_);
  if (voxel_enabled) {
    FeatureMatrix g = devoxelize_backward(tmap_, grad_out, voxel_count_);
    for (auto it = voxel_blocks.rbegin(); it != voxel_blocks.rend(); ++it) g = it->backward(kmap_, g);
    add_inplace(grad_in, voxelize_backward(g, vmap_));
  }
  if (point_enabled) add_inplace(grad_in, point_branch.backward(grad_out));
  return grad_in;
}

ActivationStats point_branch_activation_stats(const FeatureMatrix& branch_output,
                                              double quantile) {
  ActivationStats st;
  const std::size_t n = branch_output.rows;
  st.norms.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    double s = 0.0;
    for (float v : branch_output.row_span(k)) s += double(v) * double(v);
    st.norms[k] = std::sqrt(s);
  }
  st.selected = std::min<std::size_t>(n, static_cast<std::size_t>(std::ceil(quantile * double(n))));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return st.norms[a] > st.norms[b]; });
  st.mask.assign(n, false);
  for (std::size_t i = 0; i < st.selected; ++i) st.mask[order[i]] = true;
  return st;
}

}  // namespace spvnas
