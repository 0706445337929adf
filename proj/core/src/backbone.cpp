#include "spvnas/backbone.hpp"

#include <algorithm>

#include "spvnas/errors.hpp"

namespace spvnas {

namespace {

// Grid level a stage's blocks run on: encoder s at s + 1, decoder j at 3 - j.
int stage_level(int s) { return s < kEncoderStages ? s + 1 : kStages - 1 - s; }

std::string stage_prefix(int s) {
  return s < kEncoderStages ? "enc" + std::to_string(s) : "dec" + std::to_string(s - kEncoderStages);
}

// Input width of the first layer of stage s (before the strided conv).
int stage_input(const ArchSpec& a, int s) {
  return s == 0 ? a.stem_channels : a.stage_output(s - 1);
}

// Input width of block b of stage s.
int block_input(const ArchSpec& a, int s, int b) {
  if (b > 0) return a.stage_channels[s][b];
  int w = a.stage_channels[s][0];
  if (s >= kEncoderStages) w += a.skip_width(s);
  return w;
}

// Widths entering and leaving the four point branches.
std::array<std::pair<int, int>, 4> point_widths(const ArchSpec& a) {
  return {{{a.input_channels, a.stem_channels},
           {a.stem_channels, a.stage_output(3)},
           {a.stage_output(3), a.stage_output(5)},
           {a.stage_output(5), a.stage_output(7)}}};
}

std::uint64_t* slot(MacCounter* m, std::uint64_t MacCounter::*field) {
  return m ? &(m->*field) : nullptr;
}

// One row per MAC-carrying layer, with abstract map sizes resolved by `size`.
template <class SizeFn>
MacsReport enumerate_macs(const ArchSpec& a, Family family, double points, SizeFn size) {
  MacsReport r;
  auto add = [&](std::string name, std::string kind, double entries, int in, int out) {
    LayerMacs l{std::move(name), std::move(kind), entries, in, out,
                entries * double(in) * double(out)};
    if (l.kind == "conv") r.conv += l.macs;
    else if (l.kind == "point") r.point += l.macs;
    else r.head += l.macs;
    r.layers.push_back(std::move(l));
  };
  // size(kind, level): kind 0 submanifold, 1 down (l -> l+1), 2 voxels.
  add("stem.0", "conv", size(0, 0), a.input_channels, a.stem_channels);
  add("stem.1", "conv", size(0, 0), a.stem_channels, a.stem_channels);
  for (int s = 0; s < kStages; ++s) {
    const std::string p = stage_prefix(s);
    const int lvl = stage_level(s);
    const int down_level = s < kEncoderStages ? s : lvl;  // up map shares the down map's size
    add(p + (s < kEncoderStages ? ".down" : ".up"), "conv", size(1, down_level),
        stage_input(a, s), a.stage_channels[s][0]);
    for (int b = 0; b < a.stage_depths[s]; ++b) {
      const int in = block_input(a, s, b);
      const int out = a.stage_channels[s][b + 1];
      const std::string bp = p + ".block" + std::to_string(b);
      add(bp + ".conv1", "conv", size(0, lvl), in, out);
      add(bp + ".conv2", "conv", size(0, lvl), out, out);
      if (in != out) add(bp + ".proj", "conv", size(2, lvl), in, out);
    }
  }
  if (family == Family::kSpvcnn) {
    const auto pw = point_widths(a);
    for (int i = 0; i < 4; ++i) {
      add("point" + std::to_string(i), "point", points, pw[i].first, pw[i].second);
    }
  }
  add("classifier", "head", points, a.stage_output(kStages - 1), a.num_classes);
  return r;
}

}  // namespace

MacsReport count_macs(const ArchSpec& spec, Family family, const CoordinatePipeline& scene) {
  require_valid(spec);
  return enumerate_macs(spec, family, double(scene.point_count), [&](int kind, int level) {
    if (kind == 0) return double(scene.submanifold[level].total_entries());
    if (kind == 1) return double(scene.down[level].total_entries());
    return double(scene.coords[level].size());
  });
}

MacsReport count_macs(const ArchSpec& spec, Family family, const KernelMapStats& stats) {
  require_valid(spec);
  return enumerate_macs(spec, family, stats.points, [&](int kind, int level) {
    if (kind == 0) return stats.submanifold[level];
    if (kind == 1) return stats.down[level];
    return stats.voxels[level];
  });
}

Network::Network(const ArchSpec& allocation, Family family, bool elastic)
    : alloc_(allocation), family_(family), elastic_(elastic) {
  require_valid(alloc_);
  const auto& a = alloc_;
  stem_[0] = ConvBnRelu(a.input_channels, a.stem_channels, 1, false);
  stem_[1] = ConvBnRelu(a.stem_channels, a.stem_channels, 1, false);
  for (int s = 0; s < kStages; ++s) {
    Stage& st = stages_[s];
    st.strided = ConvBnRelu(stage_input(a, s), a.stage_channels[s][0], 2, s >= kEncoderStages);
    for (int b = 0; b < a.stage_depths[s]; ++b) {
      const int in = block_input(a, s, b);
      const int out = a.stage_channels[s][b + 1];
      st.blocks.emplace_back(in, out, elastic_ || in != out);
    }
  }
  if (family_ == Family::kSpvcnn) {
    const auto pw = point_widths(a);
    for (int i = 0; i < 4; ++i) point_[i] = PointBranch(pw[i].first, pw[i].second);
  }
  classifier_ = nn::LinearLayer(a.stage_output(kStages - 1), a.num_classes);
}

void Network::init(std::uint64_t seed) {
  Rng rng(seed);
  for (auto& c : stem_) c.init(rng);
  for (auto& st : stages_) {
    st.strided.init(rng);
    for (auto& b : st.blocks) b.init(rng);
  }
  if (family_ == Family::kSpvcnn) {
    for (auto& p : point_) p.init(rng);
  }
  classifier_.init(rng);
}

void Network::require_fits(const ArchSpec& active) const {
  require_valid(active);
  if (!fits_within(active, alloc_)) {
    throw ConfigError("architecture " + to_json(active) + " does not fit the allocated network " +
                      to_json(alloc_));
  }
}

FeatureMatrix Network::forward(const CoordinatePipeline& scene, const FeatureMatrix& point_features,
                               const ArchSpec& active, MacCounter* macs) {
  require_fits(active);
  if (scene.point_count == 0) throw DataError("cannot run the network on an empty scene");
  if (point_features.rows != scene.point_count) {
    throw ShapeError("network: " + std::to_string(point_features.rows) + " feature rows for " +
                     std::to_string(scene.point_count) + " points");
  }
  if (point_features.cols != static_cast<std::size_t>(active.input_channels)) {
    throw ShapeError("network: expected " + std::to_string(active.input_channels) +
                     " input channels, got " + std::to_string(point_features.cols));
  }
  for (int l : {0, 2, 4}) {
    if (scene.trilinear[l].size() != scene.point_count) {
      throw ConfigError("coordinate pipeline lacks trilinear maps at level " + std::to_string(l));
    }
  }
  scene_ = &scene;
  active_ = active;
  const auto& a = active;
  const bool spv = family_ == Family::kSpvcnn;
  const auto pw = point_widths(a);
  std::uint64_t* conv_macs = slot(macs, &MacCounter::conv);
  std::uint64_t* point_macs = slot(macs, &MacCounter::point);

  auto fuse = [&](int i, const FeatureMatrix& voxel_out, int level, const FeatureMatrix& prev) {
    FeatureMatrix z = devoxelize(scene.trilinear[level], voxel_out);
    if (spv) add_inplace(z, point_[i].forward(prev, pw[i].second, point_macs));
    return z;
  };
  auto run_stage = [&](int s, FeatureMatrix y, const FeatureMatrix* skip) {
    const int lvl = stage_level(s);
    const KernelMap& strided = s < kEncoderStages ? scene.down[s] : scene.up[lvl];
    y = stages_[s].strided.forward(strided, y, a.stage_channels[s][0], conv_macs);
    if (skip) {
      up_width_[s] = y.cols;
      y = concat_columns(y, *skip);
    }
    for (int b = 0; b < a.stage_depths[s]; ++b) {
      y = stages_[s].blocks[b].forward(scene.submanifold[lvl], y, a.stage_channels[s][b + 1],
                                       conv_macs);
    }
    return y;
  };

  // Fusion 1 around the stem.
  FeatureMatrix x = voxelize_features(point_features, scene.point_voxel[0]);
  x = stem_[0].forward(scene.submanifold[0], x, a.stem_channels, conv_macs);
  const FeatureMatrix x0 = stem_[1].forward(scene.submanifold[0], x, a.stem_channels, conv_macs);
  z_[0] = fuse(0, x0, 0, point_features);

  // Fusion 2 around the encoder.
  std::array<FeatureMatrix, kEncoderStages> enc;
  FeatureMatrix y = voxelize_features(z_[0], scene.point_voxel[0]);
  for (int s = 0; s < kEncoderStages; ++s) {
    y = run_stage(s, std::move(y), nullptr);
    enc[s] = y;
  }
  z_[1] = fuse(1, y, 4, z_[0]);

  // Fusions 3 and 4 around two decoder stages each.
  y = voxelize_features(z_[1], scene.point_voxel[4]);
  y = run_stage(4, std::move(y), &enc[2]);
  y = run_stage(5, std::move(y), &enc[1]);
  z_[2] = fuse(2, y, 2, z_[1]);

  y = voxelize_features(z_[2], scene.point_voxel[2]);
  y = run_stage(6, std::move(y), &enc[0]);
  y = run_stage(7, std::move(y), &x0);
  z_[3] = fuse(3, y, 0, z_[2]);

  return nn::linear_forward(classifier_, z_[3], static_cast<std::size_t>(a.num_classes),
                            slot(macs, &MacCounter::head));
}

void Network::backward(const FeatureMatrix& grad_logits) {
  if (!scene_) throw std::logic_error("network backward called before forward");
  const CoordinatePipeline& scene = *scene_;
  const auto& a = active_;
  const bool spv = family_ == Family::kSpvcnn;

  // Splits a fused-feature gradient into the voxel-branch gradient (at
  // `level`) and the gradient into the previous fused features.
  auto unfuse = [&](int i, const FeatureMatrix& g_z, int level, FeatureMatrix& g_prev) {
    FeatureMatrix g_vox = devoxelize_backward(scene.trilinear[level], g_z, scene.coords[level].size());
    if (spv) add_inplace(g_prev, point_[i].backward(g_z));
    return g_vox;
  };
  // Returns the gradient w.r.t. the stage input; decoder stages also emit
  // the skip gradient.
  auto stage_backward = [&](int s, FeatureMatrix g, FeatureMatrix* g_skip) {
    const int lvl = stage_level(s);
    for (int b = a.stage_depths[s] - 1; b >= 0; --b) {
      g = stages_[s].blocks[b].backward(scene.submanifold[lvl], g);
    }
    if (g_skip) {
      FeatureMatrix g_up;
      split_columns(g, up_width_[s], g_up, *g_skip);
      g = std::move(g_up);
    }
    const KernelMap& strided = s < kEncoderStages ? scene.down[s] : scene.up[lvl];
    return stages_[s].strided.backward(strided, g);
  };

  FeatureMatrix g_z3 = nn::linear_backward(classifier_, z_[3], grad_logits);

  FeatureMatrix g_z2(z_[2].rows, z_[2].cols);
  FeatureMatrix g = unfuse(3, g_z3, 0, g_z2);
  FeatureMatrix g_x0_skip, g_enc0, g_enc1, g_enc2;
  g = stage_backward(7, std::move(g), &g_x0_skip);
  g = stage_backward(6, std::move(g), &g_enc0);
  add_inplace(g_z2, voxelize_backward(g, scene.point_voxel[2]));

  FeatureMatrix g_z1(z_[1].rows, z_[1].cols);
  g = unfuse(2, g_z2, 2, g_z1);
  g = stage_backward(5, std::move(g), &g_enc1);
  g = stage_backward(4, std::move(g), &g_enc2);
  add_inplace(g_z1, voxelize_backward(g, scene.point_voxel[4]));

  FeatureMatrix g_z0(z_[0].rows, z_[0].cols);
  g = unfuse(1, g_z1, 4, g_z0);
  g = stage_backward(3, std::move(g), nullptr);
  add_inplace(g, g_enc2);
  g = stage_backward(2, std::move(g), nullptr);
  add_inplace(g, g_enc1);
  g = stage_backward(1, std::move(g), nullptr);
  add_inplace(g, g_enc0);
  g = stage_backward(0, std::move(g), nullptr);
  add_inplace(g_z0, voxelize_backward(g, scene.point_voxel[0]));

  FeatureMatrix g_in(scene.point_count, static_cast<std::size_t>(a.input_channels));
  FeatureMatrix g_x0 = unfuse(0, g_z0, 0, g_in);
  add_inplace(g_x0, g_x0_skip);
  g = stem_[1].backward(scene.submanifold[0], g_x0);
  stem_[0].backward(scene.submanifold[0], g);
}

std::vector<nn::BatchNormLayer*> Network::batch_norms() {
  std::vector<nn::BatchNormLayer*> out;
  for (auto& c : stem_) out.push_back(&c.bn);
  for (auto& st : stages_) {
    out.push_back(&st.strided.bn);
    for (auto& b : st.blocks) {
      out.push_back(&b.bn1);
      out.push_back(&b.bn2);
      if (b.has_projection()) out.push_back(&b.proj_bn);
    }
  }
  if (family_ == Family::kSpvcnn) {
    for (auto& p : point_) out.push_back(&p.bn);
  }
  return out;
}

void Network::set_mode(nn::BnMode mode) {
  for (auto* bn : batch_norms()) bn->mode = mode;
}

void Network::begin_bn_recalibration() {
  for (auto* bn : batch_norms()) {
    bn->reset_running_stats();
    bn->cumulative = true;
    bn->mode = nn::BnMode::kTraining;
  }
}

void Network::end_bn_recalibration() {
  for (auto* bn : batch_norms()) {
    bn->cumulative = false;
    bn->mode = nn::BnMode::kInference;
  }
}

void Network::zero_grad() {
  for (auto& c : stem_) c.zero_grad();
  for (auto& st : stages_) {
    st.strided.zero_grad();
    for (auto& b : st.blocks) b.zero_grad();
  }
  if (family_ == Family::kSpvcnn) {
    for (auto& p : point_) p.zero_grad();
  }
  classifier_.zero_grad();
}

TensorList Network::tensors() {
  TensorList out;
  stem_[0].collect("stem.0", out);
  stem_[1].collect("stem.1", out);
  for (int s = 0; s < kStages; ++s) {
    const std::string p = stage_prefix(s);
    stages_[s].strided.collect(p + (s < kEncoderStages ? ".down" : ".up"), out);
    for (std::size_t b = 0; b < stages_[s].blocks.size(); ++b) {
      stages_[s].blocks[b].collect(p + ".block" + std::to_string(b), out);
    }
  }
  if (family_ == Family::kSpvcnn) {
    for (int i = 0; i < 4; ++i) point_[i].collect("point" + std::to_string(i), out);
  }
  nn::collect(classifier_, "classifier", out);
  return out;
}

std::vector<nn::ParamRef> Network::parameters() {
  std::vector<nn::ParamRef> out;
  for (auto& t : tensors()) {
    if (!t.grad) continue;
    out.push_back({t.name, {t.value, t.numel()}, {t.grad, t.numel()}});
  }
  return out;
}

std::size_t Network::parameter_count() {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.value.size();
  return n;
}

void Network::zero_point_branches() {
  if (family_ != Family::kSpvcnn) return;
  for (auto& t : tensors()) {
    if (t.name.rfind("point", 0) != 0 || !t.grad) continue;
    std::fill(t.value, t.value + t.numel(), 0.0f);
  }
}

}  // namespace spvnas
