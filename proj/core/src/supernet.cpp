#include "spvnas/supernet.hpp"

#include <algorithm>

#include "spvnas/checkpoint.hpp"
#include "spvnas/errors.hpp"

namespace spvnas {

std::size_t SliceView::active_numel() const {
  std::size_t n = 1;
  for (auto d : active_shape) n *= d;
  return n;
}

float& SliceView::at(std::span<const std::size_t> index) const {
  if (index.size() != full_shape.size()) throw ShapeError("slice index rank mismatch");
  std::size_t off = 0;
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= active_shape[i]) throw ShapeError("slice index outside the active block");
    off = off * full_shape[i] + index[i];
  }
  return data[off];
}

Network build_supernet(const SearchSpace& space, Family family) {
  return Network(max_arch(space), family, true);
}

std::vector<SliceView> slice_weights(Network& supernet, const ArchSpec& spec) {
  require_valid(spec);
  if (!fits_within(spec, supernet.allocation())) {
    throw ConfigError("architecture " + to_json(spec) + " is outside the supernet");
  }
  // The standalone layout defines which tensors and how much of each.
  Network shape_only(spec, supernet.family(), false);
  const TensorList full = supernet.tensors();
  std::vector<SliceView> views;
  for (const auto& t : shape_only.tensors()) {
    const auto it = std::find_if(full.begin(), full.end(),
                                 [&](const TensorSlot& s) { return s.name == t.name; });
    if (it == full.end()) throw ConfigError("supernet has no tensor named '" + t.name + "'");
    views.push_back({t.name, it->shape, t.shape, it->value});
  }
  return views;
}

Network extract_subnet(Network& supernet, const ArchSpec& spec) {
  require_valid(spec);
  if (!fits_within(spec, supernet.allocation())) {
    throw ConfigError("architecture " + to_json(spec) + " is outside the supernet");
  }
  Network sub(spec, supernet.family(), false);
  TensorList dst = sub.tensors();
  copy_tensors(supernet.tensors(), dst);
  return sub;
}

void recalibrate_bn(Network& net, const ArchSpec& active, std::span<const PreparedScene> scenes) {
  net.begin_bn_recalibration();
  for (const auto& s : scenes) net.forward(s.pipeline, s.features, active);
  net.end_bn_recalibration();
}

std::vector<std::int32_t> predict_classes(const FeatureMatrix& logits) {
  std::vector<std::int32_t> out(logits.rows);
  for (std::size_t r = 0; r < logits.rows; ++r) {
    const float* row = logits.row(r);
    out[r] = static_cast<std::int32_t>(std::max_element(row, row + logits.cols) - row);
  }
  return out;
}

IouResult evaluate(Network& net, const ArchSpec& active, std::span<const PreparedScene> scenes) {
  net.set_mode(nn::BnMode::kInference);
  ConfusionMatrix cm(active.num_classes);
  for (const auto& s : scenes) {
    cm.add(predict_classes(net.forward(s.pipeline, s.features, active)), s.labels);
  }
  return iou_from_confusion(cm);
}

double subnet_fitness(Network& supernet, const ArchSpec& spec, std::span<const PreparedScene> calib,
                      std::span<const PreparedScene> val) {
  Network sub = extract_subnet(supernet, spec);
  recalibrate_bn(sub, spec, calib);
  return evaluate(sub, spec, val).mean;
}

}  // namespace spvnas
