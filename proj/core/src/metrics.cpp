#include "spvnas/metrics.hpp"

#include <limits>
#include <string>

#include "spvnas/errors.hpp"

namespace spvnas {

void ConfusionMatrix::add(std::span<const std::int32_t> predictions,
                          std::span<const std::int32_t> labels,
                          std::optional<std::int32_t> ignore_index) {
  if (predictions.size() != labels.size()) {
    throw ShapeError("confusion matrix: " + std::to_string(predictions.size()) +
                     " predictions for " + std::to_string(labels.size()) + " labels");
  }
  for (std::size_t k = 0; k < labels.size(); ++k) {
    const std::int32_t t = labels[k];
    if (ignore_index && t == *ignore_index) continue;
    const std::int32_t p = predictions[k];
    if (t < 0 || t >= classes || p < 0 || p >= classes) {
      throw DataError("class id out of range at point " + std::to_string(k) + " (label " +
                      std::to_string(t) + ", prediction " + std::to_string(p) + ")");
    }
    ++counts[static_cast<std::size_t>(t) * classes + p];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes != classes) throw ShapeError("confusion matrices disagree on class count");
  for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
}

IouResult iou_from_confusion(const ConfusionMatrix& cm) {
  IouResult r;
  r.per_class.assign(cm.classes, std::numeric_limits<double>::quiet_NaN());
  r.present.assign(cm.classes, false);
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < cm.classes; ++c) {
    std::uint64_t tp = cm.at(c, c), fp = 0, fn = 0;
    for (int o = 0; o < cm.classes; ++o) {
      if (o == c) continue;
      fp += cm.at(o, c);
      fn += cm.at(c, o);
    }
    const std::uint64_t denom = tp + fp + fn;
    if (denom == 0) continue;
    r.present[c] = true;
    r.per_class[c] = double(tp) / double(denom);
    sum += r.per_class[c];
    ++present;
  }
  r.mean = present ? sum / present : 0.0;
  return r;
}

IouResult miou(std::span<const std::int32_t> predictions, std::span<const std::int32_t> labels,
               int classes, std::optional<std::int32_t> ignore_index) {
  ConfusionMatrix cm(classes);
  cm.add(predictions, labels, ignore_index);
  return iou_from_confusion(cm);
}

}  // namespace spvnas
