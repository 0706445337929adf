#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace spvnas {

// counts[t * classes + p]: points with true class t predicted as p.
struct ConfusionMatrix {
  int classes = 0;
  std::vector<std::uint64_t> counts;

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int c) : classes(c), counts(static_cast<std::size_t>(c) * c, 0) {}

  std::uint64_t at(int truth, int pred) const {
    return counts[static_cast<std::size_t>(truth) * classes + pred];
  }
  // Points whose label equals ignore_index are skipped.
  void add(std::span<const std::int32_t> predictions, std::span<const std::int32_t> labels,
           std::optional<std::int32_t> ignore_index = std::nullopt);
  void merge(const ConfusionMatrix& other);
};

struct IouResult {
  // NaN for classes absent from both predictions and labels.
  std::vector<double> per_class;
  std::vector<bool> present;
  double mean = 0.0;  // over present classes only
};

IouResult iou_from_confusion(const ConfusionMatrix& cm);
IouResult miou(std::span<const std::int32_t> predictions, std::span<const std::int32_t> labels,
               int classes, std::optional<std::int32_t> ignore_index = std::nullopt);

}  // namespace spvnas
