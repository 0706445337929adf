#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace spvnas {

// A named parameter or buffer owned by some layer. `grad` is null for
// non-trainable buffers such as batch-norm running statistics.
struct TensorSlot {
  std::string name;
  std::vector<std::size_t> shape;
  float* value = nullptr;
  float* grad = nullptr;

  std::size_t numel() const {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }
};

using TensorList = std::vector<TensorSlot>;

}  // namespace spvnas
