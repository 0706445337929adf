#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace spvnas {

// Row-major block of per-point or per-voxel features.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> data;

  FeatureMatrix() = default;
  FeatureMatrix(std::size_t r, std::size_t c, float fill = 0.0f)
      : rows(r), cols(c), data(r * c, fill) {}
  FeatureMatrix(std::size_t r, std::size_t c, std::vector<float> values);

  float* row(std::size_t r) { return data.data() + r * cols; }
  const float* row(std::size_t r) const { return data.data() + r * cols; }
  std::span<float> row_span(std::size_t r) { return {row(r), cols}; }
  std::span<const float> row_span(std::size_t r) const { return {row(r), cols}; }

  float& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  float operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  bool empty() const { return data.empty(); }
  void set_zero();
  bool all_finite() const;

  bool operator==(const FeatureMatrix&) const = default;
};

// [a | b] column-wise; row counts must agree.
FeatureMatrix concat_columns(const FeatureMatrix& a, const FeatureMatrix& b);
// Splits columns [0, left_cols) and [left_cols, cols).
void split_columns(const FeatureMatrix& m, std::size_t left_cols, FeatureMatrix& left,
                   FeatureMatrix& right);
void add_inplace(FeatureMatrix& dst, const FeatureMatrix& src);
double dot(const FeatureMatrix& a, const FeatureMatrix& b);

}  // namespace spvnas
