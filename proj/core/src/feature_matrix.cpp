#include "spvnas/feature_matrix.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "spvnas/errors.hpp"

namespace spvnas {

FeatureMatrix::FeatureMatrix(std::size_t r, std::size_t c, std::vector<float> values)
    : rows(r), cols(c), data(std::move(values)) {
  if (data.size() != r * c) {
    throw ShapeError("feature matrix data length " + std::to_string(data.size()) +
                     " does not match " + std::to_string(r) + "x" + std::to_string(c));
  }
}

void FeatureMatrix::set_zero() { std::fill(data.begin(), data.end(), 0.0f); }

bool FeatureMatrix::all_finite() const {
  return std::all_of(data.begin(), data.end(), [](float v) { return std::isfinite(v); });
}

FeatureMatrix concat_columns(const FeatureMatrix& a, const FeatureMatrix& b) {
  if (a.rows != b.rows) {
    throw ShapeError("concat: row counts differ (" + std::to_string(a.rows) + " vs " +
                     std::to_string(b.rows) + ")");
  }
  FeatureMatrix out(a.rows, a.cols + b.cols);
  for (std::size_t r = 0; r < a.rows; ++r) {
    std::copy_n(a.row(r), a.cols, out.row(r));
    std::copy_n(b.row(r), b.cols, out.row(r) + a.cols);
  }
  return out;
}

void split_columns(const FeatureMatrix& m, std::size_t left_cols, FeatureMatrix& left,
                   FeatureMatrix& right) {
  if (left_cols > m.cols) throw ShapeError("split: left width exceeds matrix width");
  left = FeatureMatrix(m.rows, left_cols);
  right = FeatureMatrix(m.rows, m.cols - left_cols);
  for (std::size_t r = 0; r < m.rows; ++r) {
    std::copy_n(m.row(r), left_cols, left.row(r));
    std::copy_n(m.row(r) + left_cols, m.cols - left_cols, right.row(r));
  }
}

void add_inplace(FeatureMatrix& dst, const FeatureMatrix& src) {
  if (dst.rows != src.rows || dst.cols != src.cols) {
    throw ShapeError("add: shape " + std::to_string(dst.rows) + "x" + std::to_string(dst.cols) +
                     " vs " + std::to_string(src.rows) + "x" + std::to_string(src.cols));
  }
  for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

double dot(const FeatureMatrix& a, const FeatureMatrix& b) {
  if (a.data.size() != b.data.size()) throw ShapeError("dot: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) s += double(a.data[i]) * double(b.data[i]);
  return s;
}

}  // namespace spvnas
