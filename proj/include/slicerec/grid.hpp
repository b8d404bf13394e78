#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "slicerec/error.hpp"

namespace slicerec {

using Dims3 = std::array<std::size_t, 3>;

inline std::string dims_str(const Dims3& d) {
  return "(" + std::to_string(d[0]) + "," + std::to_string(d[1]) + "," + std::to_string(d[2]) + ")";
}

/// Dense row-major voxel grid; the last index varies fastest.
template <class T>
class Grid3 {
 public:
  using value_type = T;

  Grid3() = default;
  explicit Grid3(Dims3 dims, T fill = T{}) : dims_(dims), cells_(dims[0] * dims[1] * dims[2], fill) {}
  Grid3(Dims3 dims, std::vector<T> cells) : dims_(dims), cells_(std::move(cells)) {
    if (cells_.size() != dims[0] * dims[1] * dims[2]) {
      throw DimensionError("grid payload does not match dims " + dims_str(dims));
    }
  }

  const Dims3& dims() const { return dims_; }
  std::size_t dim(std::size_t a) const { return dims_[a]; }
  std::size_t size() const { return cells_.size(); }
  bool empty() const { return cells_.empty(); }

  std::size_t index(std::size_t i, std::size_t j, std::size_t k) const { return (i * dims_[1] + j) * dims_[2] + k; }
  Dims3 coords(std::size_t idx) const {
    return {idx / (dims_[1] * dims_[2]), (idx / dims_[2]) % dims_[1], idx % dims_[2]};
  }

  T& operator()(std::size_t i, std::size_t j, std::size_t k) { return cells_[index(i, j, k)]; }
  const T& operator()(std::size_t i, std::size_t j, std::size_t k) const { return cells_[index(i, j, k)]; }
  T& operator[](std::size_t idx) { return cells_[idx]; }
  const T& operator[](std::size_t idx) const { return cells_[idx]; }

  std::vector<T>& cells() { return cells_; }
  const std::vector<T>& cells() const { return cells_; }

  bool operator==(const Grid3&) const = default;

 private:
  Dims3 dims_{0, 0, 0};
  std::vector<T> cells_;
};

/// Row-major 2D grid; used for single slices.
template <class T>
class Grid2 {
 public:
  Grid2() = default;
  Grid2(std::size_t rows, std::size_t cols, T fill = T{}) : rows_(rows), cols_(cols), cells_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return cells_.size(); }

  T& operator()(std::size_t r, std::size_t c) { return cells_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return cells_[r * cols_ + c]; }
  T& operator[](std::size_t idx) { return cells_[idx]; }
  const T& operator[](std::size_t idx) const { return cells_[idx]; }

  std::vector<T>& cells() { return cells_; }
  const std::vector<T>& cells() const { return cells_; }

  bool operator==(const Grid2&) const = default;

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<T> cells_;
};

/// Slice j along the second dimension: a (N1, N3) grid.
template <class T>
Grid2<T> slice_dim2(const Grid3<T>& g, std::size_t j) {
  if (j >= g.dim(1)) throw DimensionError("slice index out of range");
  Grid2<T> out(g.dim(0), g.dim(2));
  for (std::size_t i = 0; i < g.dim(0); ++i)
    for (std::size_t k = 0; k < g.dim(2); ++k) out(i, k) = g(i, j, k);
  return out;
}

/// Sub-box copy starting at `origin` with extent `extent`.
template <class T>
Grid3<T> crop(const Grid3<T>& g, const Dims3& origin, const Dims3& extent) {
  for (int a = 0; a < 3; ++a) {
    if (origin[a] + extent[a] > g.dim(a)) throw DimensionError("crop exceeds grid bounds");
  }
  Grid3<T> out(extent);
  for (std::size_t i = 0; i < extent[0]; ++i)
    for (std::size_t j = 0; j < extent[1]; ++j)
      for (std::size_t k = 0; k < extent[2]; ++k) out(i, j, k) = g(origin[0] + i, origin[1] + j, origin[2] + k);
  return out;
}

/// Calls fn(neighbor_index) for each in-bounds face neighbour of idx.
template <class T, class Fn>
void for_each_face_neighbor(const Grid3<T>& g, std::size_t idx, Fn&& fn) {
  const auto [i, j, k] = g.coords(idx);
  const std::size_t s1 = g.dim(1) * g.dim(2), s2 = g.dim(2);
  if (i > 0) fn(idx - s1);
  if (i + 1 < g.dim(0)) fn(idx + s1);
  if (j > 0) fn(idx - s2);
  if (j + 1 < g.dim(1)) fn(idx + s2);
  if (k > 0) fn(idx - 1);
  if (k + 1 < g.dim(2)) fn(idx + 1);
}

}  // namespace slicerec
