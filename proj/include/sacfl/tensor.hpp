#pragma once

#include <cstddef>
#include <vector>

namespace sacfl {

// Dense row-major tensor of 64-bit reals. Rank 1 and 2 cover everything the
// simulator needs; shape is kept generic so flattening stays uniform.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<std::size_t> shape_, std::vector<double> data_);

  static Tensor zeros(std::vector<std::size_t> shape);

  std::size_t size() const { return data.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  double& at(std::size_t r, std::size_t c);
  double at(std::size_t r, std::size_t c) const;

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  bool all_finite() const;
};

// Throws DimensionError unless a and b share a shape.
void require_same_shape(const Tensor& a, const Tensor& b, const char* op);

// Throws NumericalError if t contains NaN/Inf.
void require_finite(const Tensor& t, const char* what);

}  // namespace sacfl
