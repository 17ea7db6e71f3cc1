#include "sacfl/tensor.hpp"

#include <cmath>
#include <string>

#include "sacfl/errors.hpp"

namespace sacfl {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t s : shape) n *= s;
  return n;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape_, std::vector<double> data_)
    : shape(std::move(shape_)), data(std::move(data_)) {
  if (shape_product(shape) != data.size()) {
    throw DimensionError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape product " +
                         std::to_string(shape_product(shape)));
  }
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
  std::size_t n = shape_product(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

std::size_t Tensor::rows() const {
  if (shape.empty()) throw DimensionError("rows() on rank-0 tensor");
  return shape[0];
}

std::size_t Tensor::cols() const {
  if (shape.size() == 1) return 1;
  if (shape.size() != 2) throw DimensionError("cols() needs a rank-2 tensor");
  return shape[1];
}

double& Tensor::at(std::size_t r, std::size_t c) {
  return data[r * cols() + c];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  return data[r * cols() + c];
}

bool Tensor::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": tensor shapes differ");
  }
}

void require_finite(const Tensor& t, const char* what) {
  if (!t.all_finite()) {
    throw NumericalError(std::string("non-finite value in ") + what);
  }
}

}  // namespace sacfl
