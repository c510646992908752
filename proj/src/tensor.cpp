#include "fiberlab/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>

#include "fiberlab/errors.hpp"

namespace fiberlab {

namespace {
std::size_t element_count(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) {
    if (d == 0) throw DomainError("tensor: dimensions must be positive");
    n *= d;
  }
  return n;
}
}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), values_(element_count(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (values_.size() != element_count(shape_)) throw DomainError("tensor: value count does not match shape");
}

std::size_t Tensor::rows() const {
  if (shape_.size() != 2) throw DomainError("tensor: rows() on a non-matrix");
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (shape_.size() != 2) throw DomainError("tensor: cols() on a non-matrix");
  return shape_[1];
}

bool Tensor::all_finite() const {
  for (double v : values_)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace fiberlab
