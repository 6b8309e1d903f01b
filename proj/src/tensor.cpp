#include "paal/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace paal {

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) {
    if (e == 0) throw std::invalid_argument("tensor extents must be positive: " + to_string(shape));
    n *= e;
  }
  return n;
}

Tensor::Tensor(Shape shape, float fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (element_count(shape_) != data_.size()) {
    throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                " does not match shape " + to_string(shape_));
  }
}

std::size_t Tensor::slice_size() const {
  if (shape_.empty()) throw std::logic_error("slice of a rank-0 tensor");
  return data_.size() / shape_[0];
}

std::span<float> Tensor::slice(std::size_t n) {
  const auto len = slice_size();
  if (n >= shape_[0]) throw std::out_of_range("batch index out of range");
  return std::span<float>(data_).subspan(n * len, len);
}

std::span<const float> Tensor::slice(std::size_t n) const {
  const auto len = slice_size();
  if (n >= shape_[0]) throw std::out_of_range("batch index out of range");
  return std::span<const float>(data_).subspan(n * len, len);
}

void Tensor::fill(float value) { std::fill(data_.begin(), data_.end(), value); }

void Tensor::reshape(Shape shape) {
  if (element_count(shape) != data_.size()) {
    throw std::invalid_argument("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  }
  shape_ = std::move(shape);
}

void Tensor::check_finite(const std::string& what) const {
  for (float v : data_) {
    if (!std::isfinite(v)) throw NumericalError("non-finite value in " + what);
  }
}

}  // namespace paal
