#include "repmet/diff/tensor.hpp"

#include <algorithm>

#include "repmet/core/error.hpp"

namespace repmet::diff {

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("Tensor: " + std::to_string(data_.size()) + " values for shape [" +
                     std::to_string(rows) + "x" + std::to_string(cols) + "]");
  }
}

Tensor::Tensor(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ ? rows.begin()->size() : 0;
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw ShapeError("Tensor: ragged initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Tensor Tensor::row(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor(1, n, std::move(values));
}

double Tensor::item() const {
  if (rows_ != 1 || cols_ != 1) throw ShapeError("Tensor::item on shape " + shape_str());
  return data_[0];
}

std::string Tensor::shape_str() const {
  return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]";
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(std::size_t rows, std::size_t cols) const {
  if (rows * cols != data_.size()) {
    throw ShapeError("reshape " + shape_str() + " -> [" + std::to_string(rows) + "x" +
                     std::to_string(cols) + "]");
  }
  return Tensor(rows, cols, data_);
}

}  // namespace repmet::diff
