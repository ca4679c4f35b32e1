#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace repmet::diff {

/// Dense row-major 2-D array of doubles. Vectors are 1×n rows, scalars 1×1.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data);
  Tensor(std::initializer_list<std::initializer_list<double>> rows);

  static Tensor scalar(double v) { return Tensor(1, 1, v); }
  static Tensor row(std::vector<double> values);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::span<double> row_span(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row_span(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  const std::vector<double>& values() const noexcept { return data_; }

  /// Scalar value of a 1×1 tensor.
  double item() const;

  bool same_shape(const Tensor& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  std::string shape_str() const;

  void fill(double v);
  /// Same data, new shape; element count must match.
  Tensor reshaped(std::size_t rows, std::size_t cols) const;

  bool operator==(const Tensor& other) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

}  // namespace repmet::diff
