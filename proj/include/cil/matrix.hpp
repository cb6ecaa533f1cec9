#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace cil {

/// Dense row-major matrix of 64-bit floats. The universal carrier for
/// inputs, activations, logits, probabilities and gradients.
class Matrix {
public:
  Matrix() = default;

  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  void fill(double v) { data_.assign(data_.size(), v); }

  bool operator==(const Matrix& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
  }

private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// C = A * B
Matrix matmul(const Matrix& a, const Matrix& b);

/// C = A * B^T (rows of B are contiguous, the hot layout for linear layers)
Matrix matmul_transposed(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& m);

/// y += alpha * x, shapes must match.
void axpy(double alpha, const Matrix& x, Matrix& y);

} // namespace cil
