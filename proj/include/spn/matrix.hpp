// SPDX-License-Identifier: Apache-2.0

#ifndef SPN_MATRIX_HPP
#define SPN_MATRIX_HPP

#include <cstddef>
#include <span>
#include <vector>

#include "spn/tensor.hpp"

namespace spn {

/// Plain row-major [rows x cols] value matrix for data that never enters a
/// gradient tape (features, targets, predictions).
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
  bool empty() const { return rows == 0 || cols == 0; }

  Tensor to_tensor() const { return Tensor::from({rows, cols}, data); }
  static Matrix from_tensor(const Tensor& t) {
    Matrix m(t.shape().at(0), t.shape().at(1));
    m.data.assign(t.data().begin(), t.data().end());
    return m;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

}  // namespace spn

#endif  // SPN_MATRIX_HPP
