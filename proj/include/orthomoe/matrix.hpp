// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <vector>

#include "orthomoe/errors.hpp"

namespace orthomoe {

// Dense row-major double matrix; the universal numeric carrier. Shape
// conventions follow W0 in R^{d_out x d_in} with activations as row vectors.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> values) {
    Matrix m(values.size(), values.size() ? values.begin()->size() : 0);
    std::size_t i = 0;
    for (const auto& row : values) {
      if (row.size() != m.cols) throw Error(Error::Code::DimMismatch, "ragged initializer");
      std::size_t j = 0;
      for (double v : row) m(i, j++) = v;
      ++i;
    }
    return m;
  }

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

  bool is_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  void fill(double v) {
    for (double& x : data) x = v;
  }
};

inline void require_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (!a.same_shape(b)) throw Error(Error::Code::DimMismatch, what);
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
  return t;
}

// C = A B
inline Matrix multiply(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) throw Error(Error::Code::DimMismatch, "multiply: inner dims differ");
  Matrix c(a.rows, b.cols);
  const std::size_t n = b.cols;
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* arow = a.data.data() + i * a.cols;
    double* crow = c.data.data() + i * n;
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = arow[k];
      const double* brow = b.data.data() + k * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

// C = A^T B
inline Matrix multiply_at_b(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows) throw Error(Error::Code::DimMismatch, "multiply_at_b: row counts differ");
  Matrix c(a.cols, b.cols);
  const std::size_t n = b.cols;
  for (std::size_t k = 0; k < a.rows; ++k) {
    const double* arow = a.data.data() + k * a.cols;
    const double* brow = b.data.data() + k * n;
    for (std::size_t i = 0; i < a.cols; ++i) {
      const double aki = arow[i];
      double* crow = c.data.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aki * brow[j];
    }
  }
  return c;
}

// C = A B^T
inline Matrix multiply_a_bt(const Matrix& a, const Matrix& b) {
  if (a.cols != b.cols) throw Error(Error::Code::DimMismatch, "multiply_a_bt: col counts differ");
  Matrix c(a.rows, b.rows);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* arow = a.data.data() + i * a.cols;
    for (std::size_t j = 0; j < b.rows; ++j) {
      const double* brow = b.data.data() + j * b.cols;
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) acc += arow[k] * brow[k];
      c(i, j) = acc;
    }
  }
  return c;
}

inline Matrix operator+(const Matrix& a, const Matrix& b) {
  require_shape(a, b, "operator+: shape mismatch");
  Matrix c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.data[i] += b.data[i];
  return c;
}

inline Matrix operator-(const Matrix& a, const Matrix& b) {
  require_shape(a, b, "operator-: shape mismatch");
  Matrix c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.data[i] -= b.data[i];
  return c;
}

inline Matrix operator*(double s, const Matrix& a) {
  Matrix c = a;
  for (double& v : c.data) v *= s;
  return c;
}

inline void add_scaled(Matrix& a, const Matrix& b, double scale) {
  require_shape(a, b, "add_scaled: shape mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) a.data[i] += scale * b.data[i];
}

inline void scale_in_place(Matrix& a, double s) {
  for (double& v : a.data) v *= s;
}

inline double frobenius_norm(const Matrix& a) {
  double acc = 0.0;
  for (double v : a.data) acc += v * v;
  return std::sqrt(acc);
}

inline double max_abs(const Matrix& a) {
  double m = 0.0;
  for (double v : a.data) m = std::max(m, std::abs(v));
  return m;
}

// Frobenius inner product <A, B>.
inline double dot(const Matrix& a, const Matrix& b) {
  require_shape(a, b, "dot: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a.data[i] * b.data[i];
  return acc;
}

}  // namespace orthomoe
