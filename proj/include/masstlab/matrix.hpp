#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "masstlab/error.hpp"

namespace masstlab {

using Vector = std::vector<double>;

// Dense row-major matrix of 64-bit floats.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), 0.0) {
    if (r < 0 || c < 0) throw ShapeError("matrix: negative dimension");
  }

  double& operator()(int r, int c) { return data[index(r, c)]; }
  double operator()(int r, int c) const { return data[index(r, c)]; }

  std::span<double> row(int r) { return {data.data() + index(r, 0), static_cast<std::size_t>(cols)}; }
  std::span<const double> row(int r) const {
    return {data.data() + index(r, 0), static_cast<std::size_t>(cols)};
  }

  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

 private:
  std::size_t index(int r, int c) const {
    return static_cast<std::size_t>(r) * static_cast<std::size_t>(cols) + static_cast<std::size_t>(c);
  }
};

// Fixed-order reductions; results do not depend on thread count.
inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> v) { return std::sqrt(dot(v, v)); }

inline void axpy(double a, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

inline void scale(std::span<double> v, double a) {
  for (double& x : v) x *= a;
}

inline double distance2(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

void check_finite(std::span<const double> v, const char* what);
void check_finite(const Matrix& m, const char* what);

}  // namespace masstlab
