#include "masstlab/diffcore.hpp"

#include <cmath>
#include <string>

#include "masstlab/kernels.hpp"
#include "masstlab/textio.hpp"

namespace masstlab {

void check_finite(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw Error(std::string(what) + ": non-finite value");
  }
}

void check_finite(const Matrix& m, const char* what) { check_finite(std::span<const double>(m.data), what); }

Activation activation_from_string(std::string_view s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "relu") return Activation::Relu;
  throw ConfigError("diffcore: unknown activation '" + std::string(s) + "'");
}

std::string_view to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "relu"; }

Vector l2_normalize(std::span<const double> v) {
  const double n = norm2(v);
  if (!(n > kNormFloor)) throw NormTooSmall("diffcore: vector norm " + fmt_g17(n) + " at or below floor");
  Vector out(v.begin(), v.end());
  scale(out, 1.0 / n);
  return out;
}

Matrix l2norm_rows(const Matrix& x) {
  Matrix out(x.rows, x.cols);
  for (int i = 0; i < x.rows; ++i) {
    const auto row = x.row(i);
    const double n = norm2(row);
    if (!(n > kNormFloor))
      throw NormTooSmall("diffcore: row " + std::to_string(i) + " norm at or below floor");
    const double inv = 1.0 / n;
    auto dst = out.row(i);
    for (int j = 0; j < x.cols; ++j) dst[j] = row[j] * inv;
  }
  return out;
}

Matrix l2norm_rows_backward(const Matrix& raw, const Matrix& upstream) {
  if (!raw.same_shape(upstream)) throw ShapeError("diffcore: l2norm backward shape mismatch");
  Matrix out(raw.rows, raw.cols);
  for (int i = 0; i < raw.rows; ++i) {
    const auto v = raw.row(i);
    const auto g = upstream.row(i);
    const double n = norm2(v);
    if (!(n > kNormFloor))
      throw NormTooSmall("diffcore: row " + std::to_string(i) + " norm at or below floor");
    const double inv = 1.0 / n;
    double ug = 0.0;
    for (int j = 0; j < raw.cols; ++j) ug += v[j] * inv * g[j];
    auto dst = out.row(i);
    for (int j = 0; j < raw.cols; ++j) dst[j] = (g[j] - ug * v[j] * inv) * inv;
  }
  return out;
}

Matrix affine_forward(const Matrix& x, const double* w, const double* b, int out_dim) {
  Matrix y(x.rows, out_dim);
  kernels::gemm_nt(x.data.data(), w, y.data.data(), x.rows, out_dim, x.cols);
  for (int i = 0; i < y.rows; ++i) {
    auto row = y.row(i);
    for (int j = 0; j < out_dim; ++j) row[j] += b[j];
  }
  return y;
}

void affine_backward(const Matrix& x, const double* w, int out_dim, const Matrix& upstream,
                     double* dw, double* db, Matrix* dx) {
  if (upstream.rows != x.rows || upstream.cols != out_dim)
    throw ShapeError("diffcore: affine backward upstream shape mismatch");
  // dW = G^T x, db = column sums of G, dx = G W.
  kernels::gemm_tn(upstream.data.data(), x.data.data(), dw, out_dim, x.cols, x.rows);
  for (int j = 0; j < out_dim; ++j) {
    double s = 0.0;
    for (int i = 0; i < upstream.rows; ++i) s += upstream(i, j);
    db[j] = s;
  }
  if (dx != nullptr) {
    *dx = Matrix(x.rows, x.cols);
    kernels::gemm_nn(upstream.data.data(), w, dx->data.data(), x.rows, x.cols, out_dim);
  }
}

Matrix activation_forward(const Matrix& x, Activation act) {
  Matrix y(x.rows, x.cols);
  if (act == Activation::Tanh) {
    for (std::size_t i = 0; i < x.data.size(); ++i) y.data[i] = std::tanh(x.data[i]);
  } else {
    for (std::size_t i = 0; i < x.data.size(); ++i) y.data[i] = x.data[i] > 0.0 ? x.data[i] : 0.0;
  }
  return y;
}

Matrix activation_backward(const Matrix& pre, const Matrix& post, const Matrix& upstream,
                           Activation act) {
  if (!pre.same_shape(upstream)) throw ShapeError("diffcore: activation backward shape mismatch");
  Matrix out(pre.rows, pre.cols);
  if (act == Activation::Tanh) {
    for (std::size_t i = 0; i < pre.data.size(); ++i)
      out.data[i] = upstream.data[i] * (1.0 - post.data[i] * post.data[i]);
  } else {
    for (std::size_t i = 0; i < pre.data.size(); ++i)
      out.data[i] = pre.data[i] > 0.0 ? upstream.data[i] : 0.0;
  }
  return out;
}

Vector finite_diff_grad(const std::function<double(const Vector&)>& loss, const Vector& theta,
                        double step) {
  Vector grad(theta.size(), 0.0);
  Vector probe = theta;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    probe[i] = theta[i] + step;
    const double up = loss(probe);
    probe[i] = theta[i] - step;
    const double down = loss(probe);
    probe[i] = theta[i];
    if (!std::isfinite(up) || !std::isfinite(down))
      throw Error("diffcore: non-finite loss during finite differencing");
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

}  // namespace masstlab
