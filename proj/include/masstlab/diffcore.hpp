#pragma once

#include <functional>
#include <string_view>

#include "masstlab/matrix.hpp"

namespace masstlab {

enum class Activation { Tanh, Relu };

Activation activation_from_string(std::string_view s);
std::string_view to_string(Activation a);

// Vectors with norm at or below this are treated as degenerate.
inline constexpr double kNormFloor = 1e-12;

// The primitives an embedding network is composed of. Each kind has a
// matched forward/backward pair below.
struct LayerPrimitive {
  enum class Kind { Affine, Nonlinearity, L2Normalize };
  Kind kind;
  int affine_index = -1;  // which weight/bias pair, for Kind::Affine
};

// Returns v / ||v||; throws NormTooSmall when ||v|| <= kNormFloor.
Vector l2_normalize(std::span<const double> v);

// Row-wise normalization of a feature matrix.
Matrix l2norm_rows(const Matrix& x);

// Exact analytic rule per row: dv = (g - (u . g) u) / ||v|| with u = v/||v||.
Matrix l2norm_rows_backward(const Matrix& raw, const Matrix& upstream);

// y = x * W^T + b with W stored (out x in) row-major.
Matrix affine_forward(const Matrix& x, const double* w, const double* b, int out_dim);

// Accumulates dW (out x in) and db (out) into raw buffers; writes dx when
// non-null. Upstream must have the shape affine_forward produced.
void affine_backward(const Matrix& x, const double* w, int out_dim, const Matrix& upstream,
                     double* dw, double* db, Matrix* dx);

Matrix activation_forward(const Matrix& x, Activation act);

// tanh consumes its own output, relu the pre-activation input.
Matrix activation_backward(const Matrix& pre, const Matrix& post, const Matrix& upstream,
                           Activation act);

// Central-difference gradient oracle:
//   g_i = (L(theta + step e_i) - L(theta - step e_i)) / (2 step).
// Lives here so tests and acceptance checks share one implementation; it is
// independent of the reverse-mode path it is used to check.
Vector finite_diff_grad(const std::function<double(const Vector&)>& loss, const Vector& theta,
                        double step);

}  // namespace masstlab
