#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>

#include "taca/errors.hpp"
#include "taca/rng.hpp"

namespace taca {

using Index = Eigen::Index;

/// Dense row-major matrix. Rows are tokens throughout the library.
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixD = Matrix<double>;
using MatrixF = Matrix<float>;
using VectorD = Vector<double>;

inline std::string shape_str(Index rows, Index cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

template <typename Derived>
std::string shape_str(const Eigen::DenseBase<Derived>& m) {
  return shape_str(m.rows(), m.cols());
}

template <typename A, typename B>
void require_same_shape(const Eigen::DenseBase<A>& a, const Eigen::DenseBase<B>& b,
                        const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(what) + ": " + shape_str(a) + " vs " + shape_str(b));
  }
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.derived().array().isFinite().all();
}

/// Matrix product with a shape check. Eigen's blocked GEMM is single-threaded
/// here and its blocking depends only on the operand sizes, so the summation
/// order is fixed for given dimensions.
template <typename A, typename B>
Matrix<typename A::Scalar> matmul(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + shape_str(a) + " x " + shape_str(b));
  }
  Matrix<typename A::Scalar> out(a.rows(), b.cols());
  out.noalias() = a * b;
  return out;
}

/// In-place row softmax with per-row max subtraction.
template <typename Derived>
void softmax_rows_inplace(Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  for (Index i = 0; i < m.rows(); ++i) {
    auto row = m.row(i);
    if (!row.allFinite()) {
      throw NumericError("softmax_rows: non-finite entry in row " + std::to_string(i));
    }
    const Scalar peak = row.maxCoeff();
    row = (row.array() - peak).exp().matrix();
    row /= row.sum();
  }
}

template <typename Derived>
Matrix<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& m) {
  Matrix<typename Derived::Scalar> out = m;
  softmax_rows_inplace(out);
  return out;
}

/// i.i.d. standard normal entries, drawn in row-major order.
template <typename Scalar = double>
Matrix<Scalar> randn(Index rows, Index cols, Rng& rng) {
  if (rows <= 0 || cols <= 0) {
    throw DomainError("randn: dimensions must be positive, got " + shape_str(rows, cols));
  }
  Matrix<Scalar> out(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) out(i, j) = static_cast<Scalar>(rng.normal());
  }
  return out;
}

/// Central-difference gradient of a scalar function of a matrix.
template <typename F>
MatrixD finite_diff_grad(F&& f, const MatrixD& x, double eps) {
  if (!(eps > 0.0)) throw DomainError("finite_diff_grad: eps must be positive");
  MatrixD probe = x;
  MatrixD grad(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    for (Index j = 0; j < x.cols(); ++j) {
      const double saved = probe(i, j);
      probe(i, j) = saved + eps;
      const double up = f(static_cast<const MatrixD&>(probe));
      probe(i, j) = saved - eps;
      const double down = f(static_cast<const MatrixD&>(probe));
      probe(i, j) = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericError("finite_diff_grad: non-finite function value at entry (" +
                           std::to_string(i) + ", " + std::to_string(j) + ")");
      }
      grad(i, j) = (up - down) / (2.0 * eps);
    }
  }
  return grad;
}

/// max |a - b| / max(|a|, |b|, floor), the usual gradient-check measure.
template <typename A, typename B>
double relative_error(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b,
                      double floor = 1e-8) {
  require_same_shape(a, b, "relative_error");
  const double scale = std::max({a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff(), floor});
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

}  // namespace taca
