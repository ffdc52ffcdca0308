#pragma once

// Dense numeric kernels shared by the autodiff tape and by inference-only
// code. Everything is a free function over Eigen expressions so callers can
// pass blocks, maps or plain matrices.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <limits>

#include "agvas/types.hpp"

namespace agvas::kernels {

/// Row-wise softmax with max subtraction. Rows that are entirely -inf are
/// not supported (every row must have at least one finite entry).
template <typename Derived>
MatrixT<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  MatrixT<Scalar> y(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const Scalar m = x.row(r).maxCoeff();
    Scalar total = 0;
    for (Index c = 0; c < x.cols(); ++c) {
      const Scalar e = std::exp(x(r, c) - m);
      y(r, c) = e;
      total += e;
    }
    y.row(r) /= total;
  }
  return y;
}

template <std::floating_point Scalar>
Scalar sigmoid(Scalar v) {
  if (v >= 0) {
    return Scalar(1) / (Scalar(1) + std::exp(-v));
  }
  const Scalar e = std::exp(v);
  return e / (Scalar(1) + e);
}

template <typename Derived>
MatrixT<typename Derived::Scalar> sigmoid(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return x.unaryExpr([](Scalar v) { return sigmoid(v); });
}

/// tanh-approximation GELU and its derivative.
template <std::floating_point Scalar>
Scalar gelu(Scalar v) {
  constexpr Scalar k = Scalar(0.7978845608028654);  // sqrt(2/pi)
  return Scalar(0.5) * v * (Scalar(1) + std::tanh(k * (v + Scalar(0.044715) * v * v * v)));
}

template <std::floating_point Scalar>
Scalar gelu_derivative(Scalar v) {
  constexpr Scalar k = Scalar(0.7978845608028654);
  const Scalar inner = k * (v + Scalar(0.044715) * v * v * v);
  const Scalar t = std::tanh(inner);
  const Scalar d_inner = k * (Scalar(1) + Scalar(3 * 0.044715) * v * v);
  return Scalar(0.5) * (Scalar(1) + t) + Scalar(0.5) * v * (Scalar(1) - t * t) * d_inner;
}

/// Per-row normalization to zero mean / unit variance followed by an affine
/// map. `normalized` and `inv_std` receive intermediates when non-null.
template <typename Derived, typename GainDerived, typename BiasDerived>
MatrixT<typename Derived::Scalar> layer_norm_rows(const Eigen::MatrixBase<Derived>& x,
                                                  const Eigen::MatrixBase<GainDerived>& gain,
                                                  const Eigen::MatrixBase<BiasDerived>& bias,
                                                  typename Derived::Scalar eps,
                                                  MatrixT<typename Derived::Scalar>* normalized = nullptr,
                                                  RowVectorT<typename Derived::Scalar>* inv_std = nullptr) {
  using Scalar = typename Derived::Scalar;
  const Index rows = x.rows();
  const Index cols = x.cols();
  MatrixT<Scalar> xhat(rows, cols);
  RowVectorT<Scalar> istd(rows);
  for (Index r = 0; r < rows; ++r) {
    const Scalar mean = x.row(r).mean();
    const Scalar var = (x.row(r).array() - mean).square().mean();
    istd(r) = Scalar(1) / std::sqrt(var + eps);
    xhat.row(r) = (x.row(r).array() - mean) * istd(r);
  }
  MatrixT<Scalar> y(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    y.row(r) = xhat.row(r).cwiseProduct(gain.derived().reshaped().transpose()) +
               bias.derived().reshaped().transpose();
  }
  if (normalized) *normalized = std::move(xhat);
  if (inv_std) *inv_std = std::move(istd);
  return y;
}

/// Bilinear resize with half-pixel centres and edge clamping.
template <typename Derived>
MatrixT<typename Derived::Scalar> bilinear_resize(const Eigen::MatrixBase<Derived>& src, Index out_rows,
                                                  Index out_cols) {
  using Scalar = typename Derived::Scalar;
  MatrixT<Scalar> out(out_rows, out_cols);
  const double sy = static_cast<double>(src.rows()) / static_cast<double>(out_rows);
  const double sx = static_cast<double>(src.cols()) / static_cast<double>(out_cols);
  for (Index r = 0; r < out_rows; ++r) {
    double fy = (static_cast<double>(r) + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(src.rows() - 1));
    const Index y0 = static_cast<Index>(std::floor(fy));
    const Index y1 = std::min<Index>(y0 + 1, src.rows() - 1);
    const Scalar wy = static_cast<Scalar>(fy - static_cast<double>(y0));
    for (Index c = 0; c < out_cols; ++c) {
      double fx = (static_cast<double>(c) + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(src.cols() - 1));
      const Index x0 = static_cast<Index>(std::floor(fx));
      const Index x1 = std::min<Index>(x0 + 1, src.cols() - 1);
      const Scalar wx = static_cast<Scalar>(fx - static_cast<double>(x0));
      // a + w*(b-a) keeps constant regions exactly constant.
      const Scalar top = src(y0, x0) + wx * (src(y0, x1) - src(y0, x0));
      const Scalar bottom = src(y1, x0) + wx * (src(y1, x1) - src(y1, x0));
      out(r, c) = top + wy * (bottom - top);
    }
  }
  return out;
}

}  // namespace agvas::kernels
