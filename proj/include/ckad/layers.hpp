#pragma once

#include "ckad/types.hpp"

#include <cmath>
#include <numbers>

namespace ckad::layers {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kRowNormEps = 1e-12;

// GELU with the exact error-function form.
template <typename Derived>
auto gelu(const Eigen::ArrayBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  const Scalar inv_sqrt2 = static_cast<Scalar>(1.0 / std::numbers::sqrt2);
  return (x * Scalar(0.5) * (Scalar(1) + (x * inv_sqrt2).unaryExpr([](Scalar t) { return std::erf(t); }))).eval();
}

template <typename Derived>
auto gelu_grad(const Eigen::ArrayBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  const Scalar inv_sqrt2 = static_cast<Scalar>(1.0 / std::numbers::sqrt2);
  const Scalar inv_sqrt2pi = static_cast<Scalar>(1.0 / std::sqrt(2.0 * std::numbers::pi));
  return (Scalar(0.5) * (Scalar(1) + (x * inv_sqrt2).unaryExpr([](Scalar t) { return std::erf(t); })) + x * (-x.square() * Scalar(0.5)).exp() * inv_sqrt2pi)
      .eval();
}

template <typename Scalar>
struct LayerNormCache {
  Matrix<Scalar> x_hat;
  Vector<Scalar> inv_std;
};

/// Row-wise layer normalization with gain/offset (1 x d each).
template <typename Scalar, typename G, typename B>
Matrix<Scalar> layer_norm(const Matrix<Scalar>& x, const Eigen::MatrixBase<G>& gain, const Eigen::MatrixBase<B>& bias,
                          LayerNormCache<Scalar>* cache) {
  const Vector<Scalar> mean = x.rowwise().mean();
  Matrix<Scalar> centered = x.colwise() - mean;
  const Vector<Scalar> var = centered.rowwise().squaredNorm() / static_cast<Scalar>(x.cols());
  const Vector<Scalar> inv_std = (var.array() + static_cast<Scalar>(kLayerNormEps)).rsqrt();
  Matrix<Scalar> x_hat = centered.array().colwise() * inv_std.array();
  Matrix<Scalar> out = (x_hat.array().rowwise() * gain.row(0).array()).matrix();
  out.rowwise() += bias.row(0);
  if (cache) {
    cache->x_hat = std::move(x_hat);
    cache->inv_std = inv_std;
  }
  return out;
}

/// Returns dx and accumulates into the gain/offset gradients.
template <typename Scalar, typename G, typename DG, typename DB>
Matrix<Scalar> layer_norm_backward(const LayerNormCache<Scalar>& c, const Eigen::MatrixBase<G>& gain,
                                   const Matrix<Scalar>& d_out, Eigen::MatrixBase<DG>&& d_gain,
                                   Eigen::MatrixBase<DB>&& d_bias) {
  d_gain.row(0) += d_out.cwiseProduct(c.x_hat).colwise().sum();
  d_bias.row(0) += d_out.colwise().sum();
  const Matrix<Scalar> d_hat = d_out.array().rowwise() * gain.row(0).array();
  const auto width = static_cast<Scalar>(d_out.cols());
  const Vector<Scalar> mean_d = d_hat.rowwise().sum() / width;
  const Vector<Scalar> mean_dx = d_hat.cwiseProduct(c.x_hat).rowwise().sum() / width;
  Matrix<Scalar> dx = d_hat;
  dx.colwise() -= mean_d;
  dx -= (c.x_hat.array().colwise() * mean_dx.array()).matrix();
  return dx.array().colwise() * c.inv_std.array();
}

/// x -> scale * x / sqrt(|x|^2 + eps), row-wise. Keeps feature-map inputs on a
/// sphere of fixed radius.
template <typename Scalar>
Matrix<Scalar> scale_rows(const Matrix<Scalar>& x, Scalar scale, Vector<Scalar>* inv_norm_out) {
  const Vector<Scalar> inv_norm = (x.rowwise().squaredNorm().array() + static_cast<Scalar>(kRowNormEps)).rsqrt();
  if (inv_norm_out) *inv_norm_out = inv_norm;
  return (x.array().colwise() * (inv_norm.array() * scale)).matrix();
}

template <typename Scalar>
Matrix<Scalar> scale_rows_backward(const Matrix<Scalar>& x, const Vector<Scalar>& inv_norm, Scalar scale,
                                   const Matrix<Scalar>& d_out) {
  const Vector<Scalar> proj = x.cwiseProduct(d_out).rowwise().sum().cwiseProduct(inv_norm.cwiseAbs2());
  Matrix<Scalar> dx = d_out - (x.array().colwise() * proj.array()).matrix();
  return dx.array().colwise() * (inv_norm.array() * scale);
}

}  // namespace ckad::layers
