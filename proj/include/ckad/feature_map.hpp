#pragma once

#include "ckad/log.hpp"
#include "ckad/types.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

namespace ckad {

/// Exponents of the positive random features are clamped to this range.
inline constexpr double kPhiExponentClamp = 30.0;

/// Positive random features: phi(x) = exp(-|x|^2/2) [exp(w_1.x) ... exp(w_m.x)] / sqrt(m),
/// with rows w_i ~ N(0, I_d) drawn once from the seed.
template <typename Scalar>
class RandomFeatureMap {
 public:
  RandomFeatureMap() = default;
  RandomFeatureMap(Eigen::Index input_dim, Eigen::Index features, std::uint64_t seed)
      : seed_(seed), projections_(features, input_dim) {
    if (features < 1) throw ArgumentError("random feature map needs m >= 1");
    if (input_dim < 1) throw ArgumentError("random feature map needs d >= 1");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    for (Eigen::Index r = 0; r < features; ++r)
      for (Eigen::Index c = 0; c < input_dim; ++c) projections_(r, c) = static_cast<Scalar>(nd(rng));
  }

  Eigen::Index features() const { return projections_.rows(); }
  Eigen::Index input_dim() const { return projections_.cols(); }
  std::uint64_t seed() const { return seed_; }
  /// m x d, one projection per row.
  const Matrix<Scalar>& projections() const { return projections_; }

  template <typename Other>
  RandomFeatureMap<Other> cast() const {
    RandomFeatureMap<Other> out;
    out.seed_ = seed_;
    out.projections_ = projections_.template cast<Other>();
    return out;
  }

 private:
  template <typename>
  friend class RandomFeatureMap;

  std::uint64_t seed_ = 0;
  Matrix<Scalar> projections_;
};

namespace detail {

template <typename Scalar, typename Derived>
Matrix<Scalar> phi_exponents(const Eigen::MatrixBase<Derived>& rows, const RandomFeatureMap<Scalar>& map) {
  Matrix<Scalar> e = rows * map.projections().transpose();
  const Vector<Scalar> half_sq = rows.rowwise().squaredNorm() / Scalar(2);
  e.colwise() -= half_sq;
  return e;
}

}  // namespace detail

/// Row-wise feature map: n x d -> n x m. The exponent w.x - |x|^2/2 is
/// formed in log space and clamped to +-30 before exponentiation.
template <typename Scalar, typename Derived>
Matrix<Scalar> phi_rows(const Eigen::MatrixBase<Derived>& rows, const RandomFeatureMap<Scalar>& map) {
  if (rows.cols() != map.input_dim()) throw ArgumentError("phi: input width does not match the feature map");
  Matrix<Scalar> e = detail::phi_exponents(rows, map);
  const auto bound = static_cast<Scalar>(kPhiExponentClamp);
  if ((e.array().abs() > bound).any()) {
    log::warn("kernel_attention", "phi_exponent_clamped");
    e = e.cwiseMax(-bound).cwiseMin(bound);
  }
  return (e.array().exp() / std::sqrt(static_cast<Scalar>(map.features()))).matrix();
}

template <typename Scalar>
Vector<Scalar> phi(const Vector<Scalar>& x, const RandomFeatureMap<Scalar>& map) {
  return phi_rows(x.transpose(), map).transpose();
}

/// Backward of phi_rows: d(phi_i)/dx = phi_i (w_i - x); clamped entries pass no gradient.
template <typename Scalar, typename D1, typename D2, typename D3>
Matrix<Scalar> phi_rows_backward(const Eigen::MatrixBase<D1>& rows, const Eigen::MatrixBase<D2>& phi_out,
                                 const Eigen::MatrixBase<D3>& d_phi, const RandomFeatureMap<Scalar>& map) {
  Matrix<Scalar> g = d_phi.cwiseProduct(phi_out);
  const Matrix<Scalar> e = detail::phi_exponents(rows, map);
  const auto bound = static_cast<Scalar>(kPhiExponentClamp);
  g = (e.array().abs() > bound).select(Scalar(0), g.array()).matrix();
  Matrix<Scalar> dx = g * map.projections();
  dx -= (rows.array().colwise() * g.rowwise().sum().array()).matrix();
  return dx;
}

}  // namespace ckad
