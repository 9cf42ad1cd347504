#pragma once

#include "ckad/feature_map.hpp"

namespace ckad {

/// Denominator guard for the normalized kernel attention.
inline constexpr double kAttentionStabilizer = 1e-6;

template <typename Scalar>
struct LinearAttentionCache {
  Matrix<Scalar> phi_q;  // n x m
  Matrix<Scalar> phi_k;  // n x m
  Matrix<Scalar> v;      // n x d
  Matrix<Scalar> kv;     // d x m, sum_i v_i phi(k_i)^T
  Vector<Scalar> k_sum;  // m, sum_j phi(k_j)
  Matrix<Scalar> num;    // n x d
  Vector<Scalar> den;    // n
};

/// Linear-cost kernel attention on precomputed features. One pass builds the
/// d x m summary and the m-vector key sum, a second pass serves every query.
template <typename Scalar>
Matrix<Scalar> linear_attention_features(const Matrix<Scalar>& phi_q, const Matrix<Scalar>& phi_k,
                                         const Matrix<Scalar>& v, Scalar stabilizer,
                                         LinearAttentionCache<Scalar>* cache = nullptr) {
  if (phi_k.rows() != v.rows()) throw ArgumentError("linear_attention: key/value row mismatch");
  if (phi_q.cols() != phi_k.cols()) throw ArgumentError("linear_attention: feature width mismatch");
  Matrix<Scalar> kv = v.transpose() * phi_k;
  Vector<Scalar> k_sum = phi_k.colwise().sum().transpose();
  Matrix<Scalar> num = phi_q * kv.transpose();
  Vector<Scalar> den = (phi_q * k_sum).array() + stabilizer;
  Matrix<Scalar> out = num.array().colwise() / den.array();
  if (cache) {
    cache->phi_q = phi_q;
    cache->phi_k = phi_k;
    cache->v = v;
    cache->kv = std::move(kv);
    cache->k_sum = std::move(k_sum);
    cache->num = std::move(num);
    cache->den = std::move(den);
  }
  return out;
}

template <typename Scalar>
struct LinearAttentionGrad {
  Matrix<Scalar> d_phi_q;
  Matrix<Scalar> d_phi_k;
  Matrix<Scalar> d_v;
};

template <typename Scalar>
LinearAttentionGrad<Scalar> linear_attention_backward(const LinearAttentionCache<Scalar>& c,
                                                      const Matrix<Scalar>& d_out) {
  const Matrix<Scalar> d_num = d_out.array().colwise() / c.den.array();
  const Vector<Scalar> d_den =
      -(d_out.cwiseProduct(c.num).rowwise().sum().array() / c.den.array().square()).matrix();
  LinearAttentionGrad<Scalar> g;
  g.d_phi_q = d_num * c.kv + d_den * c.k_sum.transpose();
  const Matrix<Scalar> d_kv = d_num.transpose() * c.phi_q;  // d x m
  const Vector<Scalar> d_ksum = c.phi_q.transpose() * d_den;
  g.d_v = c.phi_k * d_kv.transpose();
  g.d_phi_k = c.v * d_kv;
  g.d_phi_k.rowwise() += d_ksum.transpose();
  return g;
}

/// o_l = (sum_i v_i phi(k_i)^T) phi(q_l) / (sum_j phi(k_j)^T phi(q_l) + stabilizer)
template <typename Scalar>
Matrix<Scalar> linear_attention(const Matrix<Scalar>& q, const Matrix<Scalar>& k, const Matrix<Scalar>& v,
                                const RandomFeatureMap<Scalar>& map,
                                Scalar stabilizer = static_cast<Scalar>(kAttentionStabilizer)) {
  if (q.rows() != k.rows() || k.rows() != v.rows()) throw ArgumentError("linear_attention: Q, K, V need equal rows");
  return linear_attention_features<Scalar>(phi_rows(q, map), phi_rows(k, map), v, stabilizer);
}

/// kappa(q, k) = phi(q)^T phi(k) for every query/key pair (n x n).
template <typename Scalar>
Matrix<Scalar> kernel_matrix(const Matrix<Scalar>& q, const Matrix<Scalar>& k, const RandomFeatureMap<Scalar>& map) {
  return phi_rows(q, map) * phi_rows(k, map).transpose();
}

/// Quadratic reference: explicit kernel matrix, row-normalized. Test use only.
template <typename Scalar>
Matrix<Scalar> kernel_oracle(const Matrix<Scalar>& q, const Matrix<Scalar>& k, const Matrix<Scalar>& v,
                             const RandomFeatureMap<Scalar>& map, Scalar stabilizer = Scalar(0)) {
  if (q.rows() != k.rows() || k.rows() != v.rows()) throw ArgumentError("kernel_oracle: Q, K, V need equal rows");
  const Matrix<Scalar> phi_q = phi_rows(q, map);
  const Matrix<Scalar> phi_k = phi_rows(k, map);
  Matrix<Scalar> out(q.rows(), v.cols());
  for (Eigen::Index l = 0; l < q.rows(); ++l) {
    Vector<Scalar> acc = Vector<Scalar>::Zero(v.cols());
    Scalar den = stabilizer;
    for (Eigen::Index i = 0; i < k.rows(); ++i) {
      const Scalar kappa = phi_q.row(l).dot(phi_k.row(i));
      acc += kappa * v.row(i).transpose();
      den += kappa;
    }
    out.row(l) = (acc / den).transpose();
  }
  return out;
}

/// Standard softmax attention, o_l = sum_i softmax_i(q_l . k_i) v_i.
template <typename Scalar>
Matrix<Scalar> softmax_oracle(const Matrix<Scalar>& q, const Matrix<Scalar>& k, const Matrix<Scalar>& v) {
  if (q.rows() != k.rows() || k.rows() != v.rows()) throw ArgumentError("softmax_oracle: Q, K, V need equal rows");
  Matrix<Scalar> logits = q * k.transpose();
  const Vector<Scalar> row_max = logits.rowwise().maxCoeff();
  logits.colwise() -= row_max;
  Matrix<Scalar> w = logits.array().exp();
  const Vector<Scalar> row_sum = w.rowwise().sum();
  w = w.array().colwise() / row_sum.array();
  return w * v;
}

}  // namespace ckad
