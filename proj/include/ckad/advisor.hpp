#pragma once

#include "ckad/types.hpp"

#include <cstdint>

namespace ckad {

/// Fast-weight memory of one attention layer. S maps key features to values;
/// it changes only through kaa_update, never through the optimizer.
struct AdvisorState {
  MatrixXd s;  // d x m
  std::uint64_t update_count = 0;
  double alpha = 0.7;
  double beta = 0.7;

  AdvisorState() = default;
  AdvisorState(Eigen::Index d, Eigen::Index m, double alpha_ = 0.7, double beta_ = 0.7)
      : s(MatrixXd::Zero(d, m)), alpha(alpha_), beta(beta_) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ArgumentError("advisor alpha must lie in [0, 1]");
    // beta = 0 freezes the state.
    if (!(beta >= 0.0 && beta <= 1.0)) throw ArgumentError("advisor beta must lie in [0, 1]");
  }

  Eigen::Index dim() const { return s.rows(); }
  Eigen::Index features() const { return s.cols(); }
};

/// 1/2 |S phi(k) - v|^2 - alpha v^T S phi(k)
inline double kaa_loss(const AdvisorState& st, const VectorXd& phi_k, const VectorXd& v) {
  if (phi_k.size() != st.features() || v.size() != st.dim()) throw ArgumentError("kaa_loss: dimension mismatch");
  const VectorXd pred = st.s * phi_k;
  return 0.5 * (pred - v).squaredNorm() - st.alpha * v.dot(pred);
}

/// dL/dS = (S phi) phi^T - (1 + alpha) v phi^T, a d x m matrix.
inline MatrixXd kaa_gradient(const AdvisorState& st, const VectorXd& phi_k, const VectorXd& v) {
  if (phi_k.size() != st.features() || v.size() != st.dim()) throw ArgumentError("kaa_gradient: dimension mismatch");
  return (st.s * phi_k - (1.0 + st.alpha) * v) * phi_k.transpose();
}

/// Batch form of the delta rule. Every token is scored against the pre-update
/// S; v_new = (1 - beta) v_old + beta (1 + alpha) v; the mean of the
/// (v_new - v_old) phi^T contributions is added to S. Rejects non-finite
/// results and leaves the state untouched in that case.
inline AdvisorState kaa_update(const AdvisorState& st, const MatrixXd& phi_k, const MatrixXd& v) {
  if (phi_k.rows() < 1) throw ArgumentError("kaa_update: need at least one token");
  if (phi_k.rows() != v.rows() || phi_k.cols() != st.features() || v.cols() != st.dim())
    throw ArgumentError("kaa_update: dimension mismatch");
  const MatrixXd v_old = phi_k * st.s.transpose();  // n x d
  const MatrixXd v_new = (1.0 - st.beta) * v_old + st.beta * (1.0 + st.alpha) * v;
  AdvisorState out = st;
  out.s += (v_new - v_old).transpose() * phi_k / static_cast<double>(phi_k.rows());
  if (!out.s.allFinite()) throw NumericError("kaa_update produced a non-finite advisor state");
  ++out.update_count;
  return out;
}

inline void apply_kaa_update(AdvisorState& st, const MatrixXd& phi_k, const MatrixXd& v) {
  st = kaa_update(st, phi_k, v);
}

/// O = Phi(Q) S^T. The normalized variant divides row l by sum(phi(q_l)) + stabilizer.
template <typename Scalar>
Matrix<Scalar> kaa_output(const AdvisorState& st, const Matrix<Scalar>& phi_q, bool normalized = false,
                          double stabilizer = 1e-6) {
  if (phi_q.cols() != st.features()) throw ArgumentError("kaa_output: feature width mismatch");
  Matrix<Scalar> out = phi_q * st.s.transpose().template cast<Scalar>();
  if (normalized) {
    const Vector<Scalar> den = phi_q.rowwise().sum().array() + static_cast<Scalar>(stabilizer);
    out = out.array().colwise() / den.array();
  }
  return out;
}

}  // namespace ckad
