#pragma once

#include "ckad/types.hpp"

#include <cmath>

namespace ckad {

/// Contiguous slice of the flat parameter vector.
struct ParamRange {
  Eigen::Index begin = 0;
  Eigen::Index end = 0;
  Eigen::Index size() const { return end - begin; }
};

/// Adaptive-moment optimizer with decoupled weight decay. Only the slice
/// given at construction is ever touched.
template <typename Scalar>
class AdamW {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
  };

  AdamW(ParamRange range, Options opt) : range_(range), opt_(opt), m_(Vector<double>::Zero(range.size())),
                                         v_(Vector<double>::Zero(range.size())) {}

  void step(Vector<Scalar>& theta, const Vector<Scalar>& grad, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (Eigen::Index i = 0; i < range_.size(); ++i) {
      const Eigen::Index p = range_.begin + i;
      const double g = static_cast<double>(grad(p));
      m_(i) = opt_.beta1 * m_(i) + (1.0 - opt_.beta1) * g;
      v_(i) = opt_.beta2 * v_(i) + (1.0 - opt_.beta2) * g * g;
      double w = static_cast<double>(theta(p));
      w -= lr * opt_.weight_decay * w;
      w -= lr * (m_(i) / c1) / (std::sqrt(v_(i) / c2) + opt_.eps);
      theta(p) = static_cast<Scalar>(w);
    }
  }

  long steps() const { return t_; }

 private:
  ParamRange range_;
  Options opt_;
  Vector<double> m_, v_;
  long t_ = 0;
};

}  // namespace ckad
