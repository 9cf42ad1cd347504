#pragma once

#include "ckad/model.hpp"

#include <string>
#include <vector>

namespace ckad {

struct GradcheckConfig {
  bool use_kaa = true;
  bool include_embedder = true;
  bool include_rpp = true;
  bool kaa_normalized = false;
  Eigen::Index blocks = 1;
  double rel_tol = 1e-4;
  double floor = 1e-6;  // denominator floor for the relative error
  double step = 1e-6;   // central-difference step
  std::uint64_t seed = 7;
  /// Adds a bias to one analytic gradient entry; the check must then fail.
  bool corrupt = false;
};

struct GradcheckTensor {
  std::string name;
  Eigen::Index worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradcheckReport {
  std::vector<GradcheckTensor> tensors;
  double max_rel_error = 0.0;
  double rel_tol = 0.0;
  bool passed = false;
  std::size_t checked = 0;
};

/// The tiny configuration: d = 8, m = 8, n = 4 groups of 4 points.
ModelHyper gradcheck_hyper(const GradcheckConfig& cfg);

/// Compares the hand-written gradient of the full training objective with
/// central differences over every trainable parameter.
template <typename Scalar>
GradcheckReport run_gradcheck(const GradcheckConfig& cfg);

}  // namespace ckad
