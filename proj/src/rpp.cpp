#include "ckad/rpp.hpp"

namespace ckad {

void PerturbationConfig::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ArgumentError("epsilon must be finite and non-negative");
  if (ascent_steps < 0) throw ArgumentError("ascent_steps must be non-negative");
  if (!(step_size > 0.0 && step_size <= 1.0)) throw ArgumentError("step_size must lie in (0, 1]");
  if (!(lambda_rpp >= 0.0) || !std::isfinite(lambda_rpp)) throw ArgumentError("lambda_rpp must be finite and non-negative");
}

}  // namespace ckad
