#pragma once

#include "ckad/log.hpp"
#include "ckad/model.hpp"
#include "ckad/optimizer.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace ckad {

struct PerturbationConfig {
  double epsilon = 0.1;    // radius of the L2 ball over the perturbed parameters
  int ascent_steps = 1;
  double step_size = 0.5;  // fraction of epsilon per ascent step
  double lambda_rpp = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Gaussian draw over `range`, rescaled to norm epsilon / 2; zero elsewhere.
template <typename Scalar>
Vector<Scalar> sample_perturbation(Eigen::Index param_count, ParamRange range, double epsilon, std::uint64_t seed) {
  if (!(epsilon >= 0.0)) throw ArgumentError("epsilon must be non-negative");
  Vector<Scalar> delta = Vector<Scalar>::Zero(param_count);
  if (epsilon == 0.0 || range.size() == 0) return delta;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Vector<double> draw(range.size());
  for (Eigen::Index i = 0; i < draw.size(); ++i) draw(i) = nd(rng);
  draw *= 0.5 * epsilon / draw.norm();
  delta.segment(range.begin, range.size()) = draw.cast<Scalar>();
  return delta;
}

template <typename Scalar>
struct RppResult {
  Scalar loss = 0;          // L at the final perturbation
  Scalar initial_loss = 0;  // L at the sampled perturbation
  Vector<Scalar> delta;
  std::vector<Scalar> trace;  // loss after the sample and after every ascent step
  std::vector<Matrix<Scalar>> perturbed_outputs;
  std::vector<ForwardCache<Scalar>> perturbed_caches;
};

namespace detail {

template <typename Scalar>
Scalar perturbed_gap(const Model<Scalar>& model, const Vector<Scalar>& theta_pert,
                     const std::vector<Matrix<Scalar>>& inputs, const std::vector<Matrix<Scalar>>& base,
                     std::vector<Matrix<Scalar>>& outputs, std::vector<ForwardCache<Scalar>>& caches) {
  outputs.resize(inputs.size());
  caches.resize(inputs.size());
  Scalar total = 0;
  Eigen::Index tokens = 0;
  for (std::size_t b = 0; b < inputs.size(); ++b) {
    outputs[b] = model.forward(theta_pert, inputs[b], Mode::eval, &caches[b]);
    total += (base[b] - outputs[b]).squaredNorm();
    tokens += inputs[b].rows();
  }
  return total / static_cast<Scalar>(tokens);
}

}  // namespace detail

/// max over |delta| <= eps of mean_tokens |h(theta, x) - h(theta + delta, x)|^2 by
/// projected ascent along the normalized gradient. A step that would lower the
/// objective is halved until it does not (up to 12 times) or skipped, so the
/// trace is non-decreasing. `base_outputs` are h(theta, x) for each input.
template <typename Scalar>
RppResult<Scalar> rpp_loss(const Model<Scalar>& model, const Vector<Scalar>& theta,
                           const std::vector<Matrix<Scalar>>& inputs, const std::vector<Matrix<Scalar>>& base_outputs,
                           const PerturbationConfig& cfg, ParamRange range) {
  cfg.validate();
  if (inputs.size() != base_outputs.size()) throw ArgumentError("rpp_loss: inputs and base outputs differ in count");
  RppResult<Scalar> res;
  res.delta = sample_perturbation<Scalar>(theta.size(), range, cfg.epsilon, cfg.seed);
  Eigen::Index tokens = 0;
  for (const auto& x : inputs) tokens += x.rows();

  Vector<Scalar> theta_pert = theta + res.delta;
  Scalar current =
      detail::perturbed_gap(model, theta_pert, inputs, base_outputs, res.perturbed_outputs, res.perturbed_caches);
  res.initial_loss = current;
  res.trace.push_back(current);
  if (cfg.epsilon == 0.0) return res;

  const double eps = cfg.epsilon;
  for (int step = 0; step < cfg.ascent_steps; ++step) {
    Vector<Scalar> grad = Vector<Scalar>::Zero(theta.size());
    bool finite = true;
    try {
      for (std::size_t b = 0; b < inputs.size(); ++b) {
        const Matrix<Scalar> d_out =
            (res.perturbed_outputs[b] - base_outputs[b]) * (Scalar(2) / static_cast<Scalar>(tokens));
        model.backward(theta_pert, res.perturbed_caches[b], d_out, grad);
      }
    } catch (const NumericError&) {
      finite = false;
    }
    Vector<double> g = grad.segment(range.begin, range.size()).template cast<double>();
    if (!finite || !g.allFinite()) {
      log::warn("rpp", "nonfinite_ascent_gradient", "falling back to the sampled perturbation");
      res.delta = sample_perturbation<Scalar>(theta.size(), range, cfg.epsilon, cfg.seed);
      theta_pert = theta + res.delta;
      res.loss = detail::perturbed_gap(model, theta_pert, inputs, base_outputs, res.perturbed_outputs,
                                       res.perturbed_caches);
      return res;
    }
    const double gnorm = g.norm();
    if (gnorm == 0.0) break;

    double len = cfg.step_size * eps;
    bool accepted = false;
    for (int tries = 0; tries < 12 && !accepted; ++tries, len *= 0.5) {
      Vector<double> cand = res.delta.segment(range.begin, range.size()).template cast<double>() + (len / gnorm) * g;
      const double cn = cand.norm();
      if (cn > eps) cand *= eps / cn;
      Vector<Scalar> delta = Vector<Scalar>::Zero(theta.size());
      delta.segment(range.begin, range.size()) = cand.cast<Scalar>();
      // float rounding can push the norm a hair past the ball
      const double dn = delta.template cast<double>().norm();
      if (dn > eps) delta *= static_cast<Scalar>(eps / dn);
      std::vector<Matrix<Scalar>> outs;
      std::vector<ForwardCache<Scalar>> caches;
      const Vector<Scalar> cand_theta = theta + delta;
      const Scalar value = detail::perturbed_gap(model, cand_theta, inputs, base_outputs, outs, caches);
      if (std::isfinite(static_cast<double>(value)) && value >= current) {
        accepted = true;
        current = value;
        res.delta = std::move(delta);
        theta_pert = cand_theta;
        res.perturbed_outputs = std::move(outs);
        res.perturbed_caches = std::move(caches);
      }
    }
    res.trace.push_back(current);
  }
  res.loss = current;
  return res;
}

/// Convenience overload that computes the unperturbed outputs itself.
template <typename Scalar>
RppResult<Scalar> rpp_loss(const Model<Scalar>& model, const Vector<Scalar>& theta,
                           const std::vector<Matrix<Scalar>>& inputs, const PerturbationConfig& cfg, ParamRange range) {
  std::vector<Matrix<Scalar>> base;
  for (const auto& x : inputs) base.push_back(model.forward(theta, x, Mode::eval));
  return rpp_loss(model, theta, inputs, base, cfg, range);
}

template <typename Scalar>
struct ObjectiveResult {
  Scalar total = 0;
  Scalar recon = 0;
  Scalar rpp = 0;
  Vector<Scalar> delta;                       // perturbation the rpp term was evaluated at
  std::vector<ForwardCache<Scalar>> caches;   // train-mode caches at theta
  std::vector<Matrix<Scalar>> d_inputs;       // d total / d inputs
  std::vector<Matrix<Scalar>> d_targets;      // d total / d targets
};

struct ObjectiveOptions {
  bool gradient = true;
  /// Hold the perturbation fixed instead of searching for it.
  bool use_fixed_delta = false;
};

/// total = mean_b recon(target_b, h(theta, input_b)) + lambda * rpp. The rpp term
/// is differentiated with its perturbation held constant. Gradients accumulate
/// into `grad` (full parameter vector).
template <typename Scalar>
ObjectiveResult<Scalar> composite_objective(const Model<Scalar>& model, const Vector<Scalar>& theta,
                                            const std::vector<Matrix<Scalar>>& inputs,
                                            const std::vector<Matrix<Scalar>>& targets,
                                            const PerturbationConfig& cfg, ParamRange range,
                                            const ObjectiveOptions& opt, Vector<Scalar>* grad,
                                            const Vector<Scalar>* fixed_delta = nullptr) {
  if (inputs.size() != targets.size() || inputs.empty()) throw ArgumentError("objective: need matching, non-empty batches");
  const std::size_t batch = inputs.size();
  ObjectiveResult<Scalar> res;
  res.caches.resize(batch);
  std::vector<Matrix<Scalar>> outputs(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    outputs[b] = model.forward(theta, inputs[b], Mode::train, &res.caches[b]);
    res.recon += recon_loss(targets[b], outputs[b]);
  }
  res.recon /= static_cast<Scalar>(batch);
  if (!std::isfinite(static_cast<double>(res.recon))) throw NumericError("non-finite reconstruction loss");

  Eigen::Index tokens = 0;
  for (const auto& x : inputs) tokens += x.rows();

  const bool with_rpp = cfg.lambda_rpp > 0.0 && cfg.epsilon > 0.0;
  std::vector<Matrix<Scalar>> pert_out;
  std::vector<ForwardCache<Scalar>> pert_caches;
  if (with_rpp) {
    if (opt.use_fixed_delta) {
      if (!fixed_delta) throw ArgumentError("objective: fixed perturbation requested but not given");
      res.delta = *fixed_delta;
      res.rpp = detail::perturbed_gap(model, Vector<Scalar>(theta + res.delta), inputs, outputs, pert_out, pert_caches);
    } else {
      auto r = rpp_loss(model, theta, inputs, outputs, cfg, range);
      res.rpp = r.loss;
      res.delta = std::move(r.delta);
      pert_out = std::move(r.perturbed_outputs);
      pert_caches = std::move(r.perturbed_caches);
    }
  } else {
    res.delta = Vector<Scalar>::Zero(theta.size());
  }
  const auto lambda = static_cast<Scalar>(cfg.lambda_rpp);
  res.total = res.recon + (with_rpp ? lambda * res.rpp : Scalar(0));
  if (!opt.gradient || grad == nullptr) return res;

  res.d_inputs.resize(batch);
  res.d_targets.resize(batch);
  const Vector<Scalar> theta_pert = theta + res.delta;
  for (std::size_t b = 0; b < batch; ++b) {
    const auto count = static_cast<Scalar>(targets[b].size()) * static_cast<Scalar>(batch);
    Matrix<Scalar> d_out = (outputs[b] - targets[b]) * (Scalar(2) / count);
    res.d_targets[b] = -d_out;
    Matrix<Scalar> d_pert;
    if (with_rpp) {
      const Matrix<Scalar> gap = (outputs[b] - pert_out[b]) * (Scalar(2) * lambda / static_cast<Scalar>(tokens));
      d_out += gap;
      d_pert = -gap;
    }
    res.d_inputs[b] = model.backward(theta, res.caches[b], d_out, *grad);
    if (with_rpp) res.d_inputs[b] += model.backward(theta_pert, pert_caches[b], d_pert, *grad);
  }
  return res;
}

}  // namespace ckad
