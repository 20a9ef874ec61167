// SPDX-License-Identifier: Apache-2.0
//
// Sharpness-aware gradients: take one normalized ascent step of length rho,
// then return the gradient evaluated at the perturbed parameters.

#ifndef MIE_SAM_HPP
#define MIE_SAM_HPP

#include <cmath>
#include <string>

#include "mie/errors.hpp"
#include "mie/linalg.hpp"
#include "mie/nn.hpp"

namespace mie {

struct SamConfig {
  double rho = 0.05;
  double zero_grad_threshold = 1e-12;
};

inline void check_rho(double rho) {
  if (!(rho >= 0.0) || !std::isfinite(rho)) throw ValidationError("sam: rho must be a finite non-negative number");
}

/// rho * g / ||g||_2, with the norm taken over all parameters at once.
/// A gradient whose norm is below `zero_grad_threshold` yields a zero step.
inline GradientSet perturbation(const GradientSet& grad, double rho, double zero_grad_threshold = 1e-12) {
  check_rho(rho);
  if (!grad.finite()) throw NumericError("sam: non-finite gradient");
  GradientSet eps = grad;
  const double n = grad.norm();
  const double scale = n < zero_grad_threshold ? 0.0 : rho / n;
  eps.for_each_block([&](std::span<double> b) {
    for (double& x : b) x *= scale;
  });
  return eps;
}

inline Vector perturbation(const Vector& grad, double rho, double zero_grad_threshold = 1e-12) {
  check_rho(rho);
  if (!all_finite(grad)) throw NumericError("sam: non-finite gradient");
  const double n = norm2(grad);
  const double scale = n < zero_grad_threshold ? 0.0 : rho / n;
  Vector eps = grad;
  for (double& x : eps) x *= scale;
  return eps;
}

inline void add_scaled(Vector& theta, const Vector& offset, double scale) {
  if (theta.size() != offset.size()) throw ValidationError("add_scaled: length mismatch");
  for (std::size_t i = 0; i < theta.size(); ++i) theta[i] += scale * offset[i];
}

struct SamStep {
  double loss = 0.0;  // loss at the unperturbed parameters
  GradientSet gradient;
};

/// Two-pass SAM step for any parameter type with `add_scaled` and
/// `perturbation` overloads. `loss_grad(theta)` must return a pair-like
/// {loss, gradient}. Parameters are restored from a copy, so they are bitwise
/// unchanged on return.
template <class Params, class LossGrad>
auto sam_step_generic(Params& theta, LossGrad&& loss_grad, const SamConfig& config) {
  check_rho(config.rho);
  auto first = loss_grad(theta);
  if (!std::isfinite(first.loss)) throw NumericError("sam: non-finite loss at theta (first pass)");
  if (config.rho == 0.0) return first;
  const auto eps = perturbation(first.gradient, config.rho, config.zero_grad_threshold);
  const Params saved = theta;
  add_scaled(theta, eps, 1.0);
  auto second = loss_grad(theta);
  theta = saved;
  if (!std::isfinite(second.loss)) throw NumericError("sam: non-finite loss at theta+eps (second pass)");
  second.loss = first.loss;
  return second;
}

inline SamStep sam_step(ModalityModel& model, const Batch& batch, const SamConfig& config) {
  auto r = sam_step_generic(model, [&](const ModalityModel& m) { return loss_and_gradient(m, batch); }, config);
  return {r.loss, std::move(r.gradient)};
}

/// Gradient of the batch loss at theta + eps*, the same minibatch for both passes.
inline GradientSet sam_gradient(ModalityModel& model, const Batch& batch, const SamConfig& config) {
  return sam_step(model, batch, config).gradient;
}

}  // namespace mie

#endif  // MIE_SAM_HPP
