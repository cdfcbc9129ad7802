// SPDX-License-Identifier: Apache-2.0
#include "diffseg/diffusion.hpp"

#include <cmath>
#include <sstream>

#include "diffseg/errors.hpp"

namespace diffseg {

namespace {
void check_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (!a.sizes().equals(b.sizes())) {
    std::ostringstream msg;
    msg << what << ": shape mismatch " << a.sizes() << " vs " << b.sizes();
    throw DataError(msg.str());
  }
}
}  // namespace

ConditionedState make_conditioned_state(torch::Tensor prior, torch::Tensor noisy_mask, int t) {
  if (prior.dim() != 3 || noisy_mask.dim() != 3 || noisy_mask.size(0) != 1)
    throw DataError("conditioned state: prior must be (c,h,w), mask (1,h,w)");
  if (prior.size(1) != noisy_mask.size(1) || prior.size(2) != noisy_mask.size(2))
    throw DataError("conditioned state: spatial dims differ between prior and mask");
  ConditionedState st;
  st.prior = std::move(prior);
  st.noisy_mask = noisy_mask.to(st.prior.dtype());
  st.t = t;
  st.stacked = torch::cat({st.prior, st.noisy_mask}, /*dim=*/0);
  return st;
}

torch::Tensor forward_noise(const torch::Tensor& x0, int t, const torch::Tensor& eps,
                            const NoiseSchedule& s) {
  check_same_shape(x0, eps, "forward_noise");
  const auto c = coefficients_at(s, t);
  return c.sqrt_alpha_bar * x0 + c.sqrt_one_minus_alpha_bar * eps;
}

torch::Tensor sigma_squared(const torch::Tensor& v, int t, const NoiseSchedule& s) {
  const auto c = coefficients_at(s, t);
  const double log_beta = std::log(c.beta);
  const double log_beta_tilde = std::log(clipped_beta_tilde(s, t));
  return torch::exp(v * log_beta + (1.0 - v) * log_beta_tilde);
}

torch::Tensor reverse_step(const ConditionedState& state, const DenoiserOutput& out,
                           const torch::Tensor& z, const NoiseSchedule& s) {
  check_same_shape(state.noisy_mask, out.eps_hat, "reverse_step");
  check_same_shape(state.noisy_mask, z, "reverse_step(z)");
  const auto c = coefficients_at(s, state.t);
  const auto mean = c.inv_sqrt_alpha * (state.noisy_mask - c.eps_coef * out.eps_hat);
  const auto sigma = torch::sqrt(sigma_squared(out.v, state.t, s));
  return mean + sigma * z;
}

torch::Tensor simple_loss(const torch::Tensor& eps, const torch::Tensor& eps_hat) {
  check_same_shape(eps, eps_hat, "simple_loss");
  return (eps_hat - eps).square().mean();
}

torch::Tensor vlb_term(const torch::Tensor& x0, const torch::Tensor& x_t, int t,
                       const DenoiserOutput& out, const NoiseSchedule& s) {
  check_same_shape(x0, x_t, "vlb_term");
  check_same_shape(x0, out.eps_hat, "vlb_term(eps_hat)");
  check_same_shape(x0, out.v, "vlb_term(v)");
  const auto c = coefficients_at(s, t);
  const std::size_t i = static_cast<std::size_t>(t - 1);
  const double abar = s.alpha_bar[i];
  const double abar_prev = (t >= 2) ? s.alpha_bar[i - 1] : 1.0;

  // Analytic posterior q(x_{t-1} | x_t, x0).
  const double q_coef_x0 = std::sqrt(abar_prev) * c.beta / (1.0 - abar);
  const double q_coef_xt = std::sqrt(s.alpha[i]) * (1.0 - abar_prev) / (1.0 - abar);
  const auto q_mean = q_coef_x0 * x0 + q_coef_xt * x_t;
  const double q_logvar = std::log(clipped_beta_tilde(s, t));

  // Model reverse Gaussian; mean detached so only the variance trains here.
  const auto p_mean = c.inv_sqrt_alpha * (x_t - c.eps_coef * out.eps_hat.detach());
  const auto p_logvar =
      out.v * std::log(c.beta) + (1.0 - out.v) * std::log(clipped_beta_tilde(s, t));

  const auto kl = 0.5 * (p_logvar - q_logvar + torch::exp(q_logvar - p_logvar) +
                         (q_mean - p_mean).square() * torch::exp(-p_logvar) - 1.0);
  return kl.mean();
}

torch::Tensor mask_to_signal(const torch::Tensor& mask01) {
  return mask01.to(torch::kFloat32) * 2.0 - 1.0;
}

torch::Tensor signal_to_mask(const torch::Tensor& x) {
  return ((x + 1.0) / 2.0).clamp(0.0, 1.0);
}

}  // namespace diffseg
