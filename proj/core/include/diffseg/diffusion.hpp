// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <torch/torch.h>

#include "diffseg/schedule.hpp"

namespace diffseg {

/// Network output for one input: predicted noise and the per-pixel variance
/// interpolation coefficient, each shaped like the mask channel.
struct DenoiserOutput {
  torch::Tensor eps_hat;  // (1,h,w) or (B,1,h,w)
  torch::Tensor v;        // same shape, values in [0,1]
};

/// Image prior stacked with the noisy mask at step t. The prior channels of
/// `stacked` alias nothing: they are an exact copy of `prior`, checked at
/// construction and again by the trainer every step.
struct ConditionedState {
  torch::Tensor prior;       // (c,h,w)
  torch::Tensor noisy_mask;  // (1,h,w)
  int t = 0;
  torch::Tensor stacked;     // (c+1,h,w), mask last
};

ConditionedState make_conditioned_state(torch::Tensor prior, torch::Tensor noisy_mask, int t);

/// Closed-form noising: sqrt(abar_t)*x0 + sqrt(1-abar_t)*eps. Noise is
/// caller-supplied so the function is pure. Only ever applied to the mask
/// channel; priors are never noised.
torch::Tensor forward_noise(const torch::Tensor& x0, int t, const torch::Tensor& eps,
                            const NoiseSchedule& s);

/// Per-pixel reverse-process variance: log-space interpolation between the
/// posterior variance (v=0) and beta_t (v=1). Uses the clipped posterior
/// variance at t=1.
torch::Tensor sigma_squared(const torch::Tensor& v, int t, const NoiseSchedule& s);

/// One reverse update: (x_t - eps_coef*eps_hat)/sqrt(alpha_t) + sigma_t*z.
/// z is caller-supplied; pass z=0 at the final step.
torch::Tensor reverse_step(const ConditionedState& state, const DenoiserOutput& out,
                           const torch::Tensor& z, const NoiseSchedule& s);

/// Mean squared error over all elements.
torch::Tensor simple_loss(const torch::Tensor& eps, const torch::Tensor& eps_hat);

/// KL between the analytic posterior q(x_{t-1}|x_t,x0) and the model's
/// reverse Gaussian, averaged over pixels (nats). The mean path through
/// eps_hat is detached so the term only trains the variance channel.
torch::Tensor vlb_term(const torch::Tensor& x0, const torch::Tensor& x_t, int t,
                       const DenoiserOutput& out, const NoiseSchedule& s);

inline torch::Tensor hybrid_loss(const torch::Tensor& simple, const torch::Tensor& vlb,
                                 double lambda) {
  return simple + lambda * vlb;
}

/// {0,1} masks map to {-1,+1} for the diffusion process; the inverse maps
/// back to [0,1] with clipping, after which the 0.5 threshold applies.
torch::Tensor mask_to_signal(const torch::Tensor& mask01);
torch::Tensor signal_to_mask(const torch::Tensor& x);

}  // namespace diffseg
