// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace diffseg {

/// Precomputed diffusion noise schedule.
///
/// Indexing convention, used by every public operation in this project:
/// step arguments `t` are 1-based (t in 1..T, matching the usual process
/// notation), internal storage is 0-based (beta[0] is beta_1). This is the
/// only place the mapping is defined; callers never subtract one themselves.
struct NoiseSchedule {
  int T = 0;
  std::vector<double> beta;                  // forward process variances
  std::vector<double> alpha;                 // 1 - beta
  std::vector<double> alpha_bar;             // running product of alpha
  std::vector<double> posterior_beta_tilde;  // beta_t*(1-abar_{t-1})/(1-abar_t), abar_0=1
};

/// Per-step coefficient bundle for the closed-form noising and the reverse
/// update. `eps_coef` is (1-alpha_t)/sqrt(1-alpha_bar_t).
struct StepCoefficients {
  double sqrt_alpha_bar;
  double sqrt_one_minus_alpha_bar;
  double inv_sqrt_alpha;
  double eps_coef;
  double beta_tilde;
  double beta;
};

/// Builds a schedule from an explicit beta sequence. Validates
/// 0 < beta_t < 1 per entry.
NoiseSchedule schedule_from_betas(const std::vector<double>& betas);

/// Arithmetic progression from beta_start to beta_end inclusive over T steps.
/// Requires T >= 1 and 0 < beta_start <= beta_end < 1.
NoiseSchedule linear_schedule(int T, double beta_start, double beta_end);

enum class EndpointScaling { Auto, On, Off };

/// Applies the 1000/T endpoint rescaling used when running schedules shorter
/// than the reference length. Auto enables scaling iff T < 1000. Scaled
/// endpoints are clamped to at most 0.999 so very short schedules stay valid.
std::pair<double, double> scaled_endpoints(int T, double beta_start, double beta_end,
                                           EndpointScaling mode);

/// Coefficients at 1-based step t. Throws ConfigError when t is out of range.
StepCoefficients coefficients_at(const NoiseSchedule& s, int t);

/// Posterior variance with the degenerate first step clipped: at t=1 the
/// exact value is 0 (log undefined), so beta_tilde_2 is substituted; a 1e-20
/// floor covers the T=1 schedule where no second step exists.
double clipped_beta_tilde(const NoiseSchedule& s, int t);

/// FNV-1a over (T, beta bytes); identifies the schedule in output sidecars.
std::string schedule_hash(const NoiseSchedule& s);

}  // namespace diffseg
