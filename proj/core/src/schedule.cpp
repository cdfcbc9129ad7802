// SPDX-License-Identifier: Apache-2.0
#include "diffseg/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "diffseg/errors.hpp"
#include "diffseg/rng.hpp"

namespace diffseg {

NoiseSchedule schedule_from_betas(const std::vector<double>& betas) {
  if (betas.empty()) throw ConfigError("schedule: need at least one step");
  NoiseSchedule s;
  s.T = static_cast<int>(betas.size());
  s.beta = betas;
  s.alpha.resize(betas.size());
  s.alpha_bar.resize(betas.size());
  s.posterior_beta_tilde.resize(betas.size());

  double abar_prev = 1.0;  // alpha_bar_0
  for (std::size_t i = 0; i < betas.size(); ++i) {
    const double b = betas[i];
    if (!(b > 0.0 && b < 1.0)) {
      std::ostringstream msg;
      msg << "schedule: beta[" << i << "] = " << b << " outside (0,1)";
      throw ConfigError(msg.str());
    }
    s.alpha[i] = 1.0 - b;
    s.alpha_bar[i] = abar_prev * s.alpha[i];
    s.posterior_beta_tilde[i] = b * (1.0 - abar_prev) / (1.0 - s.alpha_bar[i]);
    abar_prev = s.alpha_bar[i];
  }
  return s;
}

NoiseSchedule linear_schedule(int T, double beta_start, double beta_end) {
  if (T < 1) throw ConfigError("linear_schedule: T must be >= 1");
  if (!(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end))
    throw ConfigError("linear_schedule: need 0 < beta_start <= beta_end < 1");

  std::vector<double> betas(static_cast<std::size_t>(T));
  if (T == 1) {
    betas[0] = beta_start;
  } else {
    const double step = (beta_end - beta_start) / static_cast<double>(T - 1);
    for (int i = 0; i < T; ++i) betas[static_cast<std::size_t>(i)] = beta_start + step * i;
    betas.back() = beta_end;  // endpoint exact regardless of rounding
  }
  return schedule_from_betas(betas);
}

std::pair<double, double> scaled_endpoints(int T, double beta_start, double beta_end,
                                           EndpointScaling mode) {
  if (T < 1) throw ConfigError("scaled_endpoints: T must be >= 1");
  const bool scale = mode == EndpointScaling::On || (mode == EndpointScaling::Auto && T < 1000);
  if (!scale) return {beta_start, beta_end};
  const double factor = 1000.0 / static_cast<double>(T);
  const double lo = std::min(beta_start * factor, 0.999);
  const double hi = std::min(beta_end * factor, 0.999);
  return {lo, hi};
}

namespace {
void check_step(const NoiseSchedule& s, int t) {
  if (t < 1 || t > s.T) {
    std::ostringstream msg;
    msg << "step t=" << t << " outside 1.." << s.T;
    throw ConfigError(msg.str());
  }
}
}  // namespace

StepCoefficients coefficients_at(const NoiseSchedule& s, int t) {
  check_step(s, t);
  const std::size_t i = static_cast<std::size_t>(t - 1);
  const double abar = s.alpha_bar[i];
  return StepCoefficients{
      .sqrt_alpha_bar = std::sqrt(abar),
      .sqrt_one_minus_alpha_bar = std::sqrt(1.0 - abar),
      .inv_sqrt_alpha = 1.0 / std::sqrt(s.alpha[i]),
      .eps_coef = (1.0 - s.alpha[i]) / std::sqrt(1.0 - abar),
      .beta_tilde = s.posterior_beta_tilde[i],
      .beta = s.beta[i],
  };
}

double clipped_beta_tilde(const NoiseSchedule& s, int t) {
  check_step(s, t);
  const double v = (t == 1 && s.T >= 2) ? s.posterior_beta_tilde[1]
                                        : s.posterior_beta_tilde[static_cast<std::size_t>(t - 1)];
  return std::max(v, 1e-20);
}

std::string schedule_hash(const NoiseSchedule& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* p, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  const std::int64_t T64 = s.T;
  feed(&T64, sizeof(T64));
  feed(s.beta.data(), s.beta.size() * sizeof(double));
  std::ostringstream out;
  out << std::hex;
  out.width(16);
  out.fill('0');
  out << h;
  return out.str();
}

}  // namespace diffseg
