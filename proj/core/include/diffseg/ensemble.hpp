// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <vector>

#include "diffseg/denoiser.hpp"
#include "diffseg/schedule.hpp"

namespace diffseg {

struct SamplingOptions {
  bool noise_at_final_step = false;  // literal reading of the sampling loop
  bool unbiased_variance = true;     // n-1 denominator
  int jobs = 1;                      // concurrent ensemble members
};

/// n sampled masks for one image plus their reductions. Values in [0,1];
/// binary_mask is mean_map > 0.5 (strict: an exact 0.5 tie is background).
struct EnsembleSummary {
  torch::Tensor samples;       // (n,1,h,w) float32
  torch::Tensor mean_map;      // (1,h,w) float32
  torch::Tensor variance_map;  // (1,h,w) float32
  torch::Tensor binary_mask;   // (1,h,w) uint8
  int n = 0;
  std::vector<std::uint64_t> seeds;
};

/// One full reverse trajectory: start from seeded standard normal, stack the
/// prior with the current noisy mask at every step, predict, and apply the
/// reverse update with fresh noise (none at the final step unless
/// configured). The returned mask is mapped to [0,1].
/// Throws NumericError naming the offending step if values go non-finite.
torch::Tensor sample_mask(const PredictFn& predict_fn, const torch::Tensor& prior,
                          const NoiseSchedule& schedule, std::uint64_t seed,
                          const SamplingOptions& opts = {});

/// Reduces a (n,1,h,w) stack of samples in [0,1] to mean/variance/binary
/// maps. Accumulation runs in double; variance uses the n-1 denominator
/// unless configured otherwise (all-zero map for n=1).
EnsembleSummary reduce_samples(const torch::Tensor& samples, const SamplingOptions& opts = {});

/// Runs sample_mask with seeds base_seed+0..n-1 and reduces. Sample i of a
/// larger ensemble with the same base seed is bitwise the same tensor, which
/// is what makes prefix reuse and the size-vs-Dice curve cheap and exact.
EnsembleSummary build_ensemble(const PredictFn& predict_fn, const torch::Tensor& prior,
                               const NoiseSchedule& schedule, int n, std::uint64_t base_seed,
                               const SamplingOptions& opts = {});

bool is_empty(const torch::Tensor& binary_mask);

struct EnsembleCurvePoint {
  int n;
  double dice;
};

/// Dice of the n-prefix ensemble against gt for each requested size. Sizes
/// must be ascending; samples are drawn once at the largest size.
std::vector<EnsembleCurvePoint> ensemble_curve(const PredictFn& predict_fn,
                                               const torch::Tensor& prior,
                                               const torch::Tensor& gt_mask,
                                               const NoiseSchedule& schedule,
                                               const std::vector<int>& sizes,
                                               std::uint64_t base_seed,
                                               const SamplingOptions& opts = {});

/// Writes sample_###.arr, mean.arr, variance.arr, binary.arr, a summary.json
/// sidecar (n, seeds, threshold, schedule hash, estimator, empty flag), and
/// 8-bit grayscale previews mean.pgm / variance.pgm with min/max sidecars
/// (mean scaled over [0,1], variance over [0, 0.25*n/(n-1)]).
void save_ensemble_summary(const std::filesystem::path& dir, const EnsembleSummary& summary,
                           const NoiseSchedule& schedule, const SamplingOptions& opts);

}  // namespace diffseg
