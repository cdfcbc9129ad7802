// SPDX-License-Identifier: Apache-2.0
#include "diffseg/ensemble.hpp"

#include <fstream>
#include <future>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

#include "diffseg/array_io.hpp"
#include "diffseg/diffusion.hpp"
#include "diffseg/errors.hpp"
#include "diffseg/image_io.hpp"
#include "diffseg/metrics.hpp"

namespace diffseg {

torch::Tensor sample_mask(const PredictFn& predict_fn, const torch::Tensor& prior,
                          const NoiseSchedule& schedule, std::uint64_t seed,
                          const SamplingOptions& opts) {
  if (prior.dim() != 3) throw DataError("sample_mask: prior must be (c,h,w)");
  const auto h = prior.size(1), w = prior.size(2);
  auto gen = at::detail::createCPUGenerator(seed);
  auto prior_f = prior.to(torch::kFloat32);

  auto x = torch::randn({1, h, w}, gen, torch::kFloat32);
  for (int t = schedule.T; t >= 1; --t) {
    auto state = make_conditioned_state(prior_f, x, t);
    auto tvec = torch::tensor({static_cast<float>(t)});
    auto out = predict_fn(state.stacked.unsqueeze(0), tvec);
    DenoiserOutput item{out.eps_hat.squeeze(0), out.v.squeeze(0)};
    torch::Tensor z;
    if (t == 1 && !opts.noise_at_final_step)
      z = torch::zeros_like(x);
    else
      z = torch::randn({1, h, w}, gen, torch::kFloat32);
    x = reverse_step(state, item, z, schedule);
    if (!torch::isfinite(x).all().item<bool>())
      throw NumericError("sample_mask: non-finite values at step t=" + std::to_string(t));
  }
  return signal_to_mask(x);
}

EnsembleSummary reduce_samples(const torch::Tensor& samples, const SamplingOptions& opts) {
  if (samples.dim() != 4 || samples.size(1) != 1)
    throw DataError("reduce_samples: expected (n,1,h,w) stack");
  const auto n = static_cast<int>(samples.size(0));
  if (n < 1) throw DataError("reduce_samples: empty stack");
  EnsembleSummary s;
  s.n = n;
  s.samples = samples;

  auto as64 = samples.to(torch::kFloat64);
  auto mean = as64.mean(0);
  torch::Tensor var;
  if (n == 1)
    var = torch::zeros_like(mean);
  else
    var = (as64 - mean.unsqueeze(0)).square().sum(0) /
          static_cast<double>(opts.unbiased_variance ? n - 1 : n);
  s.mean_map = mean.to(torch::kFloat32);
  s.variance_map = var.to(torch::kFloat32);
  s.binary_mask = s.mean_map.gt(0.5).to(torch::kUInt8);
  return s;
}

EnsembleSummary build_ensemble(const PredictFn& predict_fn, const torch::Tensor& prior,
                               const NoiseSchedule& schedule, int n, std::uint64_t base_seed,
                               const SamplingOptions& opts) {
  if (n < 1) throw ConfigError("build_ensemble: n must be >= 1");
  std::vector<torch::Tensor> samples(static_cast<std::size_t>(n));
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < n; ++i) seeds.push_back(base_seed + static_cast<std::uint64_t>(i));

  if (opts.jobs <= 1) {
    for (int i = 0; i < n; ++i)
      samples[static_cast<std::size_t>(i)] =
          sample_mask(predict_fn, prior, schedule, seeds[static_cast<std::size_t>(i)], opts);
  } else {
    // members are independent read-only tasks; the reduction below runs in
    // seed order no matter which finishes first
    std::vector<std::future<torch::Tensor>> pending;
    int next = 0;
    while (next < n || !pending.empty()) {
      while (next < n && static_cast<int>(pending.size()) < opts.jobs) {
        const auto seed = seeds[static_cast<std::size_t>(next)];
        pending.push_back(std::async(std::launch::async, [&, seed] {
          return sample_mask(predict_fn, prior, schedule, seed, opts);
        }));
        ++next;
      }
      const int slot = next - static_cast<int>(pending.size());
      samples[static_cast<std::size_t>(slot)] = pending.front().get();
      pending.erase(pending.begin());
    }
  }

  auto s = reduce_samples(torch::stack(samples, 0), opts);
  s.seeds = std::move(seeds);
  return s;
}

bool is_empty(const torch::Tensor& binary_mask) {
  return binary_mask.ne(0).sum().item<std::int64_t>() == 0;
}

std::vector<EnsembleCurvePoint> ensemble_curve(const PredictFn& predict_fn,
                                               const torch::Tensor& prior,
                                               const torch::Tensor& gt_mask,
                                               const NoiseSchedule& schedule,
                                               const std::vector<int>& sizes,
                                               std::uint64_t base_seed,
                                               const SamplingOptions& opts) {
  if (sizes.empty()) throw ConfigError("ensemble_curve: no sizes");
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] < 1) throw ConfigError("ensemble_curve: sizes must be >= 1");
    if (i > 0 && sizes[i] <= sizes[i - 1]) throw ConfigError("ensemble_curve: sizes must ascend");
  }

  const auto full = build_ensemble(predict_fn, prior, schedule, sizes.back(), base_seed, opts);
  std::vector<EnsembleCurvePoint> out;
  out.reserve(sizes.size());
  for (const int n : sizes) {
    auto mean = full.samples.narrow(0, 0, n).to(torch::kFloat64).mean(0);
    auto binary = mean.gt(0.5).to(torch::kUInt8);
    out.push_back({n, dice(binary, gt_mask)});
  }
  return out;
}

void save_ensemble_summary(const std::filesystem::path& dir, const EnsembleSummary& summary,
                           const NoiseSchedule& schedule, const SamplingOptions& opts) {
  std::filesystem::create_directories(dir);
  for (int i = 0; i < summary.n; ++i) {
    std::ostringstream name;
    name << "sample_" << std::setw(3) << std::setfill('0') << i << ".arr";
    save_array(dir / name.str(), summary.samples[i]);
  }
  save_array(dir / "mean.arr", summary.mean_map);
  save_array(dir / "variance.arr", summary.variance_map);
  save_array(dir / "binary.arr", summary.binary_mask);

  const double var_hi = summary.n > 1
                            ? 0.25 * static_cast<double>(summary.n) / (summary.n - 1)
                            : 0.25;
  save_pgm_scaled(dir / "mean.pgm", summary.mean_map, 0.0, 1.0);
  save_pgm_scaled(dir / "variance.pgm", summary.variance_map, 0.0, var_hi);

  nlohmann::json sidecar{{"n", summary.n},
                         {"seeds", summary.seeds},
                         {"threshold", 0.5},
                         {"schedule", schedule_hash(schedule)},
                         {"variance_estimator", opts.unbiased_variance ? "unbiased" : "biased"},
                         {"empty", is_empty(summary.binary_mask)}};
  std::ofstream out(dir / "summary.json", std::ios::trunc);
  if (!out) throw IoError("cannot write summary.json in " + dir.string());
  out << sidecar.dump(2) << '\n';
}

}  // namespace diffseg
