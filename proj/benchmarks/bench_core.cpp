// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "diffseg/data.hpp"
#include "diffseg/denoiser.hpp"
#include "diffseg/diffusion.hpp"
#include "diffseg/ensemble.hpp"
#include "diffseg/metrics.hpp"
#include "diffseg/schedule.hpp"

using namespace diffseg;

namespace {

torch::Tensor bench_mask(std::int64_t side, std::uint64_t seed) {
  auto gen = at::detail::createCPUGenerator(seed);
  return torch::rand({side, side}, gen, torch::kFloat32).gt(0.6).to(torch::kUInt8);
}

void BM_LinearSchedule(benchmark::State& state) {
  for (auto _ : state) {
    auto s = linear_schedule(static_cast<int>(state.range(0)), 1e-4, 0.02);
    benchmark::DoNotOptimize(s.alpha_bar.data());
  }
}
BENCHMARK(BM_LinearSchedule)->Arg(100)->Arg(1000)->Arg(10000);

void BM_ForwardNoise(benchmark::State& state) {
  const auto s = linear_schedule(100, 1e-3, 0.2);
  auto gen = at::detail::createCPUGenerator(1);
  const auto side = state.range(0);
  auto x0 = torch::rand({1, side, side}, gen, torch::kFloat32) * 2 - 1;
  auto eps = torch::randn({1, side, side}, gen, torch::kFloat32);
  for (auto _ : state) {
    auto xt = forward_noise(x0, 50, eps, s);
    benchmark::DoNotOptimize(xt.data_ptr());
  }
}
BENCHMARK(BM_ForwardNoise)->Arg(64)->Arg(224);

void BM_ReverseStep(benchmark::State& state) {
  const auto s = linear_schedule(100, 1e-3, 0.2);
  auto gen = at::detail::createCPUGenerator(2);
  const auto side = state.range(0);
  auto prior = torch::rand({4, side, side}, gen, torch::kFloat32);
  auto x = torch::randn({1, side, side}, gen, torch::kFloat32);
  auto st = make_conditioned_state(prior, x, 50);
  DenoiserOutput out{torch::randn({1, side, side}, gen, torch::kFloat32),
                     torch::rand({1, side, side}, gen, torch::kFloat32)};
  auto z = torch::randn({1, side, side}, gen, torch::kFloat32);
  for (auto _ : state) {
    auto prev = reverse_step(st, out, z, s);
    benchmark::DoNotOptimize(prev.data_ptr());
  }
}
BENCHMARK(BM_ReverseStep)->Arg(64)->Arg(224);

void BM_Dice(benchmark::State& state) {
  auto a = bench_mask(state.range(0), 3), b = bench_mask(state.range(0), 4);
  for (auto _ : state) benchmark::DoNotOptimize(dice(a, b));
}
BENCHMARK(BM_Dice)->Arg(64)->Arg(224);

void BM_Hd95(benchmark::State& state) {
  auto a = bench_mask(state.range(0), 5), b = bench_mask(state.range(0), 6);
  for (auto _ : state) benchmark::DoNotOptimize(hd95(a, b));
}
BENCHMARK(BM_Hd95)->Arg(64)->Arg(224);

void BM_PercentileClip(benchmark::State& state) {
  auto gen = at::detail::createCPUGenerator(7);
  auto x = torch::randn({state.range(0), state.range(0)}, gen, torch::kFloat64);
  for (auto _ : state) {
    auto y = percentile_clip(x, 1.0, 99.0);
    benchmark::DoNotOptimize(y.data_ptr());
  }
}
BENCHMARK(BM_PercentileClip)->Arg(64)->Arg(224);

void BM_UnetForward(benchmark::State& state) {
  torch::set_num_threads(1);
  DenoiserConfig cfg;
  cfg.in_channels = 5;
  cfg.base_channels = static_cast<int>(state.range(0));
  cfg.channel_multipliers = {1, 2, 2};
  cfg.attention_resolutions = {16};
  cfg.image_size = 64;
  UNet net(cfg);
  net->eval();
  torch::NoGradGuard g;
  auto gen = at::detail::createCPUGenerator(8);
  auto x = torch::randn({1, 5, 64, 64}, gen, torch::kFloat32);
  auto t = torch::tensor({50.0f});
  for (auto _ : state) {
    auto out = predict(net, x, t);
    benchmark::DoNotOptimize(out.eps_hat.data_ptr());
  }
}
BENCHMARK(BM_UnetForward)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_GenerateSlice(benchmark::State& state) {
  SyntheticSpec spec;
  spec.count = 1;
  spec.height = spec.width = state.range(0);
  for (auto _ : state) {
    spec.seed++;
    auto slices = generate_synthetic(spec);
    benchmark::DoNotOptimize(slices.front().prior.data_ptr());
  }
}
BENCHMARK(BM_GenerateSlice)->Arg(64)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
