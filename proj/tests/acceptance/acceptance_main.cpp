// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite. Each criterion prints one PASS/FAIL line; the process
// exits nonzero if the requested criterion fails. Criterion 6 trains the
// desk-scale model into --workdir; criterion 7 reuses that checkpoint.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "diffseg/commands.hpp"
#include "diffseg/diffusion.hpp"
#include "diffseg/ensemble.hpp"
#include "diffseg/metrics.hpp"
#include "diffseg/trainer.hpp"

using namespace diffseg;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void expect(bool ok, const std::string& what) {
  std::cout << (ok ? "  [ok]   " : "  [FAIL] ") << what << "\n";
  if (!ok) ++g_failures;
}

void banner(int k, const std::string& title) {
  std::cout << "criterion " << k << ": " << title << "\n";
}

void verdict(int k) {
  std::cout << (g_failures == 0 ? "[PASS] criterion " : "[FAIL] criterion ") << k << "\n";
}

// ---------------------------------------------------------------- 1
void criterion_1() {
  banner(1, "schedule invariants and left-fold oracle");
  for (int T : {1, 10, 100, 1000}) {
    const auto s = linear_schedule(T, 1e-4, 0.02);
    bool invariants = true, oracle_ok = true;
    double acc = 1.0;
    for (int i = 0; i < T; ++i) {
      invariants &= s.beta[i] > 0 && s.beta[i] < 1;
      if (i > 0) invariants &= s.beta[i] >= s.beta[i - 1] && s.alpha_bar[i] < s.alpha_bar[i - 1];
      invariants &= s.alpha_bar[i] > 0 && s.alpha_bar[i] < 1;
      invariants &= s.posterior_beta_tilde[i] >= 0 && s.posterior_beta_tilde[i] <= s.beta[i];
      acc *= 1.0 - s.beta[i];
      oracle_ok &= std::abs(s.alpha_bar[i] - acc) <= 1e-12 * std::abs(acc);
    }
    expect(invariants, "invariants hold for T=" + std::to_string(T));
    expect(oracle_ok, "alpha_bar matches the left-fold oracle to 1e-12 for T=" + std::to_string(T));
  }
}

// ---------------------------------------------------------------- 2
void criterion_2() {
  banner(2, "forward-process Monte Carlo moments (3 pairs, 10k draws)");
  const auto s = linear_schedule(1000, 1e-4, 0.02);
  auto gen = at::detail::createCPUGenerator(2024);
  const int draws = 10000;
  for (int pair = 0; pair < 3; ++pair) {
    auto x0 = (torch::rand({1, 16, 16}, gen, torch::kFloat64) * 2.0 - 1.0);
    const int t = 50 + static_cast<int>(torch::randint(0, 900, {1}, gen).item<std::int64_t>());
    const auto c = coefficients_at(s, t);
    auto acc = torch::zeros_like(x0);
    auto acc_sq = torch::zeros_like(x0);
    for (int i = 0; i < draws; ++i) {
      auto eps = torch::randn({1, 16, 16}, gen, torch::kFloat64);
      auto xt = forward_noise(x0, t, eps, s);
      acc += xt;
      acc_sq += xt * xt;
    }
    auto mean = acc / draws;
    auto var = acc_sq / draws - mean * mean;
    const double one_minus_abar = 1.0 - s.alpha_bar[t - 1];
    const double se = std::sqrt(one_minus_abar / draws);
    const double mean_err = (mean - c.sqrt_alpha_bar * x0).abs().max().item<double>();
    const double var_err = std::abs(var.mean().item<double>() - one_minus_abar);
    std::ostringstream tag;
    tag << "pair " << pair << " (t=" << t << ")";
    expect(mean_err < 3.0 * se, tag.str() + ": per-pixel mean within 3 standard errors");
    expect(var_err < 0.02 * one_minus_abar, tag.str() + ": variance within 2%");
  }
}

// ---------------------------------------------------------------- 3
void criterion_3() {
  banner(3, "oracle-denoiser collapse over 100 random cases");
  const auto s = linear_schedule(1000, 1e-4, 0.02);
  auto gen = at::detail::createCPUGenerator(33);
  auto prior = torch::zeros({4, 16, 16}, torch::kFloat64);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    auto x0 = torch::randn({1, 16, 16}, gen, torch::kFloat64);
    const int t = 2 + static_cast<int>(torch::randint(0, s.T - 1, {1}, gen).item<std::int64_t>());
    auto eps = torch::zeros_like(x0);  // the oracle predicts the true (zero) noise
    auto xt = forward_noise(x0, t, eps, s);
    auto state = make_conditioned_state(prior, xt, t);
    DenoiserOutput out{eps, torch::zeros_like(x0)};
    auto prev = reverse_step(state, out, torch::zeros_like(x0), s);
    auto expected = std::sqrt(s.alpha_bar[t - 2]) * x0;
    const double rel = (prev - expected).abs().max().item<double>() /
                       expected.abs().max().item<double>();
    worst = std::max(worst, rel);
  }
  std::ostringstream tag;
  tag << "max relative error " << worst;
  expect(worst < 1e-6, tag.str() + " < 1e-6");
}

// ---------------------------------------------------------------- 4
void criterion_4() {
  banner(4, "metric identities and the HD95 brute-force oracle");
  std::mt19937_64 rng(44);
  auto random_mask = [&rng](std::int64_t h, std::int64_t w, double p) {
    auto t = torch::zeros({h, w}, torch::kUInt8);
    std::bernoulli_distribution coin(p);
    for (std::int64_t r = 0; r < h; ++r)
      for (std::int64_t c = 0; c < w; ++c)
        if (coin(rng)) t[r][c] = 1;
    return t;
  };

  bool identity_ok = true;
  for (int i = 0; i < 1000; ++i) {
    auto a = random_mask(12, 12, 0.4), b = random_mask(12, 12, 0.4);
    const double d = dice(a, b), j = jaccard(a, b);
    identity_ok &= std::abs(d - 2.0 * j / (1.0 + j)) <= 1e-12;
  }
  expect(identity_ok, "dice = 2J/(1+J) to 1e-12 on 1000 random pairs");

  auto boundary = [](const torch::Tensor& m) {
    const auto h = m.size(0), w = m.size(1);
    auto at = [&](std::int64_t r, std::int64_t c) -> bool {
      if (r < 0 || c < 0 || r >= h || c >= w) return false;
      return m[r][c].item<std::uint8_t>() != 0;
    };
    std::vector<std::pair<int, int>> out;
    for (std::int64_t r = 0; r < h; ++r)
      for (std::int64_t c = 0; c < w; ++c)
        if (at(r, c) && (!at(r - 1, c) || !at(r + 1, c) || !at(r, c - 1) || !at(r, c + 1)))
          out.emplace_back(static_cast<int>(r), static_cast<int>(c));
    return out;
  };

  bool hd_ok = true;
  int compared = 0;
  for (int i = 0; i < 200; ++i) {
    const auto h = 4 + static_cast<std::int64_t>(rng() % 13);
    const auto w = 4 + static_cast<std::int64_t>(rng() % 13);
    auto a = random_mask(h, w, 0.35), b = random_mask(h, w, 0.35);
    const auto got = hd95(a, b);
    const auto ba = boundary(a), bb = boundary(b);
    if (ba.empty() || bb.empty()) {
      hd_ok &= !got.has_value();
      continue;
    }
    std::vector<double> pooled;
    auto directed = [&pooled](const auto& from, const auto& to) {
      for (const auto& [r1, c1] : from) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& [r2, c2] : to)
          best = std::min(best, double((r1 - r2) * (r1 - r2) + (c1 - c2) * (c1 - c2)));
        pooled.push_back(std::sqrt(best));
      }
    };
    directed(ba, bb);
    directed(bb, ba);
    std::sort(pooled.begin(), pooled.end());
    const double rank = 0.95 * (static_cast<double>(pooled.size()) - 1.0);
    const auto lo = static_cast<std::size_t>(std::floor(rank));
    const auto hi = static_cast<std::size_t>(std::ceil(rank));
    const double want = pooled[lo] + (rank - lo) * (pooled[hi] - pooled[lo]);
    hd_ok &= got.has_value() && std::abs(*got - want) <= 1e-9;
    ++compared;
  }
  expect(hd_ok && compared > 150, "hd95 equals the all-pairs oracle to 1e-9 on 200 pairs");
}

// ---------------------------------------------------------------- 5
void criterion_5() {
  banner(5, "variance-map bound at n=100 and unanimity zero");
  auto gen = at::detail::createCPUGenerator(55);
  const double bound = 0.25 * 100.0 / 99.0;

  bool bound_ok = true;
  for (int rep = 0; rep < 20; ++rep) {
    // synthetic binary stacks with varying per-pixel on-probability
    auto p = torch::rand({1, 16, 16}, gen, torch::kFloat32);
    auto stack = torch::rand({100, 1, 16, 16}, gen, torch::kFloat32).lt(p).to(torch::kFloat32);
    const auto s = reduce_samples(stack);
    bound_ok &= s.variance_map.max().item<double>() <= bound + 1e-9;
  }
  expect(bound_ok, "max variance <= 0.25*100/99 + 1e-9 on random binary stacks");

  auto split = torch::zeros({100, 1, 1, 1}, torch::kFloat32);
  for (int i = 0; i < 50; ++i) split[i][0][0][0] = 1.0f;
  const double peak = reduce_samples(split).variance_map.max().item<double>();
  expect(std::abs(peak - 0.252525240182877) < 1e-12,
         "a 50/100 saturated pixel attains the colorbar maximum 0.252525240182877");

  const auto unanimous_on = reduce_samples(torch::ones({100, 1, 8, 8}, torch::kFloat32));
  const auto unanimous_off = reduce_samples(torch::zeros({100, 1, 8, 8}, torch::kFloat32));
  expect(unanimous_on.variance_map.abs().max().item<double>() == 0.0 &&
             unanimous_off.variance_map.abs().max().item<double>() == 0.0,
         "variance is exactly 0 under unanimity");
}

// ---------------------------------------------------------------- 6
RunConfig desk_config() {
  RunConfig c;  // defaults are the desk-scale configuration
  c.set("train.iterations", "6000");
  c.set("eval.limit", "50");
  return c;
}

void ensure_dataset(const fs::path& workdir) {
  const auto data_dir = workdir / "data";
  if (fs::exists(data_dir / "manifest.tsv")) return;
  cmd_generate_data(desk_config(), data_dir, /*force=*/true);
}

fs::path ensure_trained(const fs::path& workdir) {
  const auto ckpt = workdir / "train" / "final.bin";
  if (fs::exists(ckpt)) return ckpt;
  ensure_dataset(workdir);
  return cmd_train(desk_config(), workdir / "data", workdir / "train", std::nullopt,
                   /*force=*/true);
}

void criterion_6(const fs::path& workdir) {
  banner(6, "desk-scale end-to-end trend (train, evaluate, curve)");
  const auto t0 = std::chrono::steady_clock::now();
  ensure_dataset(workdir);

  const auto train_slices = load_dataset(workdir / "data", "train");
  expect(train_slices.size() >= 2000,
         "train split has >= 2000 slices (" + std::to_string(train_slices.size()) + ")");

  const auto ckpt = ensure_trained(workdir);
  {
    const auto loaded = load_checkpoint(ckpt);
    expect(loaded.iteration <= 8000,
           "trained for <= 8000 iterations (" + std::to_string(loaded.iteration) + ")");
  }

  auto eval_config = desk_config();
  const auto result = cmd_evaluate(eval_config, ckpt, workdir / "data", "test", 5,
                                   workdir / "evaluate", /*force=*/true);
  expect(static_cast<int>(result.single.per_image.size()) == 50,
         "evaluated 50 held-out non-empty-GT slices");
  std::ostringstream a;
  a << "single-sample Dice " << result.single.dice_all << " >= 0.80";
  expect(result.single.dice_all >= 0.80, a.str());
  std::ostringstream b;
  b << "ensemble-of-5 Dice " << result.ensemble.dice_all << " >= single - 0.005";
  expect(result.ensemble.dice_all >= result.single.dice_all - 0.005, b.str());

  // Fig.4-style flattening over sizes {1,5,25} on 5 held-out slices
  const auto test_slices = load_dataset(workdir / "data", "test");
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < 5 && i < test_slices.size(); ++i) ids.push_back(test_slices[i].id);
  auto curve_config = desk_config();
  const auto rows = cmd_curve(curve_config, ckpt, workdir / "data", ids, {1, 5, 25},
                              workdir / "curve", /*force=*/true);
  double d1 = 0, d5 = 0, d25 = 0;
  for (const auto& r : rows) {
    if (r.n == 1) d1 += r.dice;
    if (r.n == 5) d5 += r.dice;
    if (r.n == 25) d25 += r.dice;
  }
  d1 /= ids.size();
  d5 /= ids.size();
  d25 /= ids.size();
  std::ostringstream cmsg;
  cmsg << "curve flattens: D25-D5 (" << d25 - d5 << ") < D5-D1 (" << d5 - d1 << ") + 0.01";
  expect(d25 - d5 < d5 - d1 + 0.01, cmsg.str());

  const double minutes =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
  std::cout << "  (criterion 6 wall time: " << minutes << " min)\n";
}

// ---------------------------------------------------------------- 7
bool same_file_bytes(const fs::path& a, const fs::path& b) {
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  if (!fa || !fb) return false;
  std::stringstream sa, sb;
  sa << fa.rdbuf();
  sb << fb.rdbuf();
  return sa.str() == sb.str();
}

void criterion_7(const fs::path& workdir) {
  banner(7, "sampling determinism and prefix property on the trained model");
  const auto ckpt = ensure_trained(workdir);
  const auto test_slices = load_dataset(workdir / "data", "test");
  const auto id = test_slices.front().id;

  auto run = [&](const fs::path& out, int n) {
    auto config = desk_config();
    cmd_sample(config, ckpt, workdir / "data", id, std::nullopt, n, out, /*force=*/true);
  };

  run(workdir / "det_a", 5);
  run(workdir / "det_b", 5);
  bool identical = true;
  for (int i = 0; i < 5; ++i) {
    std::ostringstream name;
    name << "sample_" << std::setw(3) << std::setfill('0') << i << ".arr";
    identical &= same_file_bytes(workdir / "det_a" / name.str(), workdir / "det_b" / name.str());
  }
  identical &= same_file_bytes(workdir / "det_a" / "mean.arr", workdir / "det_b" / "mean.arr");
  expect(identical, "two identical cmd_sample runs produce bit-identical files");

  run(workdir / "det_c", 6);
  bool prefix = true;
  for (int i = 0; i < 5; ++i) {
    std::ostringstream name;
    name << "sample_" << std::setw(3) << std::setfill('0') << i << ".arr";
    prefix &= same_file_bytes(workdir / "det_a" / name.str(), workdir / "det_c" / name.str());
  }
  expect(prefix, "the n=5 run is a bitwise prefix of the n=6 run");
}

// ---------------------------------------------------------------- 8
void criterion_8() {
  banner(8, "empty-mask accounting in the report");
  std::vector<PerImageMetrics> records;
  auto gt_disc = [&](std::int64_t cy, std::int64_t cx) {
    auto g = torch::zeros({1, 16, 16}, torch::kUInt8);
    for (std::int64_t y = 0; y < 16; ++y)
      for (std::int64_t x = 0; x < 16; ++x)
        if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= 9) g[0][y][x] = 1;
    return g;
  };

  // three images whose ensembles are all-background stacks -> empty masks
  for (int i = 0; i < 3; ++i) {
    const auto summary = reduce_samples(torch::zeros({5, 1, 16, 16}, torch::kFloat32));
    const auto gt = gt_disc(8, 8);
    PerImageMetrics r;
    r.id = "empty" + std::to_string(i);
    r.dice = dice(summary.binary_mask, gt);
    r.jaccard = jaccard(summary.binary_mask, gt);
    r.hd95 = hd95(summary.binary_mask, gt);
    r.empty = is_empty(summary.binary_mask);
    records.push_back(r);
  }
  // four images with near-perfect ensembles
  for (int i = 0; i < 4; ++i) {
    const auto gt = gt_disc(7 + i, 8);
    auto stack = gt.to(torch::kFloat32).unsqueeze(0).repeat({5, 1, 1, 1});
    const auto summary = reduce_samples(stack);
    PerImageMetrics r;
    r.id = "full" + std::to_string(i);
    r.dice = dice(summary.binary_mask, gt);
    r.jaccard = jaccard(summary.binary_mask, gt);
    r.hd95 = hd95(summary.binary_mask, gt);
    r.empty = is_empty(summary.binary_mask);
    records.push_back(r);
  }

  const auto report = aggregate(records);
  expect(report.empty_count == 3, "empty_count equals the 3 forced-empty ensembles");
  bool hd_undefined = true;
  for (const auto& r : report.per_image)
    if (r.empty) hd_undefined &= !r.hd95.has_value();
  expect(hd_undefined, "HD95 is undefined for the empty predictions");
  // plain average counts the three zeros; the bracketed average excludes them
  expect(std::abs(report.dice_all - 4.0 / 7.0) < 1e-12,
         "dice_all averages empty predictions as zero");
  expect(std::abs(report.dice_nonempty - 1.0) < 1e-12 &&
             std::abs(report.jaccard_nonempty - 1.0) < 1e-12,
         "bracketed averages exclude the empty predictions");
  expect(report.hd95_nonempty == 0.0, "HD95 average covers only defined cases (all exact here)");
}

}  // namespace

int main(int argc, char** argv) {
  int criterion = 0;
  fs::path workdir = "acceptance_workdir";
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--criterion" && i + 1 < argc) criterion = std::atoi(argv[++i]);
    if (arg == "--workdir" && i + 1 < argc) workdir = argv[++i];
  }
  fs::create_directories(workdir);
  torch::set_num_threads(1);

  auto run = [&](int k) {
    g_failures = 0;
    switch (k) {
      case 1: criterion_1(); break;
      case 2: criterion_2(); break;
      case 3: criterion_3(); break;
      case 4: criterion_4(); break;
      case 5: criterion_5(); break;
      case 6: criterion_6(workdir); break;
      case 7: criterion_7(workdir); break;
      case 8: criterion_8(); break;
      default: std::cerr << "unknown criterion " << k << "\n"; return 1;
    }
    verdict(k);
    return g_failures == 0 ? 0 : 1;
  };

  if (criterion != 0) return run(criterion);
  int rc = 0;
  for (int k = 1; k <= 8; ++k) rc |= run(k);
  return rc;
}
