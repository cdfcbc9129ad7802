// SPDX-License-Identifier: Apache-2.0
#include "doctest_torch.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "diffseg/errors.hpp"
#include "diffseg/metrics.hpp"

using namespace diffseg;

namespace {

torch::Tensor mask_of(std::initializer_list<std::initializer_list<int>> rows) {
  const auto h = static_cast<std::int64_t>(rows.size());
  const auto w = static_cast<std::int64_t>(rows.begin()->size());
  auto t = torch::zeros({h, w}, torch::kUInt8);
  std::int64_t r = 0;
  for (const auto& row : rows) {
    std::int64_t c = 0;
    for (int v : row) t[r][c++] = static_cast<std::uint8_t>(v);
    ++r;
  }
  return t;
}

torch::Tensor random_mask(std::mt19937_64& rng, std::int64_t h, std::int64_t w, double p) {
  auto t = torch::zeros({h, w}, torch::kUInt8);
  std::bernoulli_distribution coin(p);
  for (std::int64_t r = 0; r < h; ++r)
    for (std::int64_t c = 0; c < w; ++c)
      if (coin(rng)) t[r][c] = 1;
  return t;
}

// ---- independent oracle: boundary + all-pairs HD95 --------------------
std::vector<std::pair<int, int>> oracle_boundary(const torch::Tensor& m) {
  const auto h = m.size(0), w = m.size(1);
  auto at = [&](std::int64_t r, std::int64_t c) -> bool {
    if (r < 0 || c < 0 || r >= h || c >= w) return false;  // border is background
    return m[r][c].item<std::uint8_t>() != 0;
  };
  std::vector<std::pair<int, int>> out;
  for (std::int64_t r = 0; r < h; ++r)
    for (std::int64_t c = 0; c < w; ++c)
      if (at(r, c) &&
          (!at(r - 1, c) || !at(r + 1, c) || !at(r, c - 1) || !at(r, c + 1)))
        out.emplace_back(static_cast<int>(r), static_cast<int>(c));
  return out;
}

double oracle_percentile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double rank = p / 100.0 * (static_cast<double>(v.size()) - 1.0);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const auto hi = static_cast<std::size_t>(std::ceil(rank));
  return v[lo] + (rank - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

std::optional<double> oracle_hd95(const torch::Tensor& a, const torch::Tensor& b, double sy,
                                  double sx) {
  const auto ba = oracle_boundary(a), bb = oracle_boundary(b);
  if (ba.empty() || bb.empty()) return std::nullopt;
  std::vector<double> pooled;
  auto directed = [&](const auto& from, const auto& to) {
    for (const auto& [r1, c1] : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& [r2, c2] : to) {
        const double dy = sy * (r1 - r2), dx = sx * (c1 - c2);
        best = std::min(best, dy * dy + dx * dx);
      }
      pooled.push_back(std::sqrt(best));
    }
  };
  directed(ba, bb);
  directed(bb, ba);
  return oracle_percentile(pooled, 95.0);
}

}  // namespace

TEST_CASE("dice basics") {
  auto a = mask_of({{1, 1}, {0, 0}});
  CHECK(dice(a, a) == 1.0);
  CHECK(dice(mask_of({{1, 0}, {0, 0}}), mask_of({{0, 0}, {0, 1}})) == 0.0);
  // |A|=4, |B|=4, |A^B|=2
  auto p = mask_of({{1, 1, 1, 1}, {0, 0, 0, 0}});
  auto g = mask_of({{1, 1, 0, 0}, {1, 1, 0, 0}});
  CHECK(dice(p, g) == 0.5);
  CHECK(jaccard(p, g) == doctest::Approx(1.0 / 3.0));

  auto empty = torch::zeros({2, 2}, torch::kUInt8);
  CHECK(dice(empty, empty) == 1.0);
  CHECK(jaccard(empty, empty) == 1.0);
  CHECK(dice(empty, a) == 0.0);
  CHECK(jaccard(a, empty) == 0.0);
  CHECK_THROWS_AS(dice(a, torch::zeros({3, 3}, torch::kUInt8)), DataError);
}

TEST_CASE("dice/jaccard algebraic identity on random pairs") {
  std::mt19937_64 rng(404);
  for (int i = 0; i < 1000; ++i) {
    auto a = random_mask(rng, 12, 12, 0.4);
    auto b = random_mask(rng, 12, 12, 0.4);
    const double d = dice(a, b), j = jaccard(a, b);
    CHECK(std::abs(d - 2.0 * j / (1.0 + j)) <= 1e-12);
    CHECK(j <= d + 1e-15);
    CHECK(dice(a, b) == dice(b, a));
    CHECK(jaccard(a, b) == jaccard(b, a));
  }
}

TEST_CASE("adding a correct pixel never decreases dice") {
  std::mt19937_64 rng(405);
  for (int rep = 0; rep < 50; ++rep) {
    auto gt = random_mask(rng, 10, 10, 0.5);
    auto pred = random_mask(rng, 10, 10, 0.3);
    const double before = dice(pred, gt);
    // flip on one ground-truth pixel that the prediction missed
    bool flipped = false;
    for (std::int64_t r = 0; r < 10 && !flipped; ++r)
      for (std::int64_t c = 0; c < 10 && !flipped; ++c)
        if (gt[r][c].item<std::uint8_t>() && !pred[r][c].item<std::uint8_t>()) {
          pred[r][c] = 1;
          flipped = true;
        }
    if (flipped) CHECK(dice(pred, gt) >= before);
  }
}

TEST_CASE("hd95 basics") {
  auto a = mask_of({{0, 1, 1}, {0, 1, 1}, {0, 0, 0}});
  CHECK(*hd95(a, a) == 0.0);

  // two single pixels: both directed sets hold the 3-4-5 distance
  auto p = torch::zeros({5, 6}, torch::kUInt8);
  auto q = torch::zeros({5, 6}, torch::kUInt8);
  p[0][0] = 1;
  q[3][4] = 1;
  CHECK(*hd95(p, q) == doctest::Approx(5.0).epsilon(1e-12));

  auto empty = torch::zeros({5, 6}, torch::kUInt8);
  CHECK(!hd95(empty, q).has_value());
  CHECK(!hd95(p, empty).has_value());
  CHECK(!hd95(empty, empty).has_value());
}

TEST_CASE("hd95 equals the brute-force all-pairs oracle") {
  std::mt19937_64 rng(406);
  int compared = 0;
  for (int rep = 0; rep < 200; ++rep) {
    const auto h = 4 + static_cast<std::int64_t>(rng() % 13);
    const auto w = 4 + static_cast<std::int64_t>(rng() % 13);
    auto a = random_mask(rng, h, w, 0.35);
    auto b = random_mask(rng, h, w, 0.35);
    const auto got = hd95(a, b);
    const auto want = oracle_hd95(a, b, 1.0, 1.0);
    REQUIRE(got.has_value() == want.has_value());
    if (got) {
      CHECK(std::abs(*got - *want) <= 1e-9);
      ++compared;
    }
  }
  CHECK(compared > 150);  // the corpus must actually exercise the metric
}

TEST_CASE("hd95 scales linearly with spacing") {
  std::mt19937_64 rng(407);
  auto a = random_mask(rng, 12, 12, 0.4);
  auto b = random_mask(rng, 12, 12, 0.4);
  const auto base = hd95(a, b, {1.0, 1.0});
  const auto doubled = hd95(a, b, {2.0, 2.0});
  REQUIRE(base.has_value());
  CHECK(*doubled == doctest::Approx(2.0 * *base).epsilon(1e-12));

  // anisotropic spacing agrees with the oracle too
  const auto aniso = hd95(a, b, {3.0, 0.5});
  CHECK(*aniso == doctest::Approx(*oracle_hd95(a, b, 3.0, 0.5)).epsilon(1e-9));
}

TEST_CASE("aggregate") {
  SUBCASE("all perfect") {
    std::vector<PerImageMetrics> recs;
    for (int i = 0; i < 3; ++i)
      recs.push_back({"img" + std::to_string(i), 1.0, 1.0, 0.0, false});
    const auto r = aggregate(recs);
    CHECK(r.dice_all == 1.0);
    CHECK(r.dice_nonempty == 1.0);
    CHECK(r.empty_count == 0);
  }
  SUBCASE("one empty prediction among two") {
    std::vector<PerImageMetrics> recs;
    recs.push_back({"a", 1.0, 1.0, 1.5, false});
    recs.push_back({"b", 0.0, 0.0, std::nullopt, true});
    const auto r = aggregate(recs);
    CHECK(r.dice_all == 0.5);
    CHECK(r.dice_nonempty == 1.0);
    CHECK(r.jaccard_all == 0.5);
    CHECK(r.jaccard_nonempty == 1.0);
    CHECK(r.empty_count == 1);
    CHECK(r.hd95_nonempty == 1.5);  // undefined entries are skipped
  }
  SUBCASE("bracketed average exceeds the plain one when empties score zero") {
    std::vector<PerImageMetrics> recs;
    recs.push_back({"a", 0.9, 0.8, 2.0, false});
    recs.push_back({"b", 0.7, 0.6, 3.0, false});
    recs.push_back({"c", 0.0, 0.0, std::nullopt, true});
    const auto r = aggregate(recs);
    CHECK(r.dice_nonempty > r.dice_all);
    CHECK(r.empty_count == 1);
  }
  SUBCASE("records re-sorted by id") {
    std::vector<PerImageMetrics> recs;
    recs.push_back({"z", 1.0, 1.0, std::nullopt, false});
    recs.push_back({"a", 1.0, 1.0, std::nullopt, false});
    const auto r = aggregate(recs);
    CHECK(r.per_image.front().id == "a");
  }
  SUBCASE("empty input rejected") {
    CHECK_THROWS_AS(aggregate({}), DataError);
  }
}

TEST_CASE("report emission") {
  std::vector<PerImageMetrics> recs;
  recs.push_back({"p0_s0", 0.9, 0.8, 1.25, false});
  recs.push_back({"p0_s1", 0.0, 0.0, std::nullopt, true});
  const auto rep = aggregate(recs);

  const auto tsv = report_records_tsv(rep);
  CHECK(tsv.find("p0_s0\t0.9\t0.8\t1.25\t0") != std::string::npos);
  CHECK(tsv.find("p0_s1\t0\t0\tNA\t1") != std::string::npos);

  const auto table = format_report_table({{"method A", rep}});
  CHECK(table.find("Method") != std::string::npos);
  CHECK(table.find("Dice") != std::string::npos);
  CHECK(table.find("HD95") != std::string::npos);
  CHECK(table.find("Jaccard") != std::string::npos);
  CHECK(table.find("empty") != std::string::npos);
  CHECK(table.find("0.450 [0.900]") != std::string::npos);  // all [non-empty]
}

TEST_CASE("percentile_linear interpolates order statistics") {
  std::vector<double> v{4.0, 1.0, 3.0, 2.0};
  CHECK(percentile_linear(v, 0.0) == 1.0);
  CHECK(percentile_linear(v, 100.0) == 4.0);
  CHECK(percentile_linear(v, 50.0) == doctest::Approx(2.5));
  CHECK(percentile_linear(v, 95.0) == doctest::Approx(3.85));
}
