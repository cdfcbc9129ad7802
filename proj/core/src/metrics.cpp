// SPDX-License-Identifier: Apache-2.0
#include "diffseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "diffseg/errors.hpp"

namespace diffseg {

namespace {

// Flattens (1,h,w) / (h,w) tensors to a contiguous 2D byte view.
struct MaskView {
  std::vector<std::uint8_t> data;
  std::int64_t h = 0, w = 0;
  bool at(std::int64_t r, std::int64_t c) const { return data[static_cast<std::size_t>(r * w + c)] != 0; }
};

MaskView as_mask(const torch::Tensor& m, const char* what) {
  torch::Tensor t = m;
  if (t.dim() == 3 && t.size(0) == 1) t = t.squeeze(0);
  if (t.dim() != 2) throw DataError(std::string(what) + ": mask must be 2D or (1,h,w)");
  t = t.ne(0).to(torch::kUInt8).contiguous();
  MaskView v;
  v.h = t.size(0);
  v.w = t.size(1);
  v.data.assign(t.data_ptr<std::uint8_t>(), t.data_ptr<std::uint8_t>() + t.numel());
  return v;
}

void check_shapes(const MaskView& a, const MaskView& b, const char* what) {
  if (a.h != b.h || a.w != b.w) throw DataError(std::string(what) + ": mask shapes differ");
}

struct Counts {
  std::int64_t a = 0, b = 0, inter = 0;
};

Counts overlap_counts(const MaskView& a, const MaskView& b) {
  Counts c;
  const std::size_t n = a.data.size();
  for (std::size_t i = 0; i < n; ++i) {
    const bool pa = a.data[i] != 0, pb = b.data[i] != 0;
    c.a += pa;
    c.b += pb;
    c.inter += pa && pb;
  }
  return c;
}

// Foreground pixels with at least one background 4-neighbor; pixels on the
// image border always qualify (outside counts as background).
std::vector<std::pair<std::int64_t, std::int64_t>> boundary_pixels(const MaskView& m) {
  std::vector<std::pair<std::int64_t, std::int64_t>> out;
  for (std::int64_t r = 0; r < m.h; ++r) {
    for (std::int64_t c = 0; c < m.w; ++c) {
      if (!m.at(r, c)) continue;
      const bool edge = r == 0 || c == 0 || r == m.h - 1 || c == m.w - 1;
      if (edge || !m.at(r - 1, c) || !m.at(r + 1, c) || !m.at(r, c - 1) || !m.at(r, c + 1))
        out.emplace_back(r, c);
    }
  }
  return out;
}

constexpr double kInf = std::numeric_limits<double>::infinity();

// 1D lower-envelope squared distance transform with sample positions x_i =
// spacing * i (Felzenszwalb & Huttenlocher).
void dt1d(const std::vector<double>& f, double spacing, std::vector<double>& out,
          std::vector<int>& v, std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  v.assign(static_cast<std::size_t>(n), 0);
  z.assign(static_cast<std::size_t>(n) + 1, 0.0);
  int k = 0;
  z[0] = -kInf;
  z[1] = kInf;
  auto x = [spacing](int i) { return spacing * i; };
  for (int q = 1; q < n; ++q) {
    if (f[static_cast<std::size_t>(q)] == kInf) continue;
    double s;
    while (true) {
      const int p = v[static_cast<std::size_t>(k)];
      if (f[static_cast<std::size_t>(p)] == kInf) {
        // envelope so far is empty of finite parabolas
        s = -kInf;
        break;
      }
      s = ((f[static_cast<std::size_t>(q)] + x(q) * x(q)) -
           (f[static_cast<std::size_t>(p)] + x(p) * x(p))) /
          (2 * x(q) - 2 * x(p));
      if (s > z[static_cast<std::size_t>(k)]) break;
      --k;
    }
    ++k;
    v[static_cast<std::size_t>(k)] = q;
    z[static_cast<std::size_t>(k)] = s;
    z[static_cast<std::size_t>(k) + 1] = kInf;
  }
  k = 0;
  out.resize(static_cast<std::size_t>(n));
  for (int q = 0; q < n; ++q) {
    while (z[static_cast<std::size_t>(k) + 1] < x(q)) ++k;
    const int p = v[static_cast<std::size_t>(k)];
    const double fp = f[static_cast<std::size_t>(p)];
    out[static_cast<std::size_t>(q)] = fp == kInf ? kInf : (x(q) - x(p)) * (x(q) - x(p)) + fp;
  }
}

// Exact squared Euclidean distance (physical units) from every pixel to the
// nearest seed pixel.
std::vector<double> edt_squared(const std::vector<std::pair<std::int64_t, std::int64_t>>& seeds,
                                std::int64_t h, std::int64_t w, std::array<double, 2> spacing) {
  std::vector<double> grid(static_cast<std::size_t>(h * w), kInf);
  for (const auto& [r, c] : seeds) grid[static_cast<std::size_t>(r * w + c)] = 0.0;

  std::vector<double> buf, outbuf;
  std::vector<int> v;
  std::vector<double> z;
  // rows first (x axis, spacing[1])
  buf.resize(static_cast<std::size_t>(w));
  for (std::int64_t r = 0; r < h; ++r) {
    for (std::int64_t c = 0; c < w; ++c) buf[static_cast<std::size_t>(c)] = grid[static_cast<std::size_t>(r * w + c)];
    dt1d(buf, spacing[1], outbuf, v, z);
    for (std::int64_t c = 0; c < w; ++c) grid[static_cast<std::size_t>(r * w + c)] = outbuf[static_cast<std::size_t>(c)];
  }
  // then columns (y axis, spacing[0])
  buf.resize(static_cast<std::size_t>(h));
  for (std::int64_t c = 0; c < w; ++c) {
    for (std::int64_t r = 0; r < h; ++r) buf[static_cast<std::size_t>(r)] = grid[static_cast<std::size_t>(r * w + c)];
    dt1d(buf, spacing[0], outbuf, v, z);
    for (std::int64_t r = 0; r < h; ++r) grid[static_cast<std::size_t>(r * w + c)] = outbuf[static_cast<std::size_t>(r)];
  }
  return grid;
}

}  // namespace

double dice(const torch::Tensor& pred, const torch::Tensor& gt) {
  const auto a = as_mask(pred, "dice"), b = as_mask(gt, "dice");
  check_shapes(a, b, "dice");
  const auto c = overlap_counts(a, b);
  if (c.a == 0 && c.b == 0) return 1.0;
  if (c.a == 0 || c.b == 0) return 0.0;
  return 2.0 * static_cast<double>(c.inter) / static_cast<double>(c.a + c.b);
}

double jaccard(const torch::Tensor& pred, const torch::Tensor& gt) {
  const auto a = as_mask(pred, "jaccard"), b = as_mask(gt, "jaccard");
  check_shapes(a, b, "jaccard");
  const auto c = overlap_counts(a, b);
  if (c.a == 0 && c.b == 0) return 1.0;
  if (c.a == 0 || c.b == 0) return 0.0;
  const std::int64_t uni = c.a + c.b - c.inter;
  return static_cast<double>(c.inter) / static_cast<double>(uni);
}

double percentile_linear(std::vector<double> values, double p) {
  if (values.empty()) throw DataError("percentile of empty set");
  std::sort(values.begin(), values.end());
  const double rank = p / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const auto hi = static_cast<std::size_t>(std::ceil(rank));
  const double frac = rank - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

std::optional<double> hd95(const torch::Tensor& pred, const torch::Tensor& gt,
                           std::array<double, 2> spacing) {
  const auto a = as_mask(pred, "hd95"), b = as_mask(gt, "hd95");
  check_shapes(a, b, "hd95");
  const auto ba = boundary_pixels(a);
  const auto bb = boundary_pixels(b);
  if (ba.empty() || bb.empty()) return std::nullopt;

  const auto dist_to_b = edt_squared(bb, a.h, a.w, spacing);
  const auto dist_to_a = edt_squared(ba, a.h, a.w, spacing);

  std::vector<double> pooled;
  pooled.reserve(ba.size() + bb.size());
  for (const auto& [r, c] : ba) pooled.push_back(std::sqrt(dist_to_b[static_cast<std::size_t>(r * a.w + c)]));
  for (const auto& [r, c] : bb) pooled.push_back(std::sqrt(dist_to_a[static_cast<std::size_t>(r * a.w + c)]));
  return percentile_linear(std::move(pooled), 95.0);
}

MetricsReport aggregate(std::vector<PerImageMetrics> records) {
  if (records.empty()) throw DataError("aggregate: no records");
  std::sort(records.begin(), records.end(),
            [](const PerImageMetrics& x, const PerImageMetrics& y) { return x.id < y.id; });

  MetricsReport r;
  double dice_sum = 0, jac_sum = 0, dice_ne = 0, jac_ne = 0, hd_sum = 0;
  int n_nonempty = 0, n_hd = 0;
  for (const auto& rec : records) {
    dice_sum += rec.dice;
    jac_sum += rec.jaccard;
    if (rec.empty) {
      ++r.empty_count;
    } else {
      dice_ne += rec.dice;
      jac_ne += rec.jaccard;
      ++n_nonempty;
    }
    if (rec.hd95) {
      hd_sum += *rec.hd95;
      ++n_hd;
    }
  }
  const auto n = static_cast<double>(records.size());
  r.dice_all = dice_sum / n;
  r.jaccard_all = jac_sum / n;
  r.dice_nonempty = n_nonempty ? dice_ne / n_nonempty : 0.0;
  r.jaccard_nonempty = n_nonempty ? jac_ne / n_nonempty : 0.0;
  r.hd95_nonempty = n_hd ? hd_sum / n_hd : 0.0;
  r.per_image = std::move(records);
  return r;
}

std::string report_records_tsv(const MetricsReport& report) {
  std::ostringstream out;
  out << "# per-slice metrics (averages are per-slice, not pooled by patient)\n";
  out << "id\tdice\tjaccard\thd95\tempty\n";
  out << std::setprecision(10);
  for (const auto& rec : report.per_image) {
    out << rec.id << '\t' << rec.dice << '\t' << rec.jaccard << '\t';
    if (rec.hd95)
      out << *rec.hd95;
    else
      out << "NA";
    out << '\t' << (rec.empty ? 1 : 0) << '\n';
  }
  return out.str();
}

std::string format_report_table(const std::vector<std::pair<std::string, MetricsReport>>& rows) {
  std::ostringstream out;
  out << "# averages are per-slice; bracketed values exclude empty predictions\n";
  out << std::left << std::setw(28) << "Method" << std::setw(18) << "Dice" << std::setw(10)
      << "HD95" << std::setw(18) << "Jaccard" << "empty\n";
  out << std::fixed << std::setprecision(3);
  for (const auto& [label, r] : rows) {
    std::ostringstream d, j;
    d << std::fixed << std::setprecision(3) << r.dice_all << " [" << r.dice_nonempty << "]";
    j << std::fixed << std::setprecision(3) << r.jaccard_all << " [" << r.jaccard_nonempty << "]";
    out << std::left << std::setw(28) << label << std::setw(18) << d.str() << std::setw(10)
        << r.hd95_nonempty << std::setw(18) << j.str() << r.empty_count << '\n';
  }
  return out.str();
}

}  // namespace diffseg
