// SPDX-License-Identifier: Apache-2.0
#include "diffseg/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "diffseg/errors.hpp"

namespace diffseg {

namespace {

void write_pgm(const std::filesystem::path& path, const std::vector<std::uint8_t>& pixels, int w,
               int h) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for write: " + path.string());
  out << "P5\n" << w << " " << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace

void save_pgm_scaled(const std::filesystem::path& path, const torch::Tensor& map2d, double lo,
                     double hi) {
  torch::Tensor t = map2d;
  if (t.dim() == 3 && t.size(0) == 1) t = t.squeeze(0);
  if (t.dim() != 2) throw IoError("save_pgm_scaled: expected 2D map");
  t = t.to(torch::kFloat64).contiguous();
  const auto h = static_cast<int>(t.size(0));
  const auto w = static_cast<int>(t.size(1));
  const double span = hi - lo;
  std::vector<std::uint8_t> px(static_cast<std::size_t>(h) * w);
  const double* src = t.data_ptr<double>();
  for (std::size_t i = 0; i < px.size(); ++i) {
    const double u = span > 0 ? (src[i] - lo) / span : 0.0;
    px[i] = static_cast<std::uint8_t>(std::lround(std::clamp(u, 0.0, 1.0) * 255.0));
  }
  write_pgm(path, px, w, h);

  std::ofstream sidecar(path.string() + ".txt", std::ios::trunc);
  if (!sidecar) throw IoError("cannot write sidecar for " + path.string());
  sidecar << "min " << lo << "\nmax " << hi << "\n";
}

void save_curve_plot(const std::filesystem::path& path, const std::vector<CurvePoint>& mean_curve,
                     int width, int height) {
  if (mean_curve.empty()) throw DataError("curve plot: empty table");
  std::vector<std::uint8_t> px(static_cast<std::size_t>(width) * height, 255);
  const int ml = 40, mr = 10, mt = 10, mb = 30;  // margins
  const int x0 = ml, x1 = width - mr, y0 = height - mb, y1 = mt;

  auto put = [&](int x, int y, std::uint8_t v) {
    if (x >= 0 && x < width && y >= 0 && y < height)
      px[static_cast<std::size_t>(y) * width + x] = v;
  };
  for (int x = x0; x <= x1; ++x) put(x, y0, 0);
  for (int y = y1; y <= y0; ++y) put(x0, y, 0);

  const int n_max = std::max(1, mean_curve.back().n);
  double d_lo = 1.0, d_hi = 0.0;
  for (const auto& p : mean_curve) {
    d_lo = std::min(d_lo, p.dice);
    d_hi = std::max(d_hi, p.dice);
  }
  // padded y-range; fall back to [0,1] when the curve is flat
  double pad = (d_hi - d_lo) * 0.15;
  if (pad <= 0) {
    d_lo = std::max(0.0, d_lo - 0.05);
    d_hi = std::min(1.0, d_hi + 0.05);
    if (d_hi <= d_lo) { d_lo = 0.0; d_hi = 1.0; }
  } else {
    d_lo -= pad;
    d_hi += pad;
  }

  auto to_px = [&](const CurvePoint& p) {
    const double fx = static_cast<double>(p.n) / n_max;
    const double fy = (p.dice - d_lo) / (d_hi - d_lo);
    return std::pair<int, int>{x0 + static_cast<int>(std::lround(fx * (x1 - x0))),
                               y0 - static_cast<int>(std::lround(fy * (y0 - y1)))};
  };

  auto draw_line = [&](std::pair<int, int> a, std::pair<int, int> b) {
    int dx = std::abs(b.first - a.first), dy = -std::abs(b.second - a.second);
    int sx = a.first < b.first ? 1 : -1, sy = a.second < b.second ? 1 : -1;
    int err = dx + dy;
    int x = a.first, y = a.second;
    while (true) {
      put(x, y, 0);
      if (x == b.first && y == b.second) break;
      const int e2 = 2 * err;
      if (e2 >= dy) { err += dy; x += sx; }
      if (e2 <= dx) { err += dx; y += sy; }
    }
  };

  for (std::size_t i = 0; i + 1 < mean_curve.size(); ++i)
    draw_line(to_px(mean_curve[i]), to_px(mean_curve[i + 1]));
  for (const auto& p : mean_curve) {
    const auto [cx, cy] = to_px(p);
    for (int dy = -2; dy <= 2; ++dy)
      for (int dx = -2; dx <= 2; ++dx)
        if (dx * dx + dy * dy <= 4) put(cx + dx, cy + dy, 64);
  }
  write_pgm(path, px, width, height);
}

}  // namespace diffseg
