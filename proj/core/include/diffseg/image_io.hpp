// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <vector>

namespace diffseg {

/// Writes a 2D map as binary 8-bit grayscale PGM (P5), scaling [lo, hi] to
/// 0..255, plus a `<path>.txt` sidecar recording the numeric lo/hi so the
/// gray levels stay interpretable.
void save_pgm_scaled(const std::filesystem::path& path, const torch::Tensor& map2d, double lo,
                     double hi);

/// Renders a Dice-vs-ensemble-size line chart (one polyline per series mean)
/// into an 8-bit grayscale image and writes it as PGM. Deterministic for a
/// given table.
struct CurvePoint {
  int n;
  double dice;
};
void save_curve_plot(const std::filesystem::path& path, const std::vector<CurvePoint>& mean_curve,
                     int width = 480, int height = 320);

}  // namespace diffseg
