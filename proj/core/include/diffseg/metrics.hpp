// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <torch/torch.h>

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace diffseg {

/// One evaluated image. `empty` means the *prediction* had no foreground;
/// `hd95` is absent whenever either mask is empty.
struct PerImageMetrics {
  std::string id;
  double dice = 0.0;
  double jaccard = 0.0;
  std::optional<double> hd95;
  bool empty = false;
};

/// Aggregates in the layout of a results table row: plain averages over all
/// images (empty predictions scoring 0) plus the bracketed averages that
/// exclude empty-prediction cases. Averages are per-slice, never pooled by
/// patient; report writers state this in their header.
struct MetricsReport {
  std::vector<PerImageMetrics> per_image;  // sorted by id
  double dice_all = 0.0;
  double jaccard_all = 0.0;
  double dice_nonempty = 0.0;
  double jaccard_nonempty = 0.0;
  double hd95_nonempty = 0.0;
  int empty_count = 0;
};

/// 2|A∩B| / (|A|+|B|). Both masks empty: 1.0; exactly one empty: 0.0.
/// Masks are 2D (or (1,h,w)) tensors; nonzero means foreground.
double dice(const torch::Tensor& pred, const torch::Tensor& gt);

/// |A∩B| / |A∪B|, same empty-mask conventions as dice.
double jaccard(const torch::Tensor& pred, const torch::Tensor& gt);

/// 95th percentile of the pooled directed boundary-to-boundary Euclidean
/// distances (both directions concatenated, linear-interpolated percentile).
/// Boundaries use 4-connectivity with the image border counting as
/// background. Returns nullopt when either mask is empty.
std::optional<double> hd95(const torch::Tensor& pred, const torch::Tensor& gt,
                           std::array<double, 2> spacing = {1.0, 1.0});

/// Gathers per-image records (re-sorted by id) into a MetricsReport.
MetricsReport aggregate(std::vector<PerImageMetrics> records);

/// Linear interpolation between order statistics; `values` need not be
/// sorted. p in [0,100].
double percentile_linear(std::vector<double> values, double p);

/// Line-delimited per-image records: id, dice, jaccard, hd95 (or NA), empty.
std::string report_records_tsv(const MetricsReport& report);

/// Human-readable table with columns Method / Dice / HD95 / Jaccard / empty;
/// bracketed values are the non-empty averages.
std::string format_report_table(const std::vector<std::pair<std::string, MetricsReport>>& rows);

}  // namespace diffseg
