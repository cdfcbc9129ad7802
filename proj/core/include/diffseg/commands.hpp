// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "diffseg/config.hpp"
#include "diffseg/ensemble.hpp"
#include "diffseg/metrics.hpp"

namespace diffseg {

/// Creates/claims an output directory. Existing non-empty directories are
/// refused unless force is set; every run then gets a fresh, self-contained
/// directory with its run.json echo.
void prepare_out_dir(const std::filesystem::path& dir, bool force);

/// Generates the synthetic corpus, splits it, and writes the array files
/// plus manifest into out_dir. Returns the number of slices written.
int cmd_generate_data(const RunConfig& config, const std::filesystem::path& out_dir, bool force);

/// Trains on the dataset's train split; writes checkpoints and the metrics
/// log into out_dir. Returns the final checkpoint path.
std::filesystem::path cmd_train(RunConfig config, const std::filesystem::path& data_dir,
                                const std::filesystem::path& out_dir,
                                const std::optional<std::filesystem::path>& resume, bool force);

/// Loads a checkpoint and rebuilds the network and schedule from it. Keys
/// explicitly overridden to conflicting values are config errors; otherwise
/// the checkpoint's recorded model/schedule/data keys are adopted.
struct LoadedModel {
  UNet net{nullptr};
  NoiseSchedule schedule;
  SamplingOptions options;
};
LoadedModel load_model(RunConfig& config, const std::filesystem::path& checkpoint_path);

/// Samples an n-member ensemble for one image (by dataset id or prior .arr
/// path) and writes the summary files. Returns the summary.
EnsembleSummary cmd_sample(RunConfig config, const std::filesystem::path& checkpoint_path,
                           const std::optional<std::filesystem::path>& data_dir,
                           const std::optional<std::string>& image_id,
                           const std::optional<std::filesystem::path>& image_path, int n,
                           const std::filesystem::path& out_dir, bool force);

/// Evaluates a split with an n-member ensemble per image; emits per-image
/// records and a two-row table (single sample, ensemble of n).
struct EvaluateResult {
  MetricsReport single;
  MetricsReport ensemble;
};
EvaluateResult cmd_evaluate(RunConfig config, const std::filesystem::path& checkpoint_path,
                            const std::filesystem::path& data_dir, const std::string& split, int n,
                            const std::filesystem::path& out_dir, bool force);

/// Dice-vs-ensemble-size table for selected ids plus a rendered plot.
struct CurveRow {
  std::string id;
  int n;
  double dice;
};
std::vector<CurveRow> cmd_curve(RunConfig config, const std::filesystem::path& checkpoint_path,
                                const std::filesystem::path& data_dir,
                                const std::vector<std::string>& ids, const std::vector<int>& sizes,
                                const std::filesystem::path& out_dir, bool force);

}  // namespace diffseg
