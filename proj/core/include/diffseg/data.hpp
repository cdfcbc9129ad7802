// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace diffseg {

/// One training pair: multi-channel image prior plus binary ground truth.
struct LabeledSlice {
  torch::Tensor prior;  // (c,h,w) float32 in [-1,1]
  torch::Tensor mask;   // (1,h,w) uint8 {0,1}
  std::string id;       // "p0007_s042" style; patient prefix before '_'
};

/// Preprocessing knobs for externally supplied volumes.
struct PreprocessSpec {
  double clip_low = 1.0;
  double clip_high = 99.0;
  std::int64_t crop_h = 64;
  std::int64_t crop_w = 64;
  std::optional<std::pair<int, int>> slice_range;  // (low_exclude, high_exclude)
  bool merge_labels = true;
};

/// Test-only override: pins a single lesion's geometry so the rasterization
/// can be checked against an independent loop.
struct ForcedLesion {
  double cy, cx, ry, rx, theta;
};

struct SyntheticSpec {
  std::uint64_t seed = 7;
  int count = 2560;
  int channels = 4;
  std::int64_t height = 64;
  std::int64_t width = 64;
  double empty_fraction = 0.2;
  int slices_per_patient = 10;
  std::optional<ForcedLesion> forced_lesion;
};

/// Deterministic synthetic corpus: smooth blob "anatomy" shared across the
/// channels with channel-specific contrast, plus 0-3 elliptical lesions whose
/// union is the exact mask. A fixed fraction of slices has an empty mask.
/// Identical spec -> bit-identical tensors.
std::vector<LabeledSlice> generate_synthetic(const SyntheticSpec& spec);

/// Clips to the [low, high] percentile values (linear-interpolated order
/// statistics), then rescales affinely to [-1,1]. A constant input has no
/// usable range and yields all zeros.
torch::Tensor percentile_clip(const torch::Tensor& x, double low, double high);

/// Crops or zero-pads the trailing two dims to `target`, centered; when the
/// margin is odd the extra pixel is taken from / added to the high side.
torch::Tensor center_crop_or_pad(const torch::Tensor& x, std::int64_t target_h,
                                 std::int64_t target_w);

/// Binary mask: 1 where the integer label is in `foreground_ids`, else 0.
torch::Tensor merge_labels(const torch::Tensor& mask, const std::set<std::int64_t>& foreground_ids);

/// Turns a user-supplied volume (c,d,h,w) with integer labels (d,h,w) into
/// training pairs: drops the first/last slices named by spec.slice_range,
/// merges the foreground labels, clips intensities per channel per slice,
/// and center-crops/pads to the target size. Ids are `<stem>_s###`.
std::vector<LabeledSlice> preprocess_volume(const torch::Tensor& volume,
                                            const torch::Tensor& labels,
                                            const PreprocessSpec& spec,
                                            const std::set<std::int64_t>& foreground_ids,
                                            const std::string& stem);

struct SplitResult {
  std::vector<LabeledSlice> train;
  std::vector<LabeledSlice> test;                 // empty-mask slices removed
  std::vector<LabeledSlice> excluded_empty_test;  // what the filter removed
};

/// Deterministic split. Grouping keys (patient prefix, or the full id when
/// group_by_patient is false) are ordered by a seeded hash and the first
/// round(train_fraction * n_keys) go to train, so a 0.9 fraction of 10
/// patients is exactly 9/1. The test split drops empty-mask slices.
SplitResult split_dataset(const std::vector<LabeledSlice>& slices, double train_fraction,
                          std::uint64_t seed, bool group_by_patient);

/// Throws DataError unless mask is exactly {0,1} and prior is finite in
/// [-1,1]. Called at every pipeline boundary.
void validate_slice(const LabeledSlice& slice);

/// Writes slices/<id>_prior.arr + slices/<id>_mask.arr and a manifest with
/// one record per file. Returns the manifest entries.
std::vector<struct ManifestEntry> save_dataset(const std::filesystem::path& dir,
                                               const SplitResult& split);

/// Loads every slice recorded under `split` ("train"/"test"/"excluded"),
/// verifying checksums.
std::vector<LabeledSlice> load_dataset(const std::filesystem::path& dir, const std::string& split);

}  // namespace diffseg
