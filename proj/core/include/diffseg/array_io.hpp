// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <vector>

namespace diffseg {

// Binary array container, version 1. Little-endian throughout:
//   bytes 0..7   magic "DSEGARR1"
//   u32          container version (1)
//   u32          dtype code: 1=float32, 2=float64, 3=uint8, 4=int64
//   u32          ndim
//   u64[ndim]    shape
//   payload      row-major (C order) element data
void save_array(const std::filesystem::path& path, const torch::Tensor& t);
torch::Tensor load_array(const std::filesystem::path& path);

/// Hex-encoded SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

/// One dataset manifest record; serialized as
/// `id<TAB>split<TAB>relative_path<TAB>sha256`, one per line.
struct ManifestEntry {
  std::string id;
  std::string split;  // train | test | excluded
  std::string relative_path;
  std::string sha256;
};

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

}  // namespace diffseg
