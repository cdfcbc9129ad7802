// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "diffseg/denoiser.hpp"

namespace diffseg {

// Single-file checkpoint container, version 1:
//   bytes 0..7   magic "DSEGCKPT"
//   u32          container version (1)
//   u64          header length in bytes
//   header       UTF-8 JSON: format_version, model (DenoiserConfig fields),
//                run_config (flat key/value echo), iteration, rng
//                {seed, iteration} (all random streams are counter-derived
//                from these two), adam_step, tensors (name/dtype/shape/
//                offset/nbytes, offsets relative to payload start)
//   payload      raw little-endian tensor data, in header order
// Tensor names are the module's registered parameter names; Adam moments are
// stored as "adam.m/<name>" and "adam.v/<name>", EMA shadows as
// "ema/<name>".
struct Checkpoint {
  DenoiserConfig model;
  std::map<std::string, std::string> run_config;  // resolved flat config echo
  std::int64_t iteration = 0;
  std::uint64_t seed = 0;
  std::int64_t adam_step = 0;
  std::map<std::string, torch::Tensor> tensors;
};

/// Atomic (write-temp-then-rename) checkpoint write.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);

Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies the checkpoint's parameter tensors into the network. Throws
/// ConfigError when the stored DenoiserConfig differs from the network's or
/// tensors are missing/mismatched. `prefix` selects "": plain parameters or
/// "ema/": the EMA shadow set.
void load_parameters(UNet& net, const Checkpoint& ckpt, const std::string& prefix = "");

nlohmann::json denoiser_config_to_json(const DenoiserConfig& c);
DenoiserConfig denoiser_config_from_json(const nlohmann::json& j);

}  // namespace diffseg
