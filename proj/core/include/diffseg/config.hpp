// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "diffseg/data.hpp"
#include "diffseg/denoiser.hpp"
#include "diffseg/ensemble.hpp"
#include "diffseg/schedule.hpp"
#include "diffseg/trainer.hpp"

namespace diffseg {

/// Flat-key run configuration. Every tunable lives in one namespace
/// (`schedule.T`, `train.lr`, `ensemble.n`, ...) with a typed default;
/// unknown keys are config errors, both in files and on the command line.
/// The fully resolved table is echoed into every output directory.
class RunConfig {
 public:
  RunConfig();  // defaults only

  /// Merges a JSON object of flat keys ({"schedule.T": 100, ...}).
  void load_file(const std::filesystem::path& path);

  /// Applies one `--key value` override; the value string is parsed
  /// according to the key's type (lists as comma-separated integers).
  void set(const std::string& key, const std::string& value);

  bool has(const std::string& key) const;
  std::string get_raw(const std::string& key) const;

  std::int64_t get_int(const std::string& key) const;
  double get_real(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::string get_string(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;

  /// Keys explicitly provided by file or override (not defaults).
  bool was_set(const std::string& key) const;

  /// Resolved flat table, for run.json echoes and checkpoint headers.
  std::map<std::string, std::string> resolved() const;
  void write_echo(const std::filesystem::path& dir, const std::string& command) const;

  // Typed views over the flat table.
  SyntheticSpec synthetic_spec() const;
  NoiseSchedule make_schedule() const;
  DenoiserConfig denoiser_config() const;
  TrainConfig train_config() const;
  SamplingOptions sampling_options() const;

 private:
  enum class Kind { Int, Real, Bool, String, IntList };
  struct Entry {
    Kind kind;
    std::string value;
    bool set_explicitly = false;
  };
  const Entry& entry(const std::string& key) const;
  std::map<std::string, Entry> entries_;
};

/// Applies run.deterministic: single-threaded deterministic kernels.
void apply_determinism(const RunConfig& config);

}  // namespace diffseg
