// SPDX-License-Identifier: Apache-2.0
#include "diffseg/config.hpp"

#include <torch/torch.h>

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "diffseg/errors.hpp"

namespace diffseg {

RunConfig::RunConfig() {
  auto add = [this](const char* key, Kind kind, const char* value) {
    entries_.emplace(key, Entry{kind, value, false});
  };

  add("data.seed", Kind::Int, "7");
  add("data.count", Kind::Int, "2560");
  add("data.channels", Kind::Int, "4");
  add("data.height", Kind::Int, "64");
  add("data.width", Kind::Int, "64");
  add("data.empty_fraction", Kind::Real, "0.2");
  add("data.slices_per_patient", Kind::Int, "10");

  add("split.train_fraction", Kind::Real, "0.9");
  add("split.seed", Kind::Int, "13");
  add("split.group_by_patient", Kind::Bool, "true");

  add("schedule.T", Kind::Int, "100");
  add("schedule.beta_start", Kind::Real, "0.0001");
  add("schedule.beta_end", Kind::Real, "0.02");
  add("schedule.scale_endpoints", Kind::String, "auto");  // auto|on|off

  add("model.base_channels", Kind::Int, "32");
  add("model.channel_multipliers", Kind::IntList, "1,2,2");
  add("model.attention_resolutions", Kind::IntList, "16");
  add("model.attention_heads", Kind::Int, "1");
  add("model.time_embedding_dim", Kind::Int, "0");  // 0 = 4*base
  add("model.res_blocks", Kind::Int, "1");
  add("model.ema", Kind::Bool, "false");

  add("train.lr", Kind::Real, "0.0001");
  add("train.batch_size", Kind::Int, "10");
  add("train.iterations", Kind::Int, "8000");
  add("train.lambda_vlb", Kind::Real, "0.001");
  add("train.seed", Kind::Int, "42");
  add("train.checkpoint_every", Kind::Int, "1000");
  add("train.clip_norm", Kind::Real, "0");

  add("ensemble.n", Kind::Int, "5");
  add("ensemble.base_seed", Kind::Int, "1000");
  add("ensemble.unbiased_variance", Kind::Bool, "true");

  add("sampling.noise_at_final_step", Kind::Bool, "false");

  add("eval.limit", Kind::Int, "0");  // 0 = whole split

  add("run.deterministic", Kind::Bool, "true");
  add("run.jobs", Kind::Int, "1");
}

const RunConfig::Entry& RunConfig::entry(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError("unknown config key: " + key);
  return it->second;
}

bool RunConfig::has(const std::string& key) const { return entries_.count(key) > 0; }

std::string RunConfig::get_raw(const std::string& key) const { return entry(key).value; }

bool RunConfig::was_set(const std::string& key) const { return entry(key).set_explicitly; }

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError("unknown config key: " + key);
  // validate parseability now so bad values fail at the boundary
  Entry candidate{it->second.kind, value, true};
  entries_[key] = candidate;
  switch (candidate.kind) {
    case Kind::Int: get_int(key); break;
    case Kind::Real: get_real(key); break;
    case Kind::Bool: get_bool(key); break;
    case Kind::IntList: get_int_list(key); break;
    case Kind::String: break;
  }
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config file must hold a JSON object of flat keys");
  for (const auto& [key, val] : j.items()) {
    std::string s;
    if (val.is_string())
      s = val.get<std::string>();
    else if (val.is_boolean())
      s = val.get<bool>() ? "true" : "false";
    else if (val.is_number_integer())
      s = std::to_string(val.get<std::int64_t>());
    else if (val.is_number_float()) {
      std::ostringstream os;
      os.precision(17);
      os << val.get<double>();
      s = os.str();
    } else if (val.is_array()) {
      std::ostringstream os;
      bool first = true;
      for (const auto& item : val) {
        if (!first) os << ',';
        os << item.get<std::int64_t>();
        first = false;
      }
      s = os.str();
    } else {
      throw ConfigError("config key " + key + ": unsupported value type");
    }
    set(key, s);
  }
}

std::int64_t RunConfig::get_int(const std::string& key) const {
  const auto& e = entry(key);
  try {
    std::size_t pos = 0;
    const auto v = std::stoll(e.value, &pos);
    if (pos != e.value.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": expected integer, got '" + e.value + "'");
  }
}

double RunConfig::get_real(const std::string& key) const {
  const auto& e = entry(key);
  try {
    std::size_t pos = 0;
    const auto v = std::stod(e.value, &pos);
    if (pos != e.value.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": expected real, got '" + e.value + "'");
  }
}

bool RunConfig::get_bool(const std::string& key) const {
  const auto& e = entry(key);
  if (e.value == "true" || e.value == "1") return true;
  if (e.value == "false" || e.value == "0") return false;
  throw ConfigError("config key " + key + ": expected bool, got '" + e.value + "'");
}

std::string RunConfig::get_string(const std::string& key) const { return entry(key).value; }

std::vector<int> RunConfig::get_int_list(const std::string& key) const {
  const auto& e = entry(key);
  std::vector<int> out;
  std::istringstream in(e.value);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    try {
      out.push_back(std::stoi(tok));
    } catch (const std::exception&) {
      throw ConfigError("config key " + key + ": expected comma-separated integers");
    }
  }
  if (out.empty()) throw ConfigError("config key " + key + ": empty list");
  return out;
}

std::map<std::string, std::string> RunConfig::resolved() const {
  std::map<std::string, std::string> out;
  for (const auto& [k, e] : entries_) out.emplace(k, e.value);
  return out;
}

void RunConfig::write_echo(const std::filesystem::path& dir, const std::string& command) const {
  nlohmann::json j;
  j["command"] = command;
  j["config"] = resolved();
  std::ofstream out(dir / "run.json", std::ios::trunc);
  if (!out) throw IoError("cannot write run.json in " + dir.string());
  out << j.dump(2) << '\n';
}

SyntheticSpec RunConfig::synthetic_spec() const {
  SyntheticSpec s;
  s.seed = static_cast<std::uint64_t>(get_int("data.seed"));
  s.count = static_cast<int>(get_int("data.count"));
  s.channels = static_cast<int>(get_int("data.channels"));
  s.height = get_int("data.height");
  s.width = get_int("data.width");
  s.empty_fraction = get_real("data.empty_fraction");
  s.slices_per_patient = static_cast<int>(get_int("data.slices_per_patient"));
  return s;
}

NoiseSchedule RunConfig::make_schedule() const {
  const auto T = static_cast<int>(get_int("schedule.T"));
  const auto mode_str = get_string("schedule.scale_endpoints");
  EndpointScaling mode;
  if (mode_str == "auto")
    mode = EndpointScaling::Auto;
  else if (mode_str == "on")
    mode = EndpointScaling::On;
  else if (mode_str == "off")
    mode = EndpointScaling::Off;
  else
    throw ConfigError("schedule.scale_endpoints must be auto|on|off");
  const auto [lo, hi] =
      scaled_endpoints(T, get_real("schedule.beta_start"), get_real("schedule.beta_end"), mode);
  return linear_schedule(T, lo, hi);
}

DenoiserConfig RunConfig::denoiser_config() const {
  DenoiserConfig c;
  c.in_channels = static_cast<int>(get_int("data.channels")) + 1;
  c.base_channels = static_cast<int>(get_int("model.base_channels"));
  c.channel_multipliers = get_int_list("model.channel_multipliers");
  const auto attn = get_int_list("model.attention_resolutions");
  c.attention_resolutions = std::set<int>(attn.begin(), attn.end());
  c.attention_heads = static_cast<int>(get_int("model.attention_heads"));
  c.time_embedding_dim = static_cast<int>(get_int("model.time_embedding_dim"));
  c.image_size = static_cast<int>(get_int("data.height"));
  if (get_int("data.height") != get_int("data.width"))
    throw ConfigError("model input must be square: data.height != data.width");
  c.res_blocks = static_cast<int>(get_int("model.res_blocks"));
  return c;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig c;
  c.learning_rate = get_real("train.lr");
  c.batch_size = static_cast<int>(get_int("train.batch_size"));
  c.iterations = get_int("train.iterations");
  c.lambda_vlb = get_real("train.lambda_vlb");
  c.seed = static_cast<std::uint64_t>(get_int("train.seed"));
  c.checkpoint_every = get_int("train.checkpoint_every");
  c.clip_norm = get_real("train.clip_norm");
  c.ema = get_bool("model.ema");
  c.validate();
  return c;
}

SamplingOptions RunConfig::sampling_options() const {
  SamplingOptions o;
  o.noise_at_final_step = get_bool("sampling.noise_at_final_step");
  o.unbiased_variance = get_bool("ensemble.unbiased_variance");
  o.jobs = static_cast<int>(get_int("run.jobs"));
  if (o.jobs < 1) throw ConfigError("run.jobs must be >= 1");
  return o;
}

void apply_determinism(const RunConfig& config) {
  if (!config.get_bool("run.deterministic")) return;
  torch::set_num_threads(1);
  at::globalContext().setDeterministicAlgorithms(true, /*warn_only=*/true);
}

}  // namespace diffseg
