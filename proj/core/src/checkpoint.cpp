// SPDX-License-Identifier: Apache-2.0
#include "diffseg/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "diffseg/errors.hpp"

namespace diffseg {

namespace {

constexpr char kMagic[8] = {'D', 'S', 'E', 'G', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

std::string dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return "float32";
    case torch::kFloat64: return "float64";
    case torch::kUInt8: return "uint8";
    case torch::kInt64: return "int64";
    default: throw IoError("checkpoint: unsupported dtype");
  }
}

torch::ScalarType dtype_from_name(const std::string& s) {
  if (s == "float32") return torch::kFloat32;
  if (s == "float64") return torch::kFloat64;
  if (s == "uint8") return torch::kUInt8;
  if (s == "int64") return torch::kInt64;
  throw IoError("checkpoint: unknown dtype " + s);
}

}  // namespace

nlohmann::json denoiser_config_to_json(const DenoiserConfig& c) {
  return nlohmann::json{{"in_channels", c.in_channels},
                        {"base_channels", c.base_channels},
                        {"channel_multipliers", c.channel_multipliers},
                        {"attention_resolutions", c.attention_resolutions},
                        {"attention_heads", c.attention_heads},
                        {"time_embedding_dim", c.time_embedding_dim},
                        {"image_size", c.image_size},
                        {"res_blocks", c.res_blocks}};
}

DenoiserConfig denoiser_config_from_json(const nlohmann::json& j) {
  DenoiserConfig c;
  c.in_channels = j.at("in_channels").get<int>();
  c.base_channels = j.at("base_channels").get<int>();
  c.channel_multipliers = j.at("channel_multipliers").get<std::vector<int>>();
  c.attention_resolutions = j.at("attention_resolutions").get<std::set<int>>();
  c.attention_heads = j.at("attention_heads").get<int>();
  c.time_embedding_dim = j.at("time_embedding_dim").get<int>();
  c.image_size = j.at("image_size").get<int>();
  c.res_blocks = j.at("res_blocks").get<int>();
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json header;
  header["format_version"] = kVersion;
  header["model"] = denoiser_config_to_json(ckpt.model);
  header["run_config"] = ckpt.run_config;
  header["iteration"] = ckpt.iteration;
  header["rng"] = {{"seed", ckpt.seed}, {"iteration", ckpt.iteration}};
  header["adam_step"] = ckpt.adam_step;

  std::vector<std::pair<std::string, torch::Tensor>> ordered;
  std::uint64_t offset = 0;
  auto tensor_list = nlohmann::json::array();
  for (const auto& [name, t] : ckpt.tensors) {
    auto cpu = t.detach().to(torch::kCPU).contiguous();
    nlohmann::json entry;
    entry["name"] = name;
    entry["dtype"] = dtype_name(cpu.scalar_type());
    entry["shape"] = std::vector<std::int64_t>(cpu.sizes().begin(), cpu.sizes().end());
    entry["offset"] = offset;
    entry["nbytes"] = static_cast<std::uint64_t>(cpu.nbytes());
    offset += static_cast<std::uint64_t>(cpu.nbytes());
    tensor_list.push_back(std::move(entry));
    ordered.emplace_back(name, std::move(cpu));
  }
  header["tensors"] = std::move(tensor_list);

  const std::string header_str = header.dump();
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for write: " + tmp);
    out.write(kMagic, sizeof(kMagic));
    const std::uint32_t ver = kVersion;
    out.write(reinterpret_cast<const char*>(&ver), sizeof(ver));
    const std::uint64_t hlen = header_str.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for (const auto& [name, t] : ordered)
      out.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(t.nbytes()));
    if (!out) throw IoError("checkpoint write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw IoError("not a checkpoint file: " + path.string());
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (version != kVersion)
    throw IoError("checkpoint version " + std::to_string(version) + " unsupported");
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string header_str(hlen, '\0');
  in.read(header_str.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw IoError("checkpoint header truncated: " + path.string());

  nlohmann::json header = nlohmann::json::parse(header_str);
  Checkpoint ckpt;
  ckpt.model = denoiser_config_from_json(header.at("model"));
  ckpt.run_config = header.at("run_config").get<std::map<std::string, std::string>>();
  ckpt.iteration = header.at("iteration").get<std::int64_t>();
  ckpt.seed = header.at("rng").at("seed").get<std::uint64_t>();
  ckpt.adam_step = header.at("adam_step").get<std::int64_t>();

  for (const auto& entry : header.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    const auto dtype = dtype_from_name(entry.at("dtype").get<std::string>());
    const auto shape = entry.at("shape").get<std::vector<std::int64_t>>();
    const auto nbytes = entry.at("nbytes").get<std::uint64_t>();
    auto t = torch::empty(shape, torch::dtype(dtype));
    if (static_cast<std::uint64_t>(t.nbytes()) != nbytes)
      throw IoError("checkpoint: size mismatch for tensor " + name);
    in.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(nbytes));
    if (!in) throw IoError("checkpoint payload truncated at tensor " + name);
    ckpt.tensors.emplace(name, std::move(t));
  }
  return ckpt;
}

void load_parameters(UNet& net, const Checkpoint& ckpt, const std::string& prefix) {
  if (!(net->config() == ckpt.model))
    throw ConfigError("checkpoint model config does not match the network config");
  torch::NoGradGuard g;
  for (const auto& p : net->named_parameters()) {
    const auto it = ckpt.tensors.find(prefix + p.key());
    if (it == ckpt.tensors.end())
      throw ConfigError("checkpoint missing tensor: " + prefix + p.key());
    if (!it->second.sizes().equals(p.value().sizes()))
      throw ConfigError("checkpoint tensor shape mismatch: " + p.key());
    p.value().copy_(it->second);
  }
}

}  // namespace diffseg
