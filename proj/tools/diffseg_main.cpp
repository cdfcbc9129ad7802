// SPDX-License-Identifier: Apache-2.0
//
// diffseg: batch CLI for conditional diffusion segmentation.
//   generate-data  deterministic synthetic corpus + manifest
//   train          fit the denoiser on the train split
//   sample         n-sample ensemble (mean/variance/binary maps) for one image
//   evaluate       Dice/Jaccard/HD95 report over a split
//   curve          Dice vs ensemble size table + plot
//
// Any config key can be overridden as `--<key> <value>`, e.g.
// `--schedule.T 100 --train.lr 1e-4`. Exit codes: 0 ok, 2 config error,
// 3 data error, 4 numeric failure, 5 I/O error.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <iostream>
#include <map>
#include <sstream>

#include "diffseg/commands.hpp"
#include "diffseg/errors.hpp"

namespace {

std::string default_out_dir(const std::string& command) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y%m%d-%H%M%S", &tm);
  return "runs/" + command + "_" + buf;
}

// Everything CLI11 did not recognize is treated as `--key value` config
// overrides; unknown keys fail in RunConfig::set. A few undotted shorthands
// map onto their config keys.
void apply_overrides(diffseg::RunConfig& config, std::vector<std::string> extras) {
  static const std::map<std::string, std::string> kAliases = {
      {"count", "data.count"}, {"seed", "data.seed"}, {"iterations", "train.iterations"}};
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const auto& tok = extras[i];
    if (tok.rfind("--", 0) != 0)
      throw diffseg::ConfigError("unexpected argument: " + tok);
    auto key = tok.substr(2);
    if (const auto it = kAliases.find(key); it != kAliases.end()) key = it->second;
    if (i + 1 >= extras.size())
      throw diffseg::ConfigError("override --" + key + " is missing a value");
    config.set(key, extras[++i]);
  }
}

std::vector<int> parse_sizes(const std::string& csv) {
  std::vector<int> out;
  std::istringstream in(csv);
  std::string tok;
  while (std::getline(in, tok, ',')) out.push_back(std::stoi(tok));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"conditional diffusion segmentation toolkit"};
  app.require_subcommand(1);

  std::string config_path, out, checkpoint, data_dir, split = "test", image_id, image_path,
              resume, ids_csv, sizes_csv = "1,5,25";
  int n = -1;
  bool force = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file of flat keys");
    cmd->add_option("--out", out, "output directory (default runs/<cmd>_<timestamp>)");
    cmd->add_flag("--force", force, "allow writing into an existing non-empty directory");
    cmd->allow_extras();
  };

  auto* gen = app.add_subcommand("generate-data", "write the synthetic dataset + manifest");
  add_common(gen);

  auto* train = app.add_subcommand("train", "train the denoiser");
  add_common(train);
  train->add_option("--data", data_dir, "dataset directory")->required();
  train->add_option("--resume", resume, "checkpoint to resume from");

  auto* sample = app.add_subcommand("sample", "sample an ensemble for one image");
  add_common(sample);
  sample->add_option("--checkpoint", checkpoint, "trained checkpoint")->required();
  sample->add_option("--data", data_dir, "dataset directory (for --id)");
  sample->add_option("--id", image_id, "slice id from the dataset manifest");
  sample->add_option("--image", image_path, "path to a prior .arr file");
  sample->add_option("--n", n, "ensemble size (default ensemble.n)");

  auto* evaluate = app.add_subcommand("evaluate", "metrics report over a split");
  add_common(evaluate);
  evaluate->add_option("--checkpoint", checkpoint, "trained checkpoint")->required();
  evaluate->add_option("--data", data_dir, "dataset directory")->required();
  evaluate->add_option("--split", split, "train|test (default test)");
  evaluate->add_option("--n", n, "ensemble size (default ensemble.n)");

  auto* curve = app.add_subcommand("curve", "Dice vs ensemble size");
  add_common(curve);
  curve->add_option("--checkpoint", checkpoint, "trained checkpoint")->required();
  curve->add_option("--data", data_dir, "dataset directory")->required();
  curve->add_option("--ids", ids_csv, "comma-separated slice ids")->required();
  curve->add_option("--sizes", sizes_csv, "comma-separated ensemble sizes (default 1,5,25)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    diffseg::RunConfig config;
    if (!config_path.empty()) config.load_file(config_path);

    CLI::App* active = app.get_subcommands().front();
    apply_overrides(config, active->remaining());
    const std::string name = active->get_name();
    const std::filesystem::path out_dir = out.empty() ? default_out_dir(name) : out;

    if (active == gen) {
      diffseg::cmd_generate_data(config, out_dir, force);
    } else if (active == train) {
      std::optional<std::filesystem::path> resume_path;
      if (!resume.empty()) resume_path = resume;
      diffseg::cmd_train(config, data_dir, out_dir, resume_path, force);
    } else if (active == sample) {
      std::optional<std::filesystem::path> data, img;
      std::optional<std::string> id;
      if (!data_dir.empty()) data = data_dir;
      if (!image_id.empty()) id = image_id;
      if (!image_path.empty()) img = image_path;
      const int count = n > 0 ? n : static_cast<int>(config.get_int("ensemble.n"));
      diffseg::cmd_sample(config, checkpoint, data, id, img, count, out_dir, force);
    } else if (active == evaluate) {
      const int count = n > 0 ? n : static_cast<int>(config.get_int("ensemble.n"));
      diffseg::cmd_evaluate(config, checkpoint, data_dir, split, count, out_dir, force);
    } else if (active == curve) {
      std::vector<std::string> ids;
      std::istringstream in(ids_csv);
      std::string tok;
      while (std::getline(in, tok, ',')) ids.push_back(tok);
      diffseg::cmd_curve(config, checkpoint, data_dir, ids, parse_sizes(sizes_csv), out_dir,
                         force);
    }
    return 0;
  } catch (const diffseg::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const diffseg::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const diffseg::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const diffseg::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 5;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
