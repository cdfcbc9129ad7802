// SPDX-License-Identifier: Apache-2.0
#include "diffseg/commands.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "diffseg/array_io.hpp"
#include "diffseg/checkpoint.hpp"
#include "diffseg/errors.hpp"
#include "diffseg/image_io.hpp"
#include "diffseg/trainer.hpp"

namespace diffseg {

void prepare_out_dir(const std::filesystem::path& dir, bool force) {
  namespace fs = std::filesystem;
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!force)
      throw IoError("output directory " + dir.string() +
                    " exists and is not empty; pass --force to overwrite");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
}

int cmd_generate_data(const RunConfig& config, const std::filesystem::path& out_dir, bool force) {
  apply_determinism(config);
  prepare_out_dir(out_dir, force);

  const auto spec = config.synthetic_spec();
  auto slices = generate_synthetic(spec);
  const auto split =
      split_dataset(slices, config.get_real("split.train_fraction"),
                    static_cast<std::uint64_t>(config.get_int("split.seed")),
                    config.get_bool("split.group_by_patient"));
  save_dataset(out_dir, split);
  config.write_echo(out_dir, "generate-data");
  std::cout << "wrote " << slices.size() << " slices (" << split.train.size() << " train, "
            << split.test.size() << " test, " << split.excluded_empty_test.size()
            << " excluded empty-mask test) to " << out_dir << "\n";
  return static_cast<int>(slices.size());
}

namespace {

// The dataset is the source of truth for its own geometry; explicit
// conflicting overrides are refused, everything else is adopted.
void adopt_dataset_geometry(RunConfig& config, const std::vector<LabeledSlice>& slices) {
  const auto& first = slices.front();
  const std::pair<const char*, std::int64_t> keys[] = {
      {"data.channels", first.prior.size(0)},
      {"data.height", first.prior.size(1)},
      {"data.width", first.prior.size(2)}};
  for (const auto& [key, value] : keys) {
    const auto str = std::to_string(value);
    if (config.was_set(key) && config.get_raw(key) != str)
      throw ConfigError(std::string(key) + "=" + config.get_raw(key) +
                        " conflicts with the dataset (" + str + ")");
    config.set(key, str);
  }
}

}  // namespace

std::filesystem::path cmd_train(RunConfig config, const std::filesystem::path& data_dir,
                                const std::filesystem::path& out_dir,
                                const std::optional<std::filesystem::path>& resume, bool force) {
  apply_determinism(config);
  if (!resume) prepare_out_dir(out_dir, force);
  std::filesystem::create_directories(out_dir);

  const auto train_slices = load_dataset(data_dir, "train");
  adopt_dataset_geometry(config, train_slices);
  const auto model_config = config.denoiser_config();
  const auto schedule = config.make_schedule();

  Trainer trainer(model_config, config.train_config(), schedule);
  trainer.run_config_echo = config.resolved();
  if (resume) {
    const auto ckpt = load_checkpoint(*resume);
    trainer.restore(ckpt);
    std::cout << "resumed from " << *resume << " at iteration " << trainer.iteration() << "\n";
  }
  config.write_echo(out_dir, "train");
  std::cout << "training on " << train_slices.size() << " slices, "
            << count_parameters(model_config) << " parameters\n";
  const auto final_path = trainer.fit(train_slices, out_dir);
  std::cout << "final checkpoint: " << final_path << "\n";
  return final_path;
}

LoadedModel load_model(RunConfig& config, const std::filesystem::path& checkpoint_path) {
  const auto ckpt = load_checkpoint(checkpoint_path);

  // Adopt the checkpoint's recorded keys; explicit conflicting overrides are
  // refused rather than silently producing a different model.
  static const char* kAdopted[] = {
      "schedule.T",          "schedule.beta_start",    "schedule.beta_end",
      "schedule.scale_endpoints", "data.channels",     "data.height",
      "data.width",          "model.base_channels",    "model.channel_multipliers",
      "model.attention_resolutions", "model.attention_heads", "model.time_embedding_dim",
      "model.res_blocks",    "model.ema"};
  for (const char* key : kAdopted) {
    const auto it = ckpt.run_config.find(key);
    if (it == ckpt.run_config.end()) continue;
    if (config.was_set(key) && config.get_raw(key) != it->second)
      throw ConfigError(std::string("config key ") + key + "='" + config.get_raw(key) +
                        "' conflicts with checkpoint value '" + it->second + "'");
    config.set(key, it->second);
  }

  LoadedModel m;
  m.schedule = config.make_schedule();
  m.options = config.sampling_options();
  const auto net_config = config.denoiser_config();
  if (!(net_config == ckpt.model))
    throw ConfigError("checkpoint model config does not match the resolved configuration");
  m.net = UNet(net_config);
  const bool use_ema = config.get_bool("model.ema") && ckpt.tensors.count("ema/" + m.net->named_parameters().begin()->key());
  load_parameters(m.net, ckpt, use_ema ? "ema/" : "");
  m.net->eval();
  return m;
}

namespace {

torch::Tensor load_prior_by_id(const std::filesystem::path& data_dir, const std::string& id) {
  const auto entries = read_manifest(data_dir / "manifest.tsv");
  for (const auto& e : entries) {
    if (e.id == id && e.relative_path.find("_prior.arr") != std::string::npos)
      return load_array(data_dir / e.relative_path);
  }
  throw DataError("id '" + id + "' not found in " + (data_dir / "manifest.tsv").string());
}

}  // namespace

EnsembleSummary cmd_sample(RunConfig config, const std::filesystem::path& checkpoint_path,
                           const std::optional<std::filesystem::path>& data_dir,
                           const std::optional<std::string>& image_id,
                           const std::optional<std::filesystem::path>& image_path, int n,
                           const std::filesystem::path& out_dir, bool force) {
  apply_determinism(config);
  if (static_cast<bool>(image_id) == static_cast<bool>(image_path))
    throw ConfigError("cmd_sample: provide exactly one of --id or --image");
  if (image_id && !data_dir) throw ConfigError("cmd_sample: --id requires --data");
  if (n < 1) throw ConfigError("cmd_sample: n must be >= 1");
  prepare_out_dir(out_dir, force);

  auto model = load_model(config, checkpoint_path);
  torch::Tensor prior =
      image_id ? load_prior_by_id(*data_dir, *image_id) : load_array(*image_path);
  if (prior.dim() != 3 || prior.size(0) != model.net->config().in_channels - 1)
    throw DataError("prior has wrong shape for the checkpointed model");

  auto fn = as_predict_fn(model.net);
  const auto base_seed = static_cast<std::uint64_t>(config.get_int("ensemble.base_seed"));
  auto summary = build_ensemble(fn, prior, model.schedule, n, base_seed, model.options);
  save_ensemble_summary(out_dir, summary, model.schedule, model.options);
  config.write_echo(out_dir, "sample");
  std::cout << "wrote " << n << "-sample ensemble to " << out_dir
            << (is_empty(summary.binary_mask) ? " (empty segmentation)" : "") << "\n";
  return summary;
}

EvaluateResult cmd_evaluate(RunConfig config, const std::filesystem::path& checkpoint_path,
                            const std::filesystem::path& data_dir, const std::string& split,
                            int n, const std::filesystem::path& out_dir, bool force) {
  apply_determinism(config);
  if (n < 1) throw ConfigError("cmd_evaluate: n must be >= 1");
  prepare_out_dir(out_dir, force);

  auto model = load_model(config, checkpoint_path);
  auto slices = load_dataset(data_dir, split);
  const auto limit = config.get_int("eval.limit");
  if (limit > 0 && static_cast<std::int64_t>(slices.size()) > limit)
    slices.resize(static_cast<std::size_t>(limit));

  auto fn = as_predict_fn(model.net);
  const auto base_seed = static_cast<std::uint64_t>(config.get_int("ensemble.base_seed"));

  std::vector<PerImageMetrics> single_records, ensemble_records;
  int done = 0;
  for (const auto& slice : slices) {
    // one draw of n samples serves both rows: the first sample is the
    // single-run prediction, the mean of all n the ensemble prediction
    const auto summary =
        build_ensemble(fn, slice.prior, model.schedule, n, base_seed, model.options);
    const auto single_pred = summary.samples[0].gt(0.5).to(torch::kUInt8);
    const auto ens_pred = summary.binary_mask;

    auto record = [&](const torch::Tensor& pred) {
      PerImageMetrics r;
      r.id = slice.id;
      r.dice = dice(pred, slice.mask);
      r.jaccard = jaccard(pred, slice.mask);
      r.hd95 = hd95(pred, slice.mask);
      r.empty = is_empty(pred);
      return r;
    };
    single_records.push_back(record(single_pred));
    ensemble_records.push_back(record(ens_pred));
    ++done;
    if (done % 10 == 0) std::cout << "evaluated " << done << "/" << slices.size() << "\n";
  }

  EvaluateResult result{aggregate(std::move(single_records)), aggregate(std::move(ensemble_records))};

  {
    std::ofstream f(out_dir / "per_image_single.tsv", std::ios::trunc);
    f << report_records_tsv(result.single);
  }
  {
    std::ofstream f(out_dir / "per_image_ensemble.tsv", std::ios::trunc);
    f << report_records_tsv(result.ensemble);
  }
  const auto table = format_report_table({{"single sample (1 run)", result.single},
                                          {"ensemble of " + std::to_string(n) + " runs",
                                           result.ensemble}});
  {
    std::ofstream f(out_dir / "report.txt", std::ios::trunc);
    f << table;
  }
  config.write_echo(out_dir, "evaluate");
  std::cout << table;
  return result;
}

std::vector<CurveRow> cmd_curve(RunConfig config, const std::filesystem::path& checkpoint_path,
                                const std::filesystem::path& data_dir,
                                const std::vector<std::string>& ids, const std::vector<int>& sizes,
                                const std::filesystem::path& out_dir, bool force) {
  apply_determinism(config);
  if (ids.empty()) throw ConfigError("cmd_curve: no image ids");
  prepare_out_dir(out_dir, force);

  auto model = load_model(config, checkpoint_path);
  auto slices = load_dataset(data_dir, "test");
  std::map<std::string, const LabeledSlice*> by_id;
  for (const auto& s : slices) by_id[s.id] = &s;

  auto fn = as_predict_fn(model.net);
  const auto base_seed = static_cast<std::uint64_t>(config.get_int("ensemble.base_seed"));

  std::vector<CurveRow> rows;
  std::map<int, double> mean_acc;
  for (const auto& id : ids) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw DataError("curve: id '" + id + "' not in test split");
    const auto curve = ensemble_curve(fn, it->second->prior, it->second->mask, model.schedule,
                                      sizes, base_seed, model.options);
    for (const auto& pt : curve) {
      rows.push_back({id, pt.n, pt.dice});
      mean_acc[pt.n] += pt.dice;
    }
  }

  {
    std::ofstream f(out_dir / "curve.tsv", std::ios::trunc);
    f << "id\tn\tdice\n" << std::setprecision(10);
    for (const auto& r : rows) f << r.id << '\t' << r.n << '\t' << r.dice << '\n';
  }
  std::vector<CurvePoint> mean_curve;
  for (const auto& [size, total] : mean_acc)
    mean_curve.push_back({size, total / static_cast<double>(ids.size())});
  save_curve_plot(out_dir / "curve.pgm", mean_curve);
  config.write_echo(out_dir, "curve");
  return rows;
}

}  // namespace diffseg
