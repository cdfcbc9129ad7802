// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <map>
#include <optional>
#include <vector>

#include "diffseg/checkpoint.hpp"
#include "diffseg/data.hpp"
#include "diffseg/denoiser.hpp"
#include "diffseg/schedule.hpp"

namespace diffseg {

struct TrainConfig {
  double learning_rate = 1e-4;
  int batch_size = 10;
  std::int64_t iterations = 8000;
  double lambda_vlb = 0.001;
  std::uint64_t seed = 42;
  std::int64_t checkpoint_every = 1000;
  double clip_norm = 0.0;  // 0 disables gradient clipping
  bool ema = false;
  void validate() const;
};

/// Per-item randomness for one training iteration, derived purely from
/// (seed, iteration) so interrupted runs resume on the identical stream.
struct BatchDraw {
  std::vector<int> t;        // 1-based steps, one per item
  torch::Tensor eps;         // (B,1,h,w) standard normal
};

BatchDraw draw_batch_noise(std::uint64_t seed, std::int64_t iteration, int batch_size, int T,
                           std::int64_t h, std::int64_t w);

struct LossParts {
  torch::Tensor total, simple, vlb;
};

/// Noises each mask at its drawn step, stacks it with the prior (checked
/// bit-exact against the clean prior), runs the predictor, and assembles
/// simple + lambda * vlb. Works with any predictor, which is how tests
/// substitute oracles.
LossParts compute_batch_loss(const PredictFn& predict_fn,
                             const std::vector<const LabeledSlice*>& batch, const BatchDraw& draw,
                             const NoiseSchedule& schedule, double lambda_vlb);

struct StepStats {
  double loss = 0, loss_simple = 0, loss_vlb = 0;
  std::vector<int> t_values;
};

/// Owns the network, the Adam moments, and the optional EMA shadow. One
/// logical writer; sampling reads frozen snapshots via checkpoints.
class Trainer {
 public:
  Trainer(DenoiserConfig model_config, TrainConfig config, NoiseSchedule schedule);

  /// One optimizer update on a minibatch; randomness comes from
  /// (config.seed, current iteration). Throws NumericError with a diagnostic
  /// dump when the loss goes non-finite.
  StepStats train_step(const std::vector<const LabeledSlice*>& batch);

  /// Runs `iterations` steps over shuffled minibatches (reshuffled each
  /// epoch, seeded, dropping the ragged tail). Writes ckpt_<iter>.bin every
  /// checkpoint_every steps, final.bin at the end, and a line-delimited
  /// metrics log `iteration<TAB>loss<TAB>loss_simple<TAB>loss_vlb<TAB>seconds`.
  /// Returns the final checkpoint path.
  std::filesystem::path fit(const std::vector<LabeledSlice>& train_slices,
                            const std::filesystem::path& out_dir);

  Checkpoint to_checkpoint() const;
  void restore(const Checkpoint& ckpt);

  UNet& net() { return net_; }
  std::int64_t iteration() const { return iteration_; }
  const TrainConfig& config() const { return config_; }

  /// Resolved-config echo stored into every checkpoint this trainer writes.
  std::map<std::string, std::string> run_config_echo;

 private:
  void adam_update();

  DenoiserConfig model_config_;
  TrainConfig config_;
  NoiseSchedule schedule_;
  UNet net_{nullptr};
  std::map<std::string, torch::Tensor> adam_m_, adam_v_, ema_;
  std::int64_t adam_step_ = 0;
  std::int64_t iteration_ = 0;
};

}  // namespace diffseg
