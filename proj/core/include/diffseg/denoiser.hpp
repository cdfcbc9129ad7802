// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <torch/torch.h>

#include <functional>
#include <set>
#include <vector>

#include "diffseg/diffusion.hpp"

namespace diffseg {

/// Architecture description; every field is recorded in checkpoints so runs
/// are reproducible. `time_embedding_dim == 0` means 4 * base_channels.
struct DenoiserConfig {
  int in_channels = 5;  // prior channels + 1 mask channel
  int base_channels = 32;
  std::vector<int> channel_multipliers = {1, 2, 2};
  std::set<int> attention_resolutions = {16};
  int attention_heads = 1;
  int time_embedding_dim = 0;
  int image_size = 64;
  int res_blocks = 1;

  int resolved_time_dim() const {
    return time_embedding_dim > 0 ? time_embedding_dim : 4 * base_channels;
  }
  void validate() const;
  bool operator==(const DenoiserConfig&) const = default;
};

class ResBlockImpl : public torch::nn::Module {
 public:
  ResBlockImpl(int cin, int cout, int time_dim);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& temb);

 private:
  torch::nn::GroupNorm norm1_{nullptr}, norm2_{nullptr};
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, skip_{nullptr};
  torch::nn::Linear emb_{nullptr};
};
TORCH_MODULE(ResBlock);

class AttentionBlockImpl : public torch::nn::Module {
 public:
  AttentionBlockImpl(int channels, int heads);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  int heads_;
  torch::nn::GroupNorm norm_{nullptr};
  torch::nn::Conv2d qkv_{nullptr}, proj_{nullptr};
};
TORCH_MODULE(AttentionBlock);

/// Encoder/decoder noise-prediction network: residual blocks with group
/// norm + SiLU, strided-conv downsampling, nearest+conv upsampling,
/// concatenated skip connections, additive sinusoidal timestep conditioning,
/// and self-attention at the configured resolutions. Output has 2 channels:
/// the noise estimate and the raw variance coefficient.
class UNetImpl : public torch::nn::Module {
 public:
  explicit UNetImpl(DenoiserConfig config);

  /// x: (B, in_channels, s, s); t: (B,) float tensor of 1-based steps.
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& t);

  const DenoiserConfig& config() const { return config_; }

 private:
  torch::Tensor time_embedding(const torch::Tensor& t) const;

  DenoiserConfig config_;
  torch::nn::Linear time_fc1_{nullptr}, time_fc2_{nullptr};
  torch::nn::Conv2d stem_{nullptr}, out_conv_{nullptr};
  torch::nn::GroupNorm out_norm_{nullptr};

  struct Stage {
    ResBlock res{nullptr};
    AttentionBlock attn{nullptr};  // null when unused
  };
  std::vector<std::vector<Stage>> enc_, dec_;
  std::vector<torch::nn::Conv2d> down_;
  std::vector<torch::nn::Conv2d> up_conv_;
  ResBlock mid_res1_{nullptr}, mid_res2_{nullptr};
  AttentionBlock mid_attn_{nullptr};
};

class UNet : public torch::nn::ModuleHolder<UNetImpl> {
 public:
  using torch::nn::ModuleHolder<UNetImpl>::ModuleHolder;
  using Impl = UNetImpl;
  UNet() = delete;  // construct from a DenoiserConfig, or nullptr for empty
};

/// Any noise predictor usable by the trainer and sampler; tests substitute
/// oracles through the same signature. Input (B,c+1,h,w) + 1-based steps
/// (B,), output tensors (B,1,h,w).
using PredictFn = std::function<DenoiserOutput(const torch::Tensor&, const torch::Tensor&)>;

/// Runs the network and applies the output mapping: channel 0 is eps_hat,
/// channel 1 maps to v = clamp((raw+1)/2, 0, 1). Accepts a single (c+1,h,w)
/// input with an int step, or a batch with a step tensor.
DenoiserOutput predict(UNet& net, const torch::Tensor& stacked, const torch::Tensor& t);
DenoiserOutput predict(UNet& net, const torch::Tensor& stacked, int t);

/// Wraps a network (in eval mode, no grad) as a PredictFn.
PredictFn as_predict_fn(UNet& net);

/// Exact trainable-parameter count for a config (instantiates the network).
std::int64_t count_parameters(const DenoiserConfig& config);

}  // namespace diffseg
