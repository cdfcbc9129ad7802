// SPDX-License-Identifier: Apache-2.0
#include "diffseg/denoiser.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "diffseg/errors.hpp"

namespace diffseg {

namespace {

int norm_groups(int channels) { return std::gcd(32, channels); }

void zero_init(torch::nn::Conv2d& conv) {
  torch::NoGradGuard g;
  conv->weight.zero_();
  conv->bias.zero_();
}

}  // namespace

void DenoiserConfig::validate() const {
  if (in_channels < 2) throw ConfigError("denoiser: in_channels must be >= 2 (prior + mask)");
  if (base_channels < 1) throw ConfigError("denoiser: base_channels must be >= 1");
  if (base_channels % 2 != 0) throw ConfigError("denoiser: base_channels must be even");
  if (channel_multipliers.empty()) throw ConfigError("denoiser: channel_multipliers empty");
  for (int m : channel_multipliers)
    if (m < 1) throw ConfigError("denoiser: channel multipliers must be positive");
  if (attention_heads < 1) throw ConfigError("denoiser: attention_heads must be >= 1");
  const int levels = static_cast<int>(channel_multipliers.size());
  const int factor = 1 << (levels - 1);
  if (image_size < factor || image_size % factor != 0)
    throw ConfigError("denoiser: image_size must be divisible by 2^(levels-1)");
  if (res_blocks < 1) throw ConfigError("denoiser: res_blocks must be >= 1");
}

ResBlockImpl::ResBlockImpl(int cin, int cout, int time_dim) {
  norm1_ = register_module("norm1", torch::nn::GroupNorm(norm_groups(cin), cin));
  conv1_ = register_module(
      "conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(cin, cout, 3).padding(1)));
  emb_ = register_module("emb", torch::nn::Linear(time_dim, cout));
  norm2_ = register_module("norm2", torch::nn::GroupNorm(norm_groups(cout), cout));
  conv2_ = register_module(
      "conv2", torch::nn::Conv2d(torch::nn::Conv2dOptions(cout, cout, 3).padding(1)));
  zero_init(conv2_);
  if (cin != cout)
    skip_ = register_module("skip", torch::nn::Conv2d(torch::nn::Conv2dOptions(cin, cout, 1)));
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& temb) {
  auto h = conv1_(torch::silu(norm1_(x)));
  h = h + emb_(torch::silu(temb)).unsqueeze(-1).unsqueeze(-1);
  h = conv2_(torch::silu(norm2_(h)));
  return h + (skip_ ? skip_(x) : x);
}

AttentionBlockImpl::AttentionBlockImpl(int channels, int heads) : heads_(heads) {
  if (channels % heads != 0) throw ConfigError("attention: heads must divide channels");
  norm_ = register_module("norm", torch::nn::GroupNorm(norm_groups(channels), channels));
  qkv_ = register_module("qkv",
                         torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, 3 * channels, 1)));
  proj_ = register_module("proj",
                          torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, 1)));
  zero_init(proj_);
}

torch::Tensor AttentionBlockImpl::forward(const torch::Tensor& x) {
  const auto b = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  const auto d = c / heads_;
  auto qkv = qkv_(norm_(x)).reshape({b, 3, heads_, d, h * w});
  auto q = qkv.select(1, 0), k = qkv.select(1, 1), v = qkv.select(1, 2);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  auto attn = torch::softmax(torch::matmul(q.transpose(-2, -1), k) * scale, -1);
  auto out = torch::matmul(v, attn.transpose(-2, -1)).reshape({b, c, h, w});
  return x + proj_(out);
}

UNetImpl::UNetImpl(DenoiserConfig config) : config_(std::move(config)) {
  config_.validate();
  const int base = config_.base_channels;
  const int td = config_.resolved_time_dim();
  const int levels = static_cast<int>(config_.channel_multipliers.size());

  time_fc1_ = register_module("time_fc1", torch::nn::Linear(base, td));
  time_fc2_ = register_module("time_fc2", torch::nn::Linear(td, td));
  stem_ = register_module(
      "stem", torch::nn::Conv2d(torch::nn::Conv2dOptions(config_.in_channels, base, 3).padding(1)));

  auto attn_here = [&](int resolution) {
    return config_.attention_resolutions.count(resolution) > 0;
  };

  std::vector<int> skip_channels{base};
  int ch = base;
  int resolution = config_.image_size;
  enc_.resize(static_cast<std::size_t>(levels));
  for (int level = 0; level < levels; ++level) {
    const int want = base * config_.channel_multipliers[static_cast<std::size_t>(level)];
    for (int r = 0; r < config_.res_blocks; ++r) {
      Stage st;
      std::ostringstream name;
      name << "enc_l" << level << "_r" << r;
      st.res = register_module(name.str(), ResBlock(ch, want, td));
      ch = want;
      if (attn_here(resolution))
        st.attn = register_module(name.str() + "_attn", AttentionBlock(ch, config_.attention_heads));
      enc_[static_cast<std::size_t>(level)].push_back(std::move(st));
      skip_channels.push_back(ch);
    }
    if (level != levels - 1) {
      std::ostringstream name;
      name << "down_l" << level;
      down_.push_back(register_module(
          name.str(), torch::nn::Conv2d(torch::nn::Conv2dOptions(ch, ch, 3).stride(2).padding(1))));
      skip_channels.push_back(ch);
      resolution /= 2;
    }
  }

  mid_res1_ = register_module("mid_res1", ResBlock(ch, ch, td));
  mid_attn_ = register_module("mid_attn", AttentionBlock(ch, config_.attention_heads));
  mid_res2_ = register_module("mid_res2", ResBlock(ch, ch, td));

  dec_.resize(static_cast<std::size_t>(levels));
  for (int level = levels - 1; level >= 0; --level) {
    const int want = base * config_.channel_multipliers[static_cast<std::size_t>(level)];
    for (int r = 0; r < config_.res_blocks + 1; ++r) {
      const int skip_ch = skip_channels.back();
      skip_channels.pop_back();
      Stage st;
      std::ostringstream name;
      name << "dec_l" << level << "_r" << r;
      st.res = register_module(name.str(), ResBlock(ch + skip_ch, want, td));
      ch = want;
      if (attn_here(resolution))
        st.attn = register_module(name.str() + "_attn", AttentionBlock(ch, config_.attention_heads));
      dec_[static_cast<std::size_t>(level)].push_back(std::move(st));
    }
    if (level != 0) {
      std::ostringstream name;
      name << "up_l" << level;
      up_conv_.push_back(register_module(
          name.str(), torch::nn::Conv2d(torch::nn::Conv2dOptions(ch, ch, 3).padding(1))));
      resolution *= 2;
    }
  }

  out_norm_ = register_module("out_norm", torch::nn::GroupNorm(norm_groups(base), base));
  out_conv_ = register_module(
      "out_conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(base, 2, 3).padding(1)));
  zero_init(out_conv_);
}

torch::Tensor UNetImpl::time_embedding(const torch::Tensor& t) const {
  const int dim = config_.base_channels;
  const int half = dim / 2;
  auto freqs = torch::exp(torch::arange(half, torch::kFloat32) *
                          (-std::log(10000.0) / static_cast<double>(half)));
  auto args = t.to(torch::kFloat32).unsqueeze(1) * freqs.unsqueeze(0);
  return torch::cat({torch::cos(args), torch::sin(args)}, 1).to(t.device());
}

torch::Tensor UNetImpl::forward(const torch::Tensor& x, const torch::Tensor& t) {
  if (x.dim() != 4 || x.size(1) != config_.in_channels) {
    std::ostringstream msg;
    msg << "denoiser: expected (B," << config_.in_channels << ",s,s) input, got " << x.sizes();
    throw DataError(msg.str());
  }
  if (x.size(2) != config_.image_size || x.size(3) != config_.image_size)
    throw DataError("denoiser: spatial size does not match config.image_size");
  if (t.dim() != 1 || t.size(0) != x.size(0))
    throw DataError("denoiser: step tensor must be (B,)");

  auto sinusoid = time_embedding(t).to(time_fc1_->weight.dtype());
  auto temb = time_fc2_(torch::silu(time_fc1_(sinusoid))).to(x.dtype());

  std::vector<torch::Tensor> skips;
  auto h = stem_(x);
  skips.push_back(h);
  const int levels = static_cast<int>(enc_.size());
  for (int level = 0; level < levels; ++level) {
    for (auto& st : enc_[static_cast<std::size_t>(level)]) {
      h = st.res->forward(h, temb);
      if (st.attn) h = st.attn->forward(h);
      skips.push_back(h);
    }
    if (level != levels - 1) {
      h = down_[static_cast<std::size_t>(level)](h);
      skips.push_back(h);
    }
  }

  h = mid_res1_->forward(h, temb);
  h = mid_attn_->forward(h);
  h = mid_res2_->forward(h, temb);

  std::size_t up_idx = 0;
  for (int level = levels - 1; level >= 0; --level) {
    for (auto& st : dec_[static_cast<std::size_t>(level)]) {
      auto skip = skips.back();
      skips.pop_back();
      h = st.res->forward(torch::cat({h, skip}, 1), temb);
      if (st.attn) h = st.attn->forward(h);
    }
    if (level != 0) {
      namespace F = torch::nn::functional;
      h = F::interpolate(h, F::InterpolateFuncOptions()
                                .size(std::vector<std::int64_t>{h.size(2) * 2, h.size(3) * 2})
                                .mode(torch::kNearest));
      h = up_conv_[up_idx++](h);
    }
  }

  return out_conv_(torch::silu(out_norm_(h)));
}

DenoiserOutput predict(UNet& net, const torch::Tensor& stacked, const torch::Tensor& t) {
  const bool batched = stacked.dim() == 4;
  auto x = batched ? stacked : stacked.unsqueeze(0);
  auto raw = net->forward(x, t);
  auto eps_hat = raw.narrow(1, 0, 1);
  auto v = ((raw.narrow(1, 1, 1) + 1.0) / 2.0).clamp(0.0, 1.0);
  if (!batched) {
    eps_hat = eps_hat.squeeze(0);
    v = v.squeeze(0);
  }
  return {eps_hat, v};
}

DenoiserOutput predict(UNet& net, const torch::Tensor& stacked, int t) {
  if (t < 1) throw ConfigError("predict: step must be >= 1");
  auto ts = torch::tensor({static_cast<float>(t)});
  return predict(net, stacked, ts);
}

PredictFn as_predict_fn(UNet& net) {
  return [&net](const torch::Tensor& stacked, const torch::Tensor& t) {
    torch::NoGradGuard no_grad;
    const bool was_training = net->is_training();
    net->eval();
    auto out = predict(net, stacked, t);
    if (was_training) net->train();
    return out;
  };
}

std::int64_t count_parameters(const DenoiserConfig& config) {
  config.validate();
  UNet net(config);
  std::int64_t n = 0;
  for (const auto& p : net->parameters()) n += p.numel();
  return n;
}

}  // namespace diffseg
