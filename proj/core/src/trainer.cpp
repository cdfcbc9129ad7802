// SPDX-License-Identifier: Apache-2.0
#include "diffseg/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "diffseg/diffusion.hpp"
#include "diffseg/errors.hpp"
#include "diffseg/rng.hpp"

namespace diffseg {

namespace {
constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;
constexpr double kEmaDecay = 0.9999;

at::Generator cpu_generator(std::uint64_t seed) {
  auto gen = at::detail::createCPUGenerator(seed);
  return gen;
}
}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0 && learning_rate < 1.0))
    throw ConfigError("train: learning_rate must be in (0,1)");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (iterations < 0) throw ConfigError("train: iterations must be >= 0");
  if (lambda_vlb < 0.0) throw ConfigError("train: lambda_vlb must be >= 0");
  if (checkpoint_every < 1) throw ConfigError("train: checkpoint_every must be >= 1");
  if (clip_norm < 0.0) throw ConfigError("train: clip_norm must be >= 0");
}

BatchDraw draw_batch_noise(std::uint64_t seed, std::int64_t iteration, int batch_size, int T,
                           std::int64_t h, std::int64_t w) {
  BatchDraw draw;
  auto gen_t = cpu_generator(derive_seed(seed, "t", static_cast<std::uint64_t>(iteration)));
  auto ts = torch::randint(1, T + 1, {batch_size}, gen_t, torch::kInt64);
  draw.t.resize(static_cast<std::size_t>(batch_size));
  for (int i = 0; i < batch_size; ++i) draw.t[static_cast<std::size_t>(i)] = static_cast<int>(ts[i].item<std::int64_t>());
  auto gen_eps = cpu_generator(derive_seed(seed, "eps", static_cast<std::uint64_t>(iteration)));
  draw.eps = torch::randn({batch_size, 1, h, w}, gen_eps, torch::kFloat32);
  return draw;
}

LossParts compute_batch_loss(const PredictFn& predict_fn,
                             const std::vector<const LabeledSlice*>& batch, const BatchDraw& draw,
                             const NoiseSchedule& schedule, double lambda_vlb) {
  if (batch.empty()) throw DataError("compute_batch_loss: empty batch");
  const auto B = static_cast<int>(batch.size());

  std::vector<torch::Tensor> x0s, xts, stacked;
  x0s.reserve(batch.size());
  for (int i = 0; i < B; ++i) {
    const auto& slice = *batch[static_cast<std::size_t>(i)];
    auto x0 = mask_to_signal(slice.mask);
    auto xt = forward_noise(x0, draw.t[static_cast<std::size_t>(i)], draw.eps[i], schedule);
    auto st = make_conditioned_state(slice.prior, xt, draw.t[static_cast<std::size_t>(i)]);
    // the prior is never noised; the stacked input must carry it bit-exactly
    if (!torch::equal(st.stacked.narrow(0, 0, slice.prior.size(0)), slice.prior))
      throw std::logic_error("trainer invariant violated: prior channels were modified");
    x0s.push_back(std::move(x0));
    xts.push_back(std::move(xt));
    stacked.push_back(st.stacked);
  }

  auto X = torch::stack(stacked, 0);
  auto tvec = torch::empty({B}, torch::kFloat32);
  for (int i = 0; i < B; ++i) tvec[i] = static_cast<float>(draw.t[static_cast<std::size_t>(i)]);

  auto out = predict_fn(X, tvec);
  auto simple = simple_loss(draw.eps, out.eps_hat);

  torch::Tensor vlb = torch::zeros({}, simple.options());
  for (int i = 0; i < B; ++i) {
    DenoiserOutput item{out.eps_hat[i], out.v[i]};
    vlb = vlb + vlb_term(x0s[static_cast<std::size_t>(i)], xts[static_cast<std::size_t>(i)],
                         draw.t[static_cast<std::size_t>(i)], item, schedule);
  }
  vlb = vlb / static_cast<double>(B);

  return {hybrid_loss(simple, vlb, lambda_vlb), simple, vlb};
}

Trainer::Trainer(DenoiserConfig model_config, TrainConfig config, NoiseSchedule schedule)
    : model_config_(std::move(model_config)), config_(config), schedule_(std::move(schedule)) {
  config_.validate();
  model_config_.validate();
  // parameter init draws from a seed-derived stream, so two trainers with the
  // same config start bit-identical
  torch::manual_seed(derive_seed(config_.seed, "init"));
  net_ = UNet(model_config_);
  torch::NoGradGuard g;
  for (const auto& p : net_->named_parameters()) {
    adam_m_[p.key()] = torch::zeros_like(p.value());
    adam_v_[p.key()] = torch::zeros_like(p.value());
    if (config_.ema) ema_[p.key()] = p.value().clone();
  }
}

StepStats Trainer::train_step(const std::vector<const LabeledSlice*>& batch) {
  if (batch.empty()) throw DataError("train_step: empty batch");
  const auto h = batch.front()->mask.size(1), w = batch.front()->mask.size(2);
  const auto draw = draw_batch_noise(config_.seed, iteration_, static_cast<int>(batch.size()),
                                     schedule_.T, h, w);

  net_->train();
  PredictFn train_predict = [this](const torch::Tensor& X, const torch::Tensor& t) {
    return predict(net_, X, t);
  };
  auto parts = compute_batch_loss(train_predict, batch, draw, schedule_, config_.lambda_vlb);

  StepStats stats;
  stats.loss = parts.total.item<double>();
  stats.loss_simple = parts.simple.item<double>();
  stats.loss_vlb = parts.vlb.item<double>();
  stats.t_values = draw.t;
  if (!std::isfinite(stats.loss)) {
    std::ostringstream msg;
    msg << "non-finite loss at iteration " << iteration_ << " (simple=" << stats.loss_simple
        << ", vlb=" << stats.loss_vlb << ", t=[";
    for (std::size_t i = 0; i < draw.t.size(); ++i) msg << (i ? "," : "") << draw.t[i];
    msg << "])";
    throw NumericError(msg.str());
  }

  net_->zero_grad();
  parts.total.backward();
  adam_update();
  ++iteration_;
  return stats;
}

void Trainer::adam_update() {
  torch::NoGradGuard g;
  if (config_.clip_norm > 0.0) {
    double sq_sum = 0.0;
    for (const auto& p : net_->parameters())
      if (p.grad().defined()) sq_sum += p.grad().square().sum().item<double>();
    const double norm = std::sqrt(sq_sum);
    if (norm > config_.clip_norm) {
      const double scale = config_.clip_norm / norm;
      for (const auto& p : net_->parameters())
        if (p.grad().defined()) p.mutable_grad().mul_(scale);
    }
  }

  ++adam_step_;
  const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(adam_step_));
  const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(adam_step_));
  for (const auto& p : net_->named_parameters()) {
    auto grad = p.value().grad();
    if (!grad.defined()) continue;
    auto& m = adam_m_[p.key()];
    auto& v = adam_v_[p.key()];
    m.mul_(kAdamBeta1).add_(grad, 1.0 - kAdamBeta1);
    v.mul_(kAdamBeta2).addcmul_(grad, grad, 1.0 - kAdamBeta2);
    auto mhat = m / bc1;
    auto vhat = v / bc2;
    p.value().addcdiv_(mhat, vhat.sqrt().add_(kAdamEps), -config_.learning_rate);
  }
  if (config_.ema) {
    for (const auto& p : net_->named_parameters()) {
      auto& shadow = ema_[p.key()];
      shadow.mul_(kEmaDecay).add_(p.value(), 1.0 - kEmaDecay);
    }
  }
}

std::filesystem::path Trainer::fit(const std::vector<LabeledSlice>& train_slices,
                                   const std::filesystem::path& out_dir) {
  const auto N = static_cast<std::int64_t>(train_slices.size());
  if (N < config_.batch_size)
    throw DataError("fit: dataset smaller than one batch (" + std::to_string(N) + " slices)");
  const std::int64_t batches_per_epoch = N / config_.batch_size;

  std::filesystem::create_directories(out_dir);
  const auto log_path = out_dir / "metrics.tsv";
  std::ofstream log(log_path, iteration_ > 0 ? std::ios::app : std::ios::trunc);
  if (!log) throw IoError("cannot open metrics log: " + log_path.string());

  std::int64_t cached_epoch = -1;
  torch::Tensor perm;
  std::vector<const LabeledSlice*> batch(static_cast<std::size_t>(config_.batch_size));

  while (iteration_ < config_.iterations) {
    const std::int64_t epoch = iteration_ / batches_per_epoch;
    const std::int64_t slot = iteration_ % batches_per_epoch;
    if (epoch != cached_epoch) {
      auto gen = cpu_generator(derive_seed(config_.seed, "perm", static_cast<std::uint64_t>(epoch)));
      perm = torch::randperm(N, gen, torch::kInt64);
      cached_epoch = epoch;
    }
    for (int i = 0; i < config_.batch_size; ++i) {
      const auto idx = perm[slot * config_.batch_size + i].item<std::int64_t>();
      batch[static_cast<std::size_t>(i)] = &train_slices[static_cast<std::size_t>(idx)];
    }

    const auto t0 = std::chrono::steady_clock::now();
    const auto stats = train_step(batch);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log << iteration_ << '\t' << stats.loss << '\t' << stats.loss_simple << '\t' << stats.loss_vlb
        << '\t' << seconds << '\n';
    log.flush();

    if (iteration_ % config_.checkpoint_every == 0 && iteration_ < config_.iterations) {
      std::ostringstream name;
      name << "ckpt_" << std::setw(6) << std::setfill('0') << iteration_ << ".bin";
      save_checkpoint(out_dir / name.str(), to_checkpoint());
    }
  }

  const auto final_path = out_dir / "final.bin";
  save_checkpoint(final_path, to_checkpoint());
  return final_path;
}

Checkpoint Trainer::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.model = model_config_;
  ckpt.run_config = run_config_echo;
  ckpt.iteration = iteration_;
  ckpt.seed = config_.seed;
  ckpt.adam_step = adam_step_;
  for (const auto& p : net_->named_parameters()) {
    ckpt.tensors[p.key()] = p.value().detach().clone();
    ckpt.tensors["adam.m/" + p.key()] = adam_m_.at(p.key()).clone();
    ckpt.tensors["adam.v/" + p.key()] = adam_v_.at(p.key()).clone();
    if (config_.ema) ckpt.tensors["ema/" + p.key()] = ema_.at(p.key()).clone();
  }
  return ckpt;
}

void Trainer::restore(const Checkpoint& ckpt) {
  load_parameters(net_, ckpt);
  torch::NoGradGuard g;
  for (const auto& p : net_->named_parameters()) {
    adam_m_[p.key()].copy_(ckpt.tensors.at("adam.m/" + p.key()));
    adam_v_[p.key()].copy_(ckpt.tensors.at("adam.v/" + p.key()));
    if (config_.ema) {
      const auto it = ckpt.tensors.find("ema/" + p.key());
      if (it == ckpt.tensors.end())
        throw ConfigError("checkpoint has no EMA tensors but train.ema is enabled");
      ema_[p.key()].copy_(it->second);
    }
  }
  adam_step_ = ckpt.adam_step;
  iteration_ = ckpt.iteration;
}

}  // namespace diffseg
