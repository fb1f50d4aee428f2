#include "colorloss/adversarial.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>
#include <sstream>

#include "colorloss/error.hpp"

namespace colorloss {
namespace nn = torch::nn;

namespace {

double scalar(const torch::Tensor& t) { return t.detach().to(torch::kFloat64).item<double>(); }

void require_finite(const torch::Tensor& loss, const std::string& what, const StepReport& report) {
  if (!std::isfinite(scalar(loss))) {
    throw NonFiniteLoss("non-finite " + what + " (" + report.to_line() + ")", report);
  }
}

}  // namespace

SampleLayerNormImpl::SampleLayerNormImpl(int64_t channels, double eps) : eps_(eps) {
  gamma = register_parameter("gamma", torch::ones({channels}));
  beta = register_parameter("beta", torch::zeros({channels}));
}

torch::Tensor SampleLayerNormImpl::forward(const torch::Tensor& x) {
  auto mean = x.mean({1, 2, 3}, /*keepdim=*/true);
  auto var = (x - mean).pow(2).mean({1, 2, 3}, /*keepdim=*/true);
  auto y = (x - mean) / torch::sqrt(var + eps_);
  return y * gamma.view({1, -1, 1, 1}) + beta.view({1, -1, 1, 1});
}

CriticImpl::CriticImpl(CriticConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.widths.empty()) throw ContractError("CriticConfig: needs at least one layer");
  convs_ = register_module("convs", nn::ModuleList());
  norms_ = register_module("norms", nn::ModuleList());
  int64_t in = cfg_.in_channels;
  for (size_t i = 0; i < cfg_.widths.size(); ++i) {
    const int64_t out = cfg_.widths[i];
    convs_->push_back(nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(2).padding(1)));
    if (i > 0) norms_->push_back(SampleLayerNorm(out, cfg_.norm_epsilon));
    in = out;
  }
  score_ = register_module("score", nn::Conv2d(nn::Conv2dOptions(in, 1, 1)));
}

torch::Tensor CriticImpl::forward(const torch::Tensor& rgb) {
  auto x = rgb;
  for (size_t i = 0; i < convs_->size(); ++i) {
    x = convs_[i]->as<nn::Conv2dImpl>()->forward(x);
    if (i > 0) x = norms_[i - 1]->as<SampleLayerNormImpl>()->forward(x);
    x = torch::leaky_relu(x, cfg_.leaky_slope);
  }
  return score_(x).mean({1, 2, 3});
}

void CriticImpl::reset_parameters(uint64_t seed) {
  torch::NoGradGuard no_grad;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  const double gain_sq = 2.0 / (1.0 + cfg_.leaky_slope * cfg_.leaky_slope);
  for (auto& item : named_parameters(true)) {
    const auto& name = item.key();
    auto& p = item.value();
    if (name.ends_with("gamma")) {
      p.fill_(1.0);
    } else if (name.ends_with("beta") || name.ends_with("bias")) {
      p.zero_();
    } else {
      const double fan_in = static_cast<double>(p.size(1) * p[0][0].numel());
      const double bound = std::sqrt(3.0 * gain_sq / fan_in);
      p.uniform_(-bound, bound, gen);
    }
  }
}

Critic build_critic(const CriticConfig& cfg, uint64_t init_seed) {
  Critic critic(cfg);
  critic->reset_parameters(init_seed);
  return critic;
}

bool has_batch_norm(const torch::nn::Module& module) {
  for (const auto& child : module.modules(/*include_self=*/true)) {
    if (child->as<nn::BatchNorm1dImpl>() || child->as<nn::BatchNorm2dImpl>() ||
        child->as<nn::BatchNorm3dImpl>()) {
      return true;
    }
  }
  return false;
}

void AdversarialSpec::validate() const {
  if (gp_lambda < 0.0) throw ContractError("AdversarialSpec: gp_lambda must be >= 0");
  if (critic_steps_per_gen_step < 1) {
    throw ContractError("AdversarialSpec: critic_steps_per_gen_step must be positive");
  }
  if (!std::isfinite(content_weight) || !std::isfinite(adversarial_weight)) {
    throw ContractError("AdversarialSpec: weights must be finite");
  }
}

AdversarialLosses vanilla_gan_losses(const torch::Tensor& d_real, const torch::Tensor& d_fake,
                                     bool strict_generator) {
  // log(1 - sigmoid(x)) = logsigmoid(-x)
  auto critic_loss = -(torch::log_sigmoid(d_real).mean() + torch::log_sigmoid(-d_fake).mean());
  auto gen_loss = strict_generator ? torch::log_sigmoid(-d_fake).mean()
                                   : -torch::log_sigmoid(d_fake).mean();
  return {critic_loss, gen_loss};
}

AdversarialLosses wgan_losses(const torch::Tensor& d_real, const torch::Tensor& d_fake) {
  return {d_fake.mean() - d_real.mean(), -d_fake.mean()};
}

torch::Tensor gradient_penalty_at(const CriticFn& critic, const torch::Tensor& real,
                                  const torch::Tensor& fake, const torch::Tensor& t) {
  if (real.sizes() != fake.sizes()) throw ContractError("gradient_penalty: real/fake shape mismatch");
  if (t.numel() != real.size(0)) throw ContractError("gradient_penalty: one t per sample required");
  std::vector<int64_t> shape(static_cast<size_t>(real.dim()), 1);
  shape[0] = real.size(0);
  auto tt = t.to(real.options()).reshape(shape);
  auto mixed = (tt * real.detach() + (1.0 - tt) * fake.detach()).requires_grad_(true);
  auto scores = critic(mixed);
  if (!scores.requires_grad()) {
    throw ContractError("gradient_penalty: critic output does not depend on its input");
  }
  std::vector<torch::Tensor> grads;
  try {
    grads = torch::autograd::grad({scores.sum()}, {mixed}, {}, /*retain_graph=*/true,
                                  /*create_graph=*/true);
  } catch (const c10::Error& e) {
    throw ContractError(std::string("gradient_penalty: critic is not differentiable: ") +
                        e.what_without_backtrace());
  }
  auto norms = grads[0].flatten(1).norm(2, 1);
  return (norms - 1.0).pow(2).mean();
}

torch::Tensor gradient_penalty(const CriticFn& critic, const torch::Tensor& real,
                               const torch::Tensor& fake, at::Generator& rng) {
  auto t = torch::rand({real.size(0)}, rng, real.options().requires_grad(false));
  return gradient_penalty_at(critic, real, fake, t);
}

StepReport content_train_step(UNet& generator, const Batch& batch, const ContentObjective& content,
                              torch::optim::Optimizer& generator_optimizer) {
  StepReport report;
  generator->train();
  generator_optimizer.zero_grad();
  auto prediction = generator(batch.gray3);
  auto loss = content.loss(prediction, batch);
  report.set(content.name, scalar(loss));
  report.set("total", scalar(loss));
  require_finite(loss, content.name, report);
  loss.backward();
  generator_optimizer.step();
  report.generator_updates = 1;
  return report;
}

StepReport adversarial_train_step(UNet& generator, Critic& critic, const Batch& batch,
                                  const ContentObjective& content, const AdversarialSpec& spec,
                                  torch::optim::Optimizer& generator_optimizer,
                                  torch::optim::Optimizer& critic_optimizer, at::Generator& rng) {
  spec.validate();
  StepReport report;
  generator->train();
  critic->train();

  auto prediction = generator(batch.gray3);
  auto fake_rgb = content.to_rgb(prediction, batch);
  auto fake_detached = fake_rgb.detach();
  const auto& real = batch.rgb;
  CriticFn critic_fn = [&critic](const torch::Tensor& x) { return critic(x); };

  double critic_loss_value = 0.0, gp_value = 0.0;
  for (int k = 0; k < spec.critic_steps_per_gen_step; ++k) {
    critic_optimizer.zero_grad();
    auto d_real = critic(real);
    auto d_fake = critic(fake_detached);
    torch::Tensor critic_total;
    if (spec.kind == AdversarialKind::kWganGp) {
      auto losses = wgan_losses(d_real, d_fake);
      auto gp = gradient_penalty(critic_fn, real, fake_detached, rng);
      critic_total = losses.critic_loss + spec.gp_lambda * gp;
      critic_loss_value = scalar(losses.critic_loss);
      gp_value = scalar(gp);
    } else {
      auto losses = vanilla_gan_losses(d_real, d_fake, spec.strict_vanilla_generator);
      critic_total = losses.critic_loss;
      critic_loss_value = scalar(losses.critic_loss);
    }
    report.set("critic_loss", critic_loss_value);
    if (spec.kind == AdversarialKind::kWganGp) report.set("gp", gp_value);
    require_finite(critic_total, "critic loss", report);
    critic_total.backward();
    critic_optimizer.step();
    ++report.critic_updates;
  }

  generator_optimizer.zero_grad();
  auto content_loss = content.loss(prediction, batch);
  auto d_fake_gen = critic(fake_rgb);
  auto gen_loss = spec.kind == AdversarialKind::kWganGp
                      ? wgan_losses(d_fake_gen.detach(), d_fake_gen).gen_loss
                      : vanilla_gan_losses(d_fake_gen.detach(), d_fake_gen,
                                           spec.strict_vanilla_generator)
                            .gen_loss;
  auto total = spec.content_weight * content_loss + spec.adversarial_weight * gen_loss;
  report.set(content.name, scalar(content_loss));
  report.set("gen_adv", scalar(gen_loss));
  report.set("total", scalar(total));
  require_finite(total, "generator loss", report);
  total.backward();
  generator_optimizer.step();
  report.generator_updates = 1;
  return report;
}

}  // namespace colorloss
