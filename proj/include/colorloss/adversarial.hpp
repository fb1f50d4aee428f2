#pragma once

#include <ATen/core/Generator.h>
#include <torch/torch.h>

#include <functional>
#include <string>
#include <vector>

#include "colorloss/data.hpp"
#include "colorloss/step_report.hpp"
#include "colorloss/unet.hpp"

namespace colorloss {

struct CriticConfig {
  int64_t in_channels = 3;
  std::vector<int64_t> widths = {64, 128, 256, 512, 512};
  double leaky_slope = 0.2;
  double norm_epsilon = 1e-5;
};

// Per-sample normalization over C x H x W with a per-channel affine; never
// couples samples, so the input gradient of one image ignores the others.
class SampleLayerNormImpl : public torch::nn::Module {
 public:
  SampleLayerNormImpl(int64_t channels, double eps);
  torch::Tensor forward(const torch::Tensor& x);

  torch::Tensor gamma, beta;

 private:
  double eps_;
};
TORCH_MODULE(SampleLayerNorm);

// Stride-2 3x3 convolutions with LeakyReLU, layer normalization after every
// convolution but the first, and a 1x1 score map averaged to one scalar per
// image.
class CriticImpl : public torch::nn::Module {
 public:
  explicit CriticImpl(CriticConfig cfg = {});

  // B x 3 x H x W RGB -> B scores.
  torch::Tensor forward(const torch::Tensor& rgb);
  void reset_parameters(uint64_t seed);
  const CriticConfig& config() const { return cfg_; }

 private:
  CriticConfig cfg_;
  torch::nn::ModuleList convs_;
  torch::nn::ModuleList norms_;
  torch::nn::Conv2d score_{nullptr};
};
TORCH_MODULE(Critic);

Critic build_critic(const CriticConfig& cfg = {}, uint64_t init_seed = 0);

// True when any submodule performs batch-coupled normalization.
bool has_batch_norm(const torch::nn::Module& module);

enum class AdversarialKind { kVanilla, kWganGp };

struct AdversarialSpec {
  AdversarialKind kind = AdversarialKind::kWganGp;
  double gp_lambda = 10.0;  // wgan_gp only
  double content_weight = 1.0;
  double adversarial_weight = 0.01;
  int critic_steps_per_gen_step = 5;
  // Vanilla generator loss: false = -log sigmoid(D(fake)) (non-saturating),
  // true = log(1 - sigmoid(D(fake))) as in the original min-max objective.
  bool strict_vanilla_generator = false;

  void validate() const;
};

struct AdversarialLosses {
  torch::Tensor critic_loss;
  torch::Tensor gen_loss;
};

// Scores are pre-sigmoid logits.
AdversarialLosses vanilla_gan_losses(const torch::Tensor& d_real, const torch::Tensor& d_fake,
                                     bool strict_generator = false);
// critic_loss = mean(d_fake) - mean(d_real); gen_loss = -mean(d_fake).
AdversarialLosses wgan_losses(const torch::Tensor& d_real, const torch::Tensor& d_fake);

using CriticFn = std::function<torch::Tensor(const torch::Tensor&)>;

// Mean over the batch of (||grad_x D(x)||_2 - 1)^2 at x = t real + (1 - t) fake,
// t ~ U[0, 1] per sample. The returned value keeps its graph so it can be
// differentiated with respect to the critic parameters.
torch::Tensor gradient_penalty(const CriticFn& critic, const torch::Tensor& real,
                               const torch::Tensor& fake, at::Generator& rng);
// Same with explicit mixing coefficients t (B values).
torch::Tensor gradient_penalty_at(const CriticFn& critic, const torch::Tensor& real,
                                  const torch::Tensor& fake, const torch::Tensor& t);

// Content objective evaluated on the generator output.
struct ContentObjective {
  std::string name;  // step report key, e.g. "content_mse"
  std::function<torch::Tensor(const torch::Tensor& prediction, const Batch&)> loss;
  // Generator output -> RGB image in [0, 1] for the critic.
  std::function<torch::Tensor(const torch::Tensor& prediction, const Batch&)> to_rgb;
};

// One generator step: the generator runs once; the critic is updated
// spec.critic_steps_per_gen_step times against that (detached) output, then
// the generator minimizes content_weight * content + adversarial_weight * gen.
// Throws NonFiniteLoss before any optimizer step that would consume a NaN.
StepReport adversarial_train_step(UNet& generator, Critic& critic, const Batch& batch,
                                  const ContentObjective& content, const AdversarialSpec& spec,
                                  torch::optim::Optimizer& generator_optimizer,
                                  torch::optim::Optimizer& critic_optimizer, at::Generator& rng);

// Content-only step, same reporting conventions.
StepReport content_train_step(UNet& generator, const Batch& batch, const ContentObjective& content,
                              torch::optim::Optimizer& generator_optimizer);

}  // namespace colorloss
