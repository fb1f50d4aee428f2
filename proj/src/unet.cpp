#include "colorloss/unet.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>
#include <sstream>

#include "colorloss/error.hpp"

namespace colorloss {
namespace nn = torch::nn;

namespace {

std::vector<int64_t> image_shape(const torch::Tensor& t) {
  return {t.size(1), t.size(2), t.size(3)};
}

void record(std::vector<LayerShape>* trace, std::string name, const torch::Tensor& t) {
  if (trace) trace->push_back({std::move(name), image_shape(t)});
}

nn::Conv2d conv3x3(int64_t in, int64_t out) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, 3).padding(1));
}

nn::Conv2d conv1x1(int64_t in, int64_t out) { return nn::Conv2d(nn::Conv2dOptions(in, out, 1)); }

// kernel 4, stride 2, padding 1: exactly doubles the resolution.
nn::ConvTranspose2d upsample(int64_t in, int64_t out) {
  return nn::ConvTranspose2d(nn::ConvTranspose2dOptions(in, out, 4).stride(2).padding(1));
}

}  // namespace

int64_t NetworkConfig::out_channels() const {
  if (head == OutputHead::kDistribution) return distribution_bins;
  return target_space == ColorSpace::kLab ? 2 : 3;
}

void NetworkConfig::validate() const {
  if (in_channels != 3) throw ContractError("NetworkConfig: in_channels must be 3");
  if (stages != 5) throw ContractError("NetworkConfig: the baseline U-Net has exactly 5 stages");
  if (base_filters < 1) throw ContractError("NetworkConfig: base_filters must be positive");
  if (target_space != ColorSpace::kLab && target_space != ColorSpace::kRgb) {
    throw ContractError("NetworkConfig: target space must be lab or rgb");
  }
  if (head == OutputHead::kDistribution) {
    if (target_space != ColorSpace::kLab || distribution_bins < 2) {
      throw ContractError("NetworkConfig: a distribution head needs a Lab target and >= 2 bins");
    }
  }
  if (!(batchnorm_epsilon > 0.0)) throw ContractError("NetworkConfig: batchnorm_epsilon must be > 0");
}

ConvBlockImpl::ConvBlockImpl(int64_t in, int64_t out, const NetworkConfig& cfg) {
  auto bn = [&](int64_t c) {
    return nn::BatchNorm2d(
        nn::BatchNormOptions(c).eps(cfg.batchnorm_epsilon).momentum(cfg.batchnorm_momentum));
  };
  conv1 = register_module("conv1", conv3x3(in, out));
  norm1 = register_module("norm1", bn(out));
  conv2 = register_module("conv2", conv3x3(out, out));
  norm2 = register_module("norm2", bn(out));
}

torch::Tensor ConvBlockImpl::forward(const torch::Tensor& x) {
  auto y = torch::relu(norm1(conv1(x)));
  return torch::relu(norm2(conv2(y)));
}

UNetImpl::UNetImpl(NetworkConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const int64_t f = cfg_.base_filters;
  enc1_ = register_module("conv1", ConvBlock(cfg_.in_channels, f, cfg_));
  enc2_ = register_module("conv2", ConvBlock(f, 2 * f, cfg_));
  enc3_ = register_module("conv3", ConvBlock(2 * f, 4 * f, cfg_));
  enc4_ = register_module("conv4", ConvBlock(4 * f, 8 * f, cfg_));
  conv5_ = register_module("conv5", ConvBlock(8 * f, 8 * f, cfg_));

  up1_ = register_module("up1", upsample(8 * f, 8 * f));
  fuse1_ = register_module("fuse1", conv1x1(16 * f, 8 * f));
  conv6_ = register_module("conv6", ConvBlock(8 * f, 4 * f, cfg_));
  up2_ = register_module("up2", upsample(4 * f, 4 * f));
  fuse2_ = register_module("fuse2", conv1x1(8 * f, 4 * f));
  conv7_ = register_module("conv7", ConvBlock(4 * f, 2 * f, cfg_));
  up3_ = register_module("up3", upsample(2 * f, 2 * f));
  fuse3_ = register_module("fuse3", conv1x1(4 * f, 2 * f));
  conv8_ = register_module("conv8", ConvBlock(2 * f, f, cfg_));
  up4_ = register_module("up4", upsample(f, f));
  fuse4_ = register_module("fuse4", conv1x1(2 * f, f));
  conv9_ = register_module("conv9", ConvBlock(f, f, cfg_));
  conv10_ = register_module("conv10", conv1x1(f, cfg_.out_channels()));
}

torch::Tensor UNetImpl::forward(const torch::Tensor& gray3) { return run(gray3, nullptr); }

torch::Tensor UNetImpl::forward_traced(const torch::Tensor& gray3,
                                       std::vector<LayerShape>& trace) {
  trace.clear();
  return run(gray3, &trace);
}

torch::Tensor UNetImpl::run(const torch::Tensor& x, std::vector<LayerShape>* trace) {
  if (x.dim() != 4 || x.size(1) != cfg_.in_channels) {
    throw ContractError("UNet: input must be B x 3 x H x W");
  }
  if (x.size(2) % 16 != 0 || x.size(3) % 16 != 0) {
    std::ostringstream msg;
    msg << "UNet: H and W must be divisible by 16, got " << x.size(2) << "x" << x.size(3);
    throw ContractError(msg.str());
  }
  record(trace, "Input", x);
  auto e1 = enc1_(x);
  auto p1 = torch::max_pool2d(e1, 2);
  record(trace, "Conv1 + Max-pooling", p1);
  auto e2 = enc2_(p1);
  auto p2 = torch::max_pool2d(e2, 2);
  record(trace, "Conv2 + Max-pooling", p2);
  auto e3 = enc3_(p2);
  auto p3 = torch::max_pool2d(e3, 2);
  record(trace, "Conv3 + Max-pooling", p3);
  auto e4 = enc4_(p3);
  auto p4 = torch::max_pool2d(e4, 2);
  record(trace, "Conv4 + Max-pooling", p4);

  auto u = up1_(conv5_(p4));
  record(trace, "Conv5 + Conv. Transpose (I)", u);
  u = up2_(conv6_(fuse1_(torch::cat({e4, u}, 1))));
  record(trace, "Conv6 + Conv. Transpose (II)", u);
  u = up3_(conv7_(fuse2_(torch::cat({e3, u}, 1))));
  record(trace, "Conv7 + Conv. Transpose (III)", u);
  u = up4_(conv8_(fuse3_(torch::cat({e2, u}, 1))));
  record(trace, "Conv8 + Conv. Transpose (IV)", u);
  auto c9 = conv9_(fuse4_(torch::cat({e1, u}, 1)));
  record(trace, "Conv9", c9);
  auto out = conv10_(c9);
  switch (cfg_.head) {
    case OutputHead::kBounded:
      out = cfg_.target_space == ColorSpace::kLab ? torch::tanh(out) : torch::sigmoid(out);
      break;
    case OutputHead::kDistribution:
      out = torch::softmax(out, 1);
      break;
    case OutputHead::kLinear:
      break;
  }
  record(trace, "Conv10", out);
  return out;
}

void UNetImpl::reset_parameters(uint64_t seed) {
  torch::NoGradGuard no_grad;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  for (auto& item : named_parameters(/*recurse=*/true)) {
    const auto& name = item.key();
    auto& p = item.value();
    const bool is_norm = name.find("norm") != std::string::npos;
    if (is_norm) {
      if (name.ends_with("weight")) {
        p.fill_(1.0);
      } else {
        p.zero_();
      }
    } else if (name.ends_with("bias")) {
      p.zero_();
    } else {
      const double fan_in = static_cast<double>(p.size(1) * p[0][0].numel());
      const double bound = std::sqrt(6.0 / fan_in);
      p.uniform_(-bound, bound, gen);
    }
  }
  for (auto& buffer : named_buffers(/*recurse=*/true)) {
    if (buffer.key().ends_with("running_mean")) buffer.value().zero_();
    if (buffer.key().ends_with("running_var")) buffer.value().fill_(1.0);
    if (buffer.key().ends_with("num_batches_tracked")) buffer.value().zero_();
  }
}

std::array<ConvBlock, 5> UNetImpl::encoder_blocks() const {
  return {enc1_, enc2_, enc3_, enc4_, conv5_};
}

UNet build_unet(const NetworkConfig& cfg, uint64_t init_seed) {
  UNet net(cfg);
  net->reset_parameters(init_seed);
  return net;
}

std::array<std::string, 10> vgg16_encoder_names() {
  return {"features.0",  "features.2",  "features.5",  "features.7",  "features.10",
          "features.12", "features.17", "features.19", "features.24", "features.26"};
}

void load_pretrained_encoder(UNet& net, const WeightArchive& weights,
                             const std::array<std::string, 10>& names) {
  torch::NoGradGuard no_grad;
  auto blocks = net->encoder_blocks();
  // Validate everything before touching the network.
  std::vector<std::pair<torch::Tensor, torch::Tensor>> targets;
  std::vector<std::pair<torch::Tensor, torch::Tensor>> sources;
  for (size_t b = 0; b < blocks.size(); ++b) {
    for (int c = 0; c < 2; ++c) {
      auto& conv = c == 0 ? blocks[b]->conv1 : blocks[b]->conv2;
      const std::string layer = "Conv" + std::to_string(b + 1) + ".conv" + std::to_string(c + 1);
      const std::string& prefix = names[2 * b + c];
      for (const char* suffix : {".weight", ".bias"}) {
        if (!weights.contains(prefix + suffix)) {
          throw IoError("pretrained encoder: missing tensor '" + prefix + suffix +
                        "' for layer " + layer);
        }
      }
      const auto& w = weights.at(prefix + ".weight");
      const auto& bias = weights.at(prefix + ".bias");
      if (w.sizes() != conv->weight.sizes() || bias.sizes() != conv->bias.sizes()) {
        std::ostringstream msg;
        msg << "pretrained encoder: shape mismatch for layer " << layer << " ('" << prefix
            << "'): archive " << w.sizes() << ", network " << conv->weight.sizes();
        throw ContractError(msg.str());
      }
      targets.emplace_back(conv->weight, conv->bias);
      sources.emplace_back(w, bias);
    }
  }
  for (size_t i = 0; i < targets.size(); ++i) {
    targets[i].first.copy_(sources[i].first);
    targets[i].second.copy_(sources[i].second);
  }
}

int64_t parameter_count(const torch::nn::Module& module) {
  int64_t n = 0;
  for (const auto& p : module.parameters()) n += p.numel();
  return n;
}

}  // namespace colorloss
