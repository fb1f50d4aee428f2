#pragma once

#include <torch/torch.h>

#include <array>
#include <string>
#include <vector>

#include "colorloss/colorspace.hpp"
#include "colorloss/weights.hpp"

namespace colorloss {

enum class OutputHead {
  kBounded,       // tanh for ab, sigmoid for rgb
  kLinear,        // raw Conv10 output
  kDistribution,  // K-way softmax per pixel over quantized ab bins
};

struct NetworkConfig {
  int64_t in_channels = 3;
  int64_t base_filters = 64;
  int64_t stages = 5;
  ColorSpace target_space = ColorSpace::kLab;
  OutputHead head = OutputHead::kBounded;
  int64_t distribution_bins = 0;  // only for kDistribution
  bool use_pretrained_encoder = false;
  double batchnorm_epsilon = 1e-5;
  double batchnorm_momentum = 0.1;

  // 2 for Lab (ab), 3 for RGB, K for a distribution head.
  int64_t out_channels() const;
  void validate() const;
};

struct LayerShape {
  std::string name;
  std::vector<int64_t> shape;  // C x H x W of one image
};

// Two 3x3 convolutions, each followed by batch normalization and ReLU.
class ConvBlockImpl : public torch::nn::Module {
 public:
  ConvBlockImpl(int64_t in, int64_t out, const NetworkConfig& cfg);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
  torch::nn::BatchNorm2d norm1{nullptr}, norm2{nullptr};
};
TORCH_MODULE(ConvBlock);

// Five-stage encoder-decoder with 1x1-fused skip connections.
class UNetImpl : public torch::nn::Module {
 public:
  explicit UNetImpl(NetworkConfig cfg);

  // Input B x 3 x H x W (grayscale replicated), H and W divisible by 16.
  torch::Tensor forward(const torch::Tensor& gray3);
  // Same as forward, also recording the per-row output shapes of the
  // architecture table (Input, Conv1 + Max-pooling, ..., Conv10).
  torch::Tensor forward_traced(const torch::Tensor& gray3, std::vector<LayerShape>& trace);

  // Kaiming-uniform (fan-in) convolution weights, zero biases, unit BN scale.
  void reset_parameters(uint64_t seed);

  const NetworkConfig& config() const { return cfg_; }

  // Encoder blocks Conv1..Conv4 followed by the Conv5 bottleneck.
  std::array<ConvBlock, 5> encoder_blocks() const;

 private:
  torch::Tensor run(const torch::Tensor& gray3, std::vector<LayerShape>* trace);

  NetworkConfig cfg_;
  ConvBlock enc1_{nullptr}, enc2_{nullptr}, enc3_{nullptr}, enc4_{nullptr}, conv5_{nullptr};
  torch::nn::ConvTranspose2d up1_{nullptr}, up2_{nullptr}, up3_{nullptr}, up4_{nullptr};
  torch::nn::Conv2d fuse1_{nullptr}, fuse2_{nullptr}, fuse3_{nullptr}, fuse4_{nullptr};
  ConvBlock conv6_{nullptr}, conv7_{nullptr}, conv8_{nullptr}, conv9_{nullptr};
  torch::nn::Conv2d conv10_{nullptr};
};
TORCH_MODULE(UNet);

UNet build_unet(const NetworkConfig& cfg, uint64_t init_seed = 0);

// Archive tensor names feeding each encoder convolution, in the order
// Conv1.conv1, Conv1.conv2, ..., Conv5.conv2. The default takes the first two
// convolutions of each block of a 16-layer VGG classifier (torchvision
// "features.N" naming).
std::array<std::string, 10> vgg16_encoder_names();

// Copies encoder convolution kernels and biases from the archive. Decoder and
// normalization layers are untouched. Missing tensors or shape mismatches
// raise IoError / ContractError naming the layer.
void load_pretrained_encoder(UNet& net, const WeightArchive& weights,
                             const std::array<std::string, 10>& names = vgg16_encoder_names());

int64_t parameter_count(const torch::nn::Module& module);

}  // namespace colorloss
