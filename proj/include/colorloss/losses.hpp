#pragma once

#include <torch/torch.h>

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "colorloss/colorspace.hpp"
#include "colorloss/weights.hpp"

namespace colorloss {

// A frozen network exposing intermediate activations ("taps"). Input is RGB
// in [0, 1]; any mean/std preprocessing happens inside. Gradients flow to
// the input, never to the extractor's own weights.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;

  virtual const std::vector<std::string>& taps() const = 0;
  virtual const std::vector<int64_t>& channel_widths() const = 0;
  // One tensor per tap, in tap order, each B x C_l x H_l x W_l.
  virtual std::vector<torch::Tensor> extract(const torch::Tensor& rgb) const = 0;
  // Tag written into metric reports so runs with different extractors are
  // never compared.
  virtual std::string version() const = 0;

  size_t tap_index(const std::string& tap) const;
  torch::Tensor extract(const torch::Tensor& rgb, const std::string& tap) const;
};

using ExtractorPtr = std::shared_ptr<const FeatureExtractor>;

// Extractor backed by a callable. Used for identity and toy extractors.
class FunctionalExtractor final : public FeatureExtractor {
 public:
  using Fn = std::function<std::vector<torch::Tensor>(const torch::Tensor&)>;
  FunctionalExtractor(std::vector<std::string> taps, std::vector<int64_t> widths, Fn fn,
                      std::string version);

  const std::vector<std::string>& taps() const override { return taps_; }
  const std::vector<int64_t>& channel_widths() const override { return widths_; }
  std::vector<torch::Tensor> extract(const torch::Tensor& rgb) const override;
  std::string version() const override { return version_; }

 private:
  std::vector<std::string> taps_;
  std::vector<int64_t> widths_;
  Fn fn_;
  std::string version_;
};

// Single tap "input" returning the image unchanged.
ExtractorPtr make_identity_extractor(int64_t channels = 3);

// Small seeded random convolutional network with two taps ("toy1", "toy2"):
// conv3x3(3->w1)+ReLU, avgpool2, conv3x3(w1->w2)+ReLU. Deterministic given
// the seed; stands in for VGG where pretrained weights are unavailable.
ExtractorPtr make_toy_extractor(uint64_t seed = 7, int64_t width1 = 8, int64_t width2 = 16);

// 16-layer VGG convolutional trunk with taps relu1_2, relu2_2, relu3_3,
// relu4_3, relu5_3. Expects torchvision-style "features.N.weight/bias"
// tensors. Inputs are standardized with the ImageNet mean/std.
ExtractorPtr make_vgg16_extractor(const WeightArchive& weights);

// Adds a global-average-pool over the last tap: B x C_last embedding.
torch::Tensor pooled_embedding(const FeatureExtractor& extractor, const torch::Tensor& rgb);

struct LpipsConfig {
  std::vector<std::string> taps;
  // Per-tap channel weights omega_l (nonnegative), length C_l.
  std::vector<torch::Tensor> weights;

  static LpipsConfig uniform(const FeatureExtractor& extractor);
  // Published linear-calibration weights w_l stored as "lin{l}" (length C_l)
  // multiply the squared feature difference; omega_l = sqrt(w_l).
  static LpipsConfig calibrated(const FeatureExtractor& extractor, const WeightArchive& weights);
};

enum class MaeCoupling { kL1, kL2 };

// All losses return a 0-dim tensor usable with backward().
// Mean over all elements of (u - v)^2.
torch::Tensor mse_loss(const torch::Tensor& u, const torch::Tensor& v);
// kL1: mean of |u - v| over elements; kL2: mean over pixels of the
// per-pixel Euclidean norm across channels.
torch::Tensor mae_loss(const torch::Tensor& u, const torch::Tensor& v,
                       MaeCoupling coupling = MaeCoupling::kL1);
// Mean of the Huber function of u - v.
torch::Tensor huber_loss(const torch::Tensor& u, const torch::Tensor& v, double delta = 1.0);
// (1 / (C_l W_l H_l)) ||phi_l(u) - phi_l(v)||^2, averaged over the batch.
torch::Tensor feature_loss(const torch::Tensor& u, const torch::Tensor& v,
                           const FeatureExtractor& extractor, const std::string& tap);
// Per-image LPIPS distance, shape B.
torch::Tensor lpips_distance(const torch::Tensor& u, const torch::Tensor& v,
                             const FeatureExtractor& extractor, const LpipsConfig& cfg);
// Batch mean of lpips_distance.
torch::Tensor lpips(const torch::Tensor& u, const torch::Tensor& v,
                    const FeatureExtractor& extractor, const LpipsConfig& cfg);

// ImageBatch overloads check that both sides share the space and shape.
torch::Tensor mse_loss(const ImageBatch& u, const ImageBatch& v);
torch::Tensor mae_loss(const ImageBatch& u, const ImageBatch& v,
                       MaeCoupling coupling = MaeCoupling::kL1);
torch::Tensor huber_loss(const ImageBatch& u, const ImageBatch& v, double delta = 1.0);
torch::Tensor feature_loss(const ImageBatch& u, const ImageBatch& v,
                           const FeatureExtractor& extractor, const std::string& tap);
torch::Tensor lpips(const ImageBatch& u, const ImageBatch& v, const FeatureExtractor& extractor,
                    const LpipsConfig& cfg);

// Channel-wise unit normalization used by LPIPS.
torch::Tensor normalize_channels(const torch::Tensor& features, double eps = 1e-10);

}  // namespace colorloss
