#include "colorloss/losses.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>
#include <sstream>

#include "colorloss/error.hpp"

namespace colorloss {
namespace {

void require_same(const torch::Tensor& u, const torch::Tensor& v, std::string_view op) {
  if (u.sizes() != v.sizes()) {
    std::ostringstream msg;
    msg << op << ": shape mismatch " << u.sizes() << " vs " << v.sizes();
    throw ContractError(msg.str());
  }
}

void require_same(const ImageBatch& u, const ImageBatch& v, std::string_view op) {
  if (u.space() != v.space()) {
    throw ContractError(std::string(op) + ": color space mismatch (" +
                        std::string(to_string(u.space())) + " vs " +
                        std::string(to_string(v.space())) + ")");
  }
  require_same(u.values(), v.values(), op);
}

void require_rgb(const ImageBatch& u, std::string_view op) {
  if (u.space() != ColorSpace::kRgb) throw ContractError(std::string(op) + ": needs RGB input");
}

struct ConvLayer {
  torch::Tensor weight;
  torch::Tensor bias;
};

torch::Tensor conv_relu(const torch::Tensor& x, const ConvLayer& layer) {
  return torch::relu(torch::conv2d(x, layer.weight, layer.bias, 1, 1));
}

}  // namespace

size_t FeatureExtractor::tap_index(const std::string& tap) const {
  const auto& names = taps();
  for (size_t i = 0; i < names.size(); ++i) {
    if (names[i] == tap) return i;
  }
  throw ContractError("feature extractor has no tap '" + tap + "'");
}

torch::Tensor FeatureExtractor::extract(const torch::Tensor& rgb, const std::string& tap) const {
  const size_t index = tap_index(tap);
  return extract(rgb)[index];
}

FunctionalExtractor::FunctionalExtractor(std::vector<std::string> taps,
                                         std::vector<int64_t> widths, Fn fn, std::string version)
    : taps_(std::move(taps)),
      widths_(std::move(widths)),
      fn_(std::move(fn)),
      version_(std::move(version)) {
  if (taps_.size() != widths_.size() || taps_.empty()) {
    throw ContractError("FunctionalExtractor: taps and widths must be non-empty and aligned");
  }
}

std::vector<torch::Tensor> FunctionalExtractor::extract(const torch::Tensor& rgb) const {
  auto out = fn_(rgb);
  if (out.size() != taps_.size()) {
    throw ContractError("FunctionalExtractor: callable returned the wrong number of taps");
  }
  return out;
}

ExtractorPtr make_identity_extractor(int64_t channels) {
  return std::make_shared<FunctionalExtractor>(
      std::vector<std::string>{"input"}, std::vector<int64_t>{channels},
      [](const torch::Tensor& x) { return std::vector<torch::Tensor>{x}; }, "identity");
}

ExtractorPtr make_toy_extractor(uint64_t seed, int64_t width1, int64_t width2) {
  torch::NoGradGuard no_grad;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  auto init = [&](int64_t out, int64_t in) {
    const double bound = std::sqrt(6.0 / static_cast<double>(in * 9));
    ConvLayer layer;
    layer.weight = torch::empty({out, in, 3, 3}).uniform_(-bound, bound, gen);
    layer.bias = torch::empty({out}).uniform_(-0.1, 0.1, gen);
    return layer;
  };
  const ConvLayer first = init(width1, 3);
  const ConvLayer second = init(width2, width1);
  auto fn = [first, second](const torch::Tensor& rgb) {
    auto w1 = first.weight.to(rgb.dtype());
    auto w2 = second.weight.to(rgb.dtype());
    auto x = (rgb - 0.5) / 0.25;
    auto t1 = torch::relu(torch::conv2d(x, w1, first.bias.to(rgb.dtype()), 1, 1));
    auto t2 = torch::relu(
        torch::conv2d(torch::avg_pool2d(t1, 2), w2, second.bias.to(rgb.dtype()), 1, 1));
    return std::vector<torch::Tensor>{t1, t2};
  };
  return std::make_shared<FunctionalExtractor>(
      std::vector<std::string>{"toy1", "toy2"}, std::vector<int64_t>{width1, width2}, fn,
      "toy-" + std::to_string(seed) + "-" + std::to_string(width1) + "x" +
          std::to_string(width2));
}

ExtractorPtr make_vgg16_extractor(const WeightArchive& weights) {
  // features.N indices of the 13 convolutions; a tap follows the ReLU of the
  // last convolution of each block.
  static constexpr int kConvIndex[] = {0, 2, 5, 7, 10, 12, 14, 17, 19, 21, 24, 26, 28};
  static constexpr int kBlockEnd[] = {1, 3, 6, 9, 12};  // position in kConvIndex
  std::vector<ConvLayer> layers;
  for (int idx : kConvIndex) {
    const std::string prefix = "features." + std::to_string(idx);
    layers.push_back({weights.at(prefix + ".weight"), weights.at(prefix + ".bias")});
  }
  std::vector<int64_t> widths;
  for (int end : kBlockEnd) widths.push_back(layers[end].weight.size(0));
  auto fn = [layers](const torch::Tensor& rgb) {
    auto mean = torch::tensor({0.485, 0.456, 0.406}, rgb.options()).reshape({1, 3, 1, 1});
    auto stdev = torch::tensor({0.229, 0.224, 0.225}, rgb.options()).reshape({1, 3, 1, 1});
    auto x = (rgb - mean) / stdev;
    std::vector<torch::Tensor> taps;
    size_t block_end = 0;
    for (size_t i = 0; i < layers.size(); ++i) {
      ConvLayer cast{layers[i].weight.to(rgb.dtype()), layers[i].bias.to(rgb.dtype())};
      x = conv_relu(x, cast);
      if (static_cast<int>(i) == kBlockEnd[block_end]) {
        taps.push_back(x);
        ++block_end;
        if (block_end < 5) x = torch::max_pool2d(x, 2);
      }
    }
    return taps;
  };
  return std::make_shared<FunctionalExtractor>(
      std::vector<std::string>{"relu1_2", "relu2_2", "relu3_3", "relu4_3", "relu5_3"}, widths,
      fn, "vgg16");
}

torch::Tensor pooled_embedding(const FeatureExtractor& extractor, const torch::Tensor& rgb) {
  auto taps = extractor.extract(rgb);
  return taps.back().mean({2, 3});
}

LpipsConfig LpipsConfig::uniform(const FeatureExtractor& extractor) {
  LpipsConfig cfg;
  cfg.taps = extractor.taps();
  for (auto width : extractor.channel_widths()) cfg.weights.push_back(torch::ones({width}));
  return cfg;
}

LpipsConfig LpipsConfig::calibrated(const FeatureExtractor& extractor,
                                    const WeightArchive& weights) {
  LpipsConfig cfg;
  cfg.taps = extractor.taps();
  for (size_t l = 0; l < cfg.taps.size(); ++l) {
    auto w = weights.at("lin" + std::to_string(l)).flatten();
    if ((w < 0).any().item<bool>()) {
      throw ContractError("LPIPS calibration weights must be nonnegative");
    }
    cfg.weights.push_back(torch::sqrt(w));
  }
  return cfg;
}

torch::Tensor mse_loss(const torch::Tensor& u, const torch::Tensor& v) {
  require_same(u, v, "mse_loss");
  return (u - v).pow(2).mean();
}

torch::Tensor mae_loss(const torch::Tensor& u, const torch::Tensor& v, MaeCoupling coupling) {
  require_same(u, v, "mae_loss");
  if (coupling == MaeCoupling::kL1) return (u - v).abs().mean();
  if (u.dim() < 2) throw ContractError("mae_loss: l2 coupling needs a channel dimension");
  return (u - v).pow(2).sum(1).sqrt().mean();
}

torch::Tensor huber_loss(const torch::Tensor& u, const torch::Tensor& v, double delta) {
  require_same(u, v, "huber_loss");
  if (!(delta > 0.0)) throw ContractError("huber_loss: delta must be positive");
  auto g = (u - v).abs();
  auto quadratic = 0.5 * g.pow(2);
  auto linear = delta * (g - 0.5 * delta);
  return torch::where(g <= delta, quadratic, linear).mean();
}

torch::Tensor feature_loss(const torch::Tensor& u, const torch::Tensor& v,
                           const FeatureExtractor& extractor, const std::string& tap) {
  require_same(u, v, "feature_loss");
  const size_t index = extractor.tap_index(tap);
  auto fu = extractor.extract(u)[index];
  auto fv = extractor.extract(v)[index];
  // mean over C_l x H_l x W_l, then over the batch
  return (fu - fv).pow(2).flatten(1).mean(1).mean();
}

torch::Tensor normalize_channels(const torch::Tensor& features, double eps) {
  return features / torch::sqrt(features.pow(2).sum(1, /*keepdim=*/true) + eps);
}

torch::Tensor lpips_distance(const torch::Tensor& u, const torch::Tensor& v,
                             const FeatureExtractor& extractor, const LpipsConfig& cfg) {
  require_same(u, v, "lpips");
  if (cfg.taps.size() != cfg.weights.size() || cfg.taps.empty()) {
    throw ContractError("lpips: config needs one weight vector per tap");
  }
  std::vector<size_t> indices;
  for (size_t l = 0; l < cfg.taps.size(); ++l) {
    const size_t index = extractor.tap_index(cfg.taps[l]);
    if (cfg.weights[l].numel() != extractor.channel_widths()[index]) {
      std::ostringstream msg;
      msg << "lpips: weight length " << cfg.weights[l].numel() << " for tap '" << cfg.taps[l]
          << "' does not match its " << extractor.channel_widths()[index] << " channels";
      throw ContractError(msg.str());
    }
    indices.push_back(index);
  }
  auto fu = extractor.extract(u);
  auto fv = extractor.extract(v);
  torch::Tensor total = torch::zeros({u.size(0)}, u.options());
  for (size_t l = 0; l < indices.size(); ++l) {
    auto diff = normalize_channels(fu[indices[l]]) - normalize_channels(fv[indices[l]]);
    auto omega = cfg.weights[l].to(diff.options()).reshape({1, -1, 1, 1});
    total = total + (omega * diff).pow(2).sum(1).mean({1, 2});
  }
  return total;
}

torch::Tensor lpips(const torch::Tensor& u, const torch::Tensor& v,
                    const FeatureExtractor& extractor, const LpipsConfig& cfg) {
  return lpips_distance(u, v, extractor, cfg).mean();
}

torch::Tensor mse_loss(const ImageBatch& u, const ImageBatch& v) {
  require_same(u, v, "mse_loss");
  return colorloss::mse_loss(u.values(), v.values());
}

torch::Tensor mae_loss(const ImageBatch& u, const ImageBatch& v, MaeCoupling coupling) {
  require_same(u, v, "mae_loss");
  return colorloss::mae_loss(u.values(), v.values(), coupling);
}

torch::Tensor huber_loss(const ImageBatch& u, const ImageBatch& v, double delta) {
  require_same(u, v, "huber_loss");
  return colorloss::huber_loss(u.values(), v.values(), delta);
}

torch::Tensor feature_loss(const ImageBatch& u, const ImageBatch& v,
                           const FeatureExtractor& extractor, const std::string& tap) {
  require_same(u, v, "feature_loss");
  require_rgb(u, "feature_loss");
  return feature_loss(u.values(), v.values(), extractor, tap);
}

torch::Tensor lpips(const ImageBatch& u, const ImageBatch& v, const FeatureExtractor& extractor,
                    const LpipsConfig& cfg) {
  require_same(u, v, "lpips");
  require_rgb(u, "lpips");
  return lpips(u.values(), v.values(), extractor, cfg);
}

}  // namespace colorloss
