#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <optional>

#include "colorloss/colorspace.hpp"

namespace colorloss {

// Fixed grid of ab bins restricted to colors reachable from sRGB.
// Centers are stored in normalized ab units (a / 110, b / 110).
class ColorQuantizer {
 public:
  // grid_step_ab in unnormalized ab units; `samples_per_channel` controls the
  // density of the sRGB cube sampling used to find in-gamut cells.
  static ColorQuantizer from_gamut(double grid_step_ab = 10.0, int samples_per_channel = 128);
  static ColorQuantizer from_centers(torch::Tensor centers, double grid_step);

  // Plain text table: "# grid_step <ab units>" then "index a b" per line,
  // in unnormalized ab units.
  static ColorQuantizer load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  int64_t bins() const { return centers_.size(0); }
  // K x 2, normalized ab units, float64.
  const torch::Tensor& centers() const { return centers_; }
  double grid_step() const { return grid_step_; }  // normalized units

  // Nearest center index per pixel of a B x 2 x H x W ab tensor: B x H x W.
  torch::Tensor nearest(const torch::Tensor& ab) const;

 private:
  ColorQuantizer(torch::Tensor centers, double grid_step);

  torch::Tensor centers_;
  double grid_step_ = 0.0;
};

// B x K x H x W per-pixel probability vectors.
class PixelDistribution {
 public:
  explicit PixelDistribution(torch::Tensor probs, double tolerance = 1e-5);
  // Skips the simplex check; for network outputs inside a training graph.
  static PixelDistribution unchecked(torch::Tensor probs);

  const torch::Tensor& probs() const { return probs_; }
  int64_t bins() const { return probs_.size(1); }

 private:
  PixelDistribution() = default;
  torch::Tensor probs_;
};

inline constexpr double kLogFloor = 1e-10;

// sigma_ab == 0: one-hot on the nearest center. sigma_ab > 0: Gaussian weights
// (sigma in unnormalized ab units) over the 5 nearest centers, renormalized.
PixelDistribution encode_targets(const ImageBatch& ab, const ColorQuantizer& q,
                                 double sigma_ab = 0.0);

// Per-pixel quantities are averaged over B x H x W.
torch::Tensor kl_divergence(const PixelDistribution& rho, const PixelDistribution& rho_hat);
torch::Tensor cross_entropy(const PixelDistribution& rho, const PixelDistribution& rho_hat);
torch::Tensor entropy(const PixelDistribution& rho);

// KL(chroma) + lambda * c * KL(hue) per pixel, averaged. chroma_gt is B x H x W
// (or B x 1 x H x W) in [0, 1].
torch::Tensor hue_chroma_loss(const PixelDistribution& rho_chroma,
                              const PixelDistribution& rho_hat_chroma,
                              const PixelDistribution& rho_hue,
                              const PixelDistribution& rho_hat_hue,
                              const torch::Tensor& chroma_gt, double lambda = 5.0);

// Mean over pixels of -log rho_hat(target). Targets are B x H x W int64.
torch::Tensor nll_loss(const PixelDistribution& rho_hat, const torch::Tensor& target_bins);

// Optional per-bin rebalancing weights (length K) multiply each pixel's term
// according to its target bin.
torch::Tensor weighted_cross_entropy(const PixelDistribution& rho,
                                     const PixelDistribution& rho_hat,
                                     const torch::Tensor& bin_weights);

// Per-pixel probability-weighted mean of the centers.
ImageBatch expectation_decode(const PixelDistribution& rho_hat, const ColorQuantizer& q);

// marginal: B x K x H x W; bin_values: K ascending. Returns B x H x W holding
// the smallest bin value whose cumulative mass reaches 0.5.
torch::Tensor median_decode(const torch::Tensor& marginal, const torch::Tensor& bin_values);

PixelDistribution one_hot(const torch::Tensor& target_bins, int64_t bins);

}  // namespace colorloss
