#pragma once

#include <torch/torch.h>

#include <string>
#include <string_view>

namespace colorloss {

enum class ColorSpace { kRgb, kLab, kGray, kAb };

int channel_count(ColorSpace space);
std::string_view to_string(ColorSpace space);
ColorSpace color_space_from_string(std::string_view name);

// Storage conventions shared by every tensor in the library:
//   RGB, GRAY  values in [0, 1]
//   L          stored as L / 100
//   a, b       stored as a / 110, b / 110 (clamped to [-1, 1])
inline constexpr double kLightnessScale = 100.0;
inline constexpr double kChromaScale = 110.0;

// A B x C x H x W batch tagged with its color space. The channel count is
// checked against the space on construction; values must be finite.
class ImageBatch {
 public:
  ImageBatch(torch::Tensor values, ColorSpace space);

  const torch::Tensor& values() const { return values_; }
  ColorSpace space() const { return space_; }

  int64_t batch() const { return values_.size(0); }
  int64_t channels() const { return values_.size(1); }
  int64_t height() const { return values_.size(2); }
  int64_t width() const { return values_.size(3); }

 private:
  torch::Tensor values_;
  ColorSpace space_;
};

struct ConversionOptions {
  // Out-of-range inputs raise instead of being clamped with a warning.
  bool strict = false;
};

// sRGB (D65) -> CIE Lab, differentiable.
ImageBatch rgb_to_lab(const ImageBatch& rgb, const ConversionOptions& options = {});
// CIE Lab -> sRGB, output clamped to [0, 1], differentiable.
ImageBatch lab_to_rgb(const ImageBatch& lab, const ConversionOptions& options = {});
// Grayscale is the Lab lightness: L / 100.
ImageBatch rgb_to_gray(const ImageBatch& rgb, const ConversionOptions& options = {});

// Combines the conditioning grayscale with a network prediction. For kLab the
// prediction holds the two ab channels and the gray input becomes L; for kRgb
// the prediction is returned clamped.
ImageBatch assemble_output(const ImageBatch& gray, const ImageBatch& prediction,
                           ColorSpace target_space);

// Replicates a single-channel gray batch into the 3-channel network input.
torch::Tensor replicate_gray(const ImageBatch& gray);

// Splits a normalized LAB batch into its L (GRAY) and ab parts.
ImageBatch lightness_of(const ImageBatch& lab);
ImageBatch chroma_of(const ImageBatch& lab);

// Scales the ab channels of each pixel toward zero until the color is inside
// the sRGB gamut. Lightness is untouched. Not differentiable; used for output
// files so the written image keeps the input luminance.
ImageBatch fit_chroma_to_gamut(const ImageBatch& lab, int iterations = 24);

// Tensor-level kernels behind the ImageBatch API (no range handling).
namespace kernels {
torch::Tensor srgb_to_linear(const torch::Tensor& c);
torch::Tensor linear_to_srgb(const torch::Tensor& c);
// Unnormalized Lab (L in [0,100], ab in roughly [-110,110]).
torch::Tensor rgb_to_lab_raw(const torch::Tensor& rgb);
torch::Tensor lab_raw_to_rgb_unclamped(const torch::Tensor& lab);
}  // namespace kernels

}  // namespace colorloss
