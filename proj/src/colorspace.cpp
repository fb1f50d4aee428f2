#include "colorloss/colorspace.hpp"

#include <array>
#include <sstream>

#include "colorloss/error.hpp"
#include "colorloss/log.hpp"

namespace colorloss {
namespace {

// sRGB primaries, D65. The white point is taken as the row sums so that
// RGB (1,1,1) maps to a = b = 0 exactly.
constexpr std::array<double, 9> kRgbToXyz = {
    0.4124564, 0.3575761, 0.1804375,  //
    0.2126729, 0.7151522, 0.0721750,  //
    0.0193339, 0.1191920, 0.9503041};
constexpr std::array<double, 9> kXyzToRgb = {
    3.2404548360214087,  -1.5371388501025751,  -0.498531546868481,  //
    -0.9692663898756538, 1.876010928842491,    0.04155608234667355,  //
    0.05564341960421367, -0.20402585426769818, 1.057225162457929};
constexpr std::array<double, 3> kWhite = {0.95047, 1.0000001, 1.08883};

constexpr double kDelta = 6.0 / 29.0;

torch::Tensor matrix(const std::array<double, 9>& m, const torch::Tensor& like) {
  return torch::tensor(std::vector<double>(m.begin(), m.end()),
                       torch::TensorOptions().dtype(torch::kFloat64))
      .reshape({3, 3})
      .to(like.options());
}

torch::Tensor white(const torch::Tensor& like) {
  return torch::tensor(std::vector<double>(kWhite.begin(), kWhite.end()),
                       torch::TensorOptions().dtype(torch::kFloat64))
      .reshape({1, 3, 1, 1})
      .to(like.options());
}

torch::Tensor apply_matrix(const std::array<double, 9>& m, const torch::Tensor& x) {
  return torch::einsum("ij,bjhw->bihw", {matrix(m, x), x});
}

torch::Tensor lab_f(const torch::Tensor& t) {
  const double threshold = kDelta * kDelta * kDelta;
  auto cube_root = torch::pow(torch::clamp_min(t, threshold), 1.0 / 3.0);
  auto linear = t / (3.0 * kDelta * kDelta) + 4.0 / 29.0;
  return torch::where(t > threshold, cube_root, linear);
}

torch::Tensor lab_f_inverse(const torch::Tensor& s) {
  auto cube = s * s * s;
  auto linear = 3.0 * kDelta * kDelta * (s - 4.0 / 29.0);
  return torch::where(s > kDelta, cube, linear);
}

void require_space(const ImageBatch& img, ColorSpace expected, std::string_view op) {
  if (img.space() != expected) {
    std::ostringstream msg;
    msg << op << ": expected " << to_string(expected) << " input, got "
        << to_string(img.space());
    throw ContractError(msg.str());
  }
}

// Clamps `values` into [lo, hi] per channel group; warns or throws when any
// value is out of range by more than a rounding tolerance.
torch::Tensor enforce_range(const torch::Tensor& values, double lo, double hi,
                            const ConversionOptions& options, std::string_view op) {
  constexpr double kTolerance = 1e-6;
  const bool out_of_range =
      (values < lo - kTolerance).any().item<bool>() || (values > hi + kTolerance).any().item<bool>();
  if (out_of_range) {
    std::ostringstream msg;
    msg << op << ": input outside [" << lo << ", " << hi << "]";
    if (options.strict) throw ContractError(msg.str());
    log::warn(msg.str() + ", clamping");
  }
  return torch::clamp(values, lo, hi);
}

}  // namespace

int channel_count(ColorSpace space) {
  switch (space) {
    case ColorSpace::kRgb:
    case ColorSpace::kLab:
      return 3;
    case ColorSpace::kGray:
      return 1;
    case ColorSpace::kAb:
      return 2;
  }
  return 0;
}

std::string_view to_string(ColorSpace space) {
  switch (space) {
    case ColorSpace::kRgb:
      return "rgb";
    case ColorSpace::kLab:
      return "lab";
    case ColorSpace::kGray:
      return "gray";
    case ColorSpace::kAb:
      return "ab";
  }
  return "?";
}

ColorSpace color_space_from_string(std::string_view name) {
  if (name == "rgb" || name == "RGB") return ColorSpace::kRgb;
  if (name == "lab" || name == "LAB" || name == "Lab") return ColorSpace::kLab;
  if (name == "gray" || name == "GRAY") return ColorSpace::kGray;
  if (name == "ab" || name == "AB") return ColorSpace::kAb;
  throw ContractError("unknown color space '" + std::string(name) + "'");
}

ImageBatch::ImageBatch(torch::Tensor values, ColorSpace space)
    : values_(std::move(values)), space_(space) {
  if (!values_.defined() || values_.dim() != 4) {
    throw ContractError("ImageBatch expects a rank-4 B x C x H x W tensor");
  }
  if (values_.size(1) != channel_count(space_)) {
    std::ostringstream msg;
    msg << "ImageBatch: " << to_string(space_) << " needs " << channel_count(space_)
        << " channels, got " << values_.size(1);
    throw ContractError(msg.str());
  }
  if (!torch::isfinite(values_).all().item<bool>()) {
    throw ContractError("ImageBatch: values must be finite");
  }
}

namespace kernels {

torch::Tensor srgb_to_linear(const torch::Tensor& c) {
  auto low = c / 12.92;
  auto high = torch::pow(torch::clamp_min((c + 0.055) / 1.055, 0.0), 2.4);
  return torch::where(c <= 0.04045, low, high);
}

torch::Tensor linear_to_srgb(const torch::Tensor& c) {
  constexpr double kKnee = 0.0031308;
  auto low = 12.92 * c;
  auto high = 1.055 * torch::pow(torch::clamp_min(c, kKnee), 1.0 / 2.4) - 0.055;
  return torch::where(c <= kKnee, low, high);
}

torch::Tensor rgb_to_lab_raw(const torch::Tensor& rgb) {
  auto xyz = apply_matrix(kRgbToXyz, srgb_to_linear(rgb)) / white(rgb);
  auto f = lab_f(xyz);
  auto fx = f.select(1, 0);
  auto fy = f.select(1, 1);
  auto fz = f.select(1, 2);
  auto l = 116.0 * fy - 16.0;
  auto a = 500.0 * (fx - fy);
  auto b = 200.0 * (fy - fz);
  return torch::stack({l, a, b}, 1);
}

torch::Tensor lab_raw_to_rgb_unclamped(const torch::Tensor& lab) {
  auto fy = (lab.select(1, 0) + 16.0) / 116.0;
  auto fx = fy + lab.select(1, 1) / 500.0;
  auto fz = fy - lab.select(1, 2) / 200.0;
  auto xyz = lab_f_inverse(torch::stack({fx, fy, fz}, 1)) * white(lab);
  return linear_to_srgb(apply_matrix(kXyzToRgb, xyz));
}

}  // namespace kernels

ImageBatch rgb_to_lab(const ImageBatch& rgb, const ConversionOptions& options) {
  require_space(rgb, ColorSpace::kRgb, "rgb_to_lab");
  auto values = enforce_range(rgb.values(), 0.0, 1.0, options, "rgb_to_lab");
  auto lab = kernels::rgb_to_lab_raw(values);
  auto l = lab.narrow(1, 0, 1) / kLightnessScale;
  auto ab = torch::clamp(lab.narrow(1, 1, 2) / kChromaScale, -1.0, 1.0);
  return ImageBatch(torch::cat({l, ab}, 1), ColorSpace::kLab);
}

ImageBatch lab_to_rgb(const ImageBatch& lab, const ConversionOptions& options) {
  require_space(lab, ColorSpace::kLab, "lab_to_rgb");
  auto l = enforce_range(lab.values().narrow(1, 0, 1), 0.0, 1.0, options, "lab_to_rgb(L)");
  auto ab = enforce_range(lab.values().narrow(1, 1, 2), -1.0, 1.0, options, "lab_to_rgb(ab)");
  auto raw = torch::cat({l * kLightnessScale, ab * kChromaScale}, 1);
  return ImageBatch(torch::clamp(kernels::lab_raw_to_rgb_unclamped(raw), 0.0, 1.0),
                    ColorSpace::kRgb);
}

ImageBatch rgb_to_gray(const ImageBatch& rgb, const ConversionOptions& options) {
  require_space(rgb, ColorSpace::kRgb, "rgb_to_gray");
  return lightness_of(rgb_to_lab(rgb, options));
}

ImageBatch lightness_of(const ImageBatch& lab) {
  require_space(lab, ColorSpace::kLab, "lightness_of");
  return ImageBatch(lab.values().narrow(1, 0, 1), ColorSpace::kGray);
}

ImageBatch chroma_of(const ImageBatch& lab) {
  require_space(lab, ColorSpace::kLab, "chroma_of");
  return ImageBatch(lab.values().narrow(1, 1, 2), ColorSpace::kAb);
}

torch::Tensor replicate_gray(const ImageBatch& gray) {
  require_space(gray, ColorSpace::kGray, "replicate_gray");
  return gray.values().expand({-1, 3, -1, -1}).contiguous();
}

ImageBatch assemble_output(const ImageBatch& gray, const ImageBatch& prediction,
                           ColorSpace target_space) {
  require_space(gray, ColorSpace::kGray, "assemble_output");
  if (gray.batch() != prediction.batch() || gray.height() != prediction.height() ||
      gray.width() != prediction.width()) {
    throw ContractError("assemble_output: gray and prediction sizes differ");
  }
  switch (target_space) {
    case ColorSpace::kLab: {
      if (prediction.channels() != 2) {
        throw ContractError("assemble_output: Lab target needs a 2-channel ab prediction");
      }
      ImageBatch lab(torch::cat({gray.values(), prediction.values()}, 1), ColorSpace::kLab);
      return lab_to_rgb(lab);
    }
    case ColorSpace::kRgb:
      if (prediction.channels() != 3) {
        throw ContractError("assemble_output: RGB target needs a 3-channel prediction");
      }
      return ImageBatch(torch::clamp(prediction.values(), 0.0, 1.0), ColorSpace::kRgb);
    default:
      throw ContractError("assemble_output: target space must be lab or rgb");
  }
}

ImageBatch fit_chroma_to_gamut(const ImageBatch& lab, int iterations) {
  require_space(lab, ColorSpace::kLab, "fit_chroma_to_gamut");
  torch::NoGradGuard no_grad;
  constexpr double kSlack = 1e-7;
  auto values = lab.values().to(torch::kFloat64);
  auto l = values.narrow(1, 0, 1) * kLightnessScale;
  auto ab = values.narrow(1, 1, 2) * kChromaScale;
  auto in_gamut = [&](const torch::Tensor& scale) {
    auto rgb = kernels::lab_raw_to_rgb_unclamped(torch::cat({l, ab * scale}, 1));
    return ((rgb >= -kSlack) & (rgb <= 1.0 + kSlack)).all(1, /*keepdim=*/true);
  };
  auto ones = torch::ones_like(l);
  auto lo = torch::zeros_like(l);
  auto hi = ones.clone();
  auto full_ok = in_gamut(ones);
  for (int i = 0; i < iterations; ++i) {
    auto mid = 0.5 * (lo + hi);
    auto ok = in_gamut(mid);
    lo = torch::where(ok, mid, lo);
    hi = torch::where(ok, hi, mid);
  }
  auto scale = torch::where(full_ok, ones, lo);
  auto fitted = torch::cat({values.narrow(1, 0, 1), values.narrow(1, 1, 2) * scale}, 1);
  return ImageBatch(fitted.to(lab.values().dtype()), ColorSpace::kLab);
}

}  // namespace colorloss
