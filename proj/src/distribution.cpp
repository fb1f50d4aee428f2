#include "colorloss/distribution.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "colorloss/error.hpp"

namespace colorloss {
namespace {

torch::Tensor safe_log(const torch::Tensor& p) { return torch::log(torch::clamp_min(p, kLogFloor)); }

void require_matching(const PixelDistribution& a, const PixelDistribution& b, std::string_view op) {
  if (a.probs().sizes() != b.probs().sizes()) {
    std::ostringstream msg;
    msg << op << ": shape mismatch " << a.probs().sizes() << " vs " << b.probs().sizes();
    throw ContractError(msg.str());
  }
}

// Per-pixel KL, B x H x W.
torch::Tensor pixel_kl(const PixelDistribution& rho, const PixelDistribution& rho_hat) {
  const auto& p = rho.probs();
  return (p * (safe_log(p) - safe_log(rho_hat.probs()))).sum(1);
}

}  // namespace

ColorQuantizer::ColorQuantizer(torch::Tensor centers, double grid_step)
    : centers_(std::move(centers)), grid_step_(grid_step) {}

ColorQuantizer ColorQuantizer::from_gamut(double grid_step_ab, int samples_per_channel) {
  if (!(grid_step_ab > 0.0) || samples_per_channel < 2) {
    throw ContractError("ColorQuantizer: invalid grid step or sampling density");
  }
  torch::NoGradGuard no_grad;
  const auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  const int n = samples_per_channel;
  auto axis = torch::linspace(0.0, 1.0, n, opts);
  auto gb = torch::meshgrid({axis, axis}, "ij");
  std::set<std::pair<int64_t, int64_t>> cells;
  for (int r = 0; r < n; ++r) {
    auto red = torch::full({n, n}, static_cast<double>(r) / (n - 1), opts);
    auto rgb = torch::stack({red, gb[0], gb[1]}, 0).unsqueeze(0);
    auto lab = kernels::rgb_to_lab_raw(rgb);
    auto ia = torch::round(lab.select(1, 1) / grid_step_ab).to(torch::kInt64).flatten();
    auto ib = torch::round(lab.select(1, 2) / grid_step_ab).to(torch::kInt64).flatten();
    auto pa = ia.accessor<int64_t, 1>();
    auto pb = ib.accessor<int64_t, 1>();
    for (int64_t i = 0; i < ia.size(0); ++i) cells.emplace(pa[i], pb[i]);
  }
  auto centers = torch::empty({static_cast<int64_t>(cells.size()), 2}, opts);
  auto acc = centers.accessor<double, 2>();
  int64_t k = 0;
  for (const auto& [a, b] : cells) {
    acc[k][0] = static_cast<double>(a) * grid_step_ab / kChromaScale;
    acc[k][1] = static_cast<double>(b) * grid_step_ab / kChromaScale;
    ++k;
  }
  return ColorQuantizer(centers, grid_step_ab / kChromaScale);
}

ColorQuantizer ColorQuantizer::from_centers(torch::Tensor centers, double grid_step) {
  if (centers.dim() != 2 || centers.size(1) != 2 || centers.size(0) == 0) {
    throw ContractError("ColorQuantizer: centers must be a non-empty K x 2 tensor");
  }
  return ColorQuantizer(centers.to(torch::kFloat64).contiguous(), grid_step);
}

ColorQuantizer ColorQuantizer::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open quantizer table " + path.string());
  double step_ab = 0.0;
  std::vector<double> values;
  std::string line;
  int64_t expected_index = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    if (line[0] == '#') {
      std::string hash, key;
      fields >> hash >> key;
      if (key == "grid_step") fields >> step_ab;
      continue;
    }
    int64_t index = 0;
    double a = 0.0, b = 0.0;
    if (!(fields >> index >> a >> b) || index != expected_index) {
      throw IoError("malformed quantizer table line: '" + line + "'");
    }
    ++expected_index;
    values.push_back(a / kChromaScale);
    values.push_back(b / kChromaScale);
  }
  if (values.empty()) throw IoError("empty quantizer table " + path.string());
  auto centers = torch::tensor(values, torch::TensorOptions().dtype(torch::kFloat64))
                     .reshape({-1, 2});
  return ColorQuantizer(centers, step_ab / kChromaScale);
}

void ColorQuantizer::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write quantizer table " + path.string());
  out << "# grid_step " << std::setprecision(17) << grid_step_ * kChromaScale << '\n';
  out << "# index a b\n";
  auto acc = centers_.accessor<double, 2>();
  for (int64_t k = 0; k < centers_.size(0); ++k) {
    out << k << ' ' << acc[k][0] * kChromaScale << ' ' << acc[k][1] * kChromaScale << '\n';
  }
}

torch::Tensor ColorQuantizer::nearest(const torch::Tensor& ab) const {
  if (ab.dim() != 4 || ab.size(1) != 2) throw ContractError("nearest: expects B x 2 x H x W");
  torch::NoGradGuard no_grad;
  auto points = ab.to(torch::kFloat64).permute({0, 2, 3, 1}).reshape({-1, 2});
  auto dist = torch::cdist(points, centers_);
  return dist.argmin(1).reshape({ab.size(0), ab.size(2), ab.size(3)});
}

PixelDistribution::PixelDistribution(torch::Tensor probs, double tolerance)
    : probs_(std::move(probs)) {
  if (probs_.dim() != 4) throw ContractError("PixelDistribution: expects B x K x H x W");
  if ((probs_ < 0).any().item<bool>()) {
    throw ContractError("PixelDistribution: negative probability");
  }
  auto err = (probs_.sum(1) - 1.0).abs().max().item<double>();
  if (err > tolerance) {
    throw ContractError("PixelDistribution: per-pixel mass deviates from 1 by " +
                        std::to_string(err));
  }
}

PixelDistribution PixelDistribution::unchecked(torch::Tensor probs) {
  if (probs.dim() != 4) throw ContractError("PixelDistribution: expects B x K x H x W");
  PixelDistribution d;
  d.probs_ = std::move(probs);
  return d;
}

PixelDistribution one_hot(const torch::Tensor& target_bins, int64_t bins) {
  auto encoded = torch::one_hot(target_bins.to(torch::kInt64), bins)
                     .permute({0, 3, 1, 2})
                     .to(torch::kFloat64)
                     .contiguous();
  return PixelDistribution(encoded);
}

PixelDistribution encode_targets(const ImageBatch& ab, const ColorQuantizer& q, double sigma_ab) {
  if (ab.space() != ColorSpace::kAb) throw ContractError("encode_targets: needs an AB batch");
  if (q.bins() == 0) throw ContractError("encode_targets: empty quantizer");
  if (sigma_ab < 0.0) throw ContractError("encode_targets: sigma must be >= 0");
  if (sigma_ab == 0.0) return colorloss::one_hot(q.nearest(ab.values()), q.bins());

  torch::NoGradGuard no_grad;
  const int64_t B = ab.batch(), H = ab.height(), W = ab.width();
  const int64_t neighbours = std::min<int64_t>(5, q.bins());
  auto points = ab.values().to(torch::kFloat64).permute({0, 2, 3, 1}).reshape({-1, 2});
  auto dist = torch::cdist(points, q.centers()) * kChromaScale;
  auto [d, idx] = dist.topk(neighbours, 1, /*largest=*/false);
  auto w = torch::exp(-d.pow(2) / (2.0 * sigma_ab * sigma_ab));
  w = w / w.sum(1, true);
  auto probs = torch::zeros({points.size(0), q.bins()}, points.options());
  probs.scatter_(1, idx, w);
  return PixelDistribution(probs.reshape({B, H, W, q.bins()}).permute({0, 3, 1, 2}).contiguous());
}

torch::Tensor kl_divergence(const PixelDistribution& rho, const PixelDistribution& rho_hat) {
  require_matching(rho, rho_hat, "kl_divergence");
  return pixel_kl(rho, rho_hat).mean();
}

torch::Tensor cross_entropy(const PixelDistribution& rho, const PixelDistribution& rho_hat) {
  require_matching(rho, rho_hat, "cross_entropy");
  return -(rho.probs() * safe_log(rho_hat.probs())).sum(1).mean();
}

torch::Tensor entropy(const PixelDistribution& rho) {
  return -(rho.probs() * safe_log(rho.probs())).sum(1).mean();
}

torch::Tensor hue_chroma_loss(const PixelDistribution& rho_chroma,
                              const PixelDistribution& rho_hat_chroma,
                              const PixelDistribution& rho_hue,
                              const PixelDistribution& rho_hat_hue,
                              const torch::Tensor& chroma_gt, double lambda) {
  if (rho_chroma.bins() != rho_hat_chroma.bins() || rho_hue.bins() != rho_hat_hue.bins()) {
    throw ContractError("hue_chroma_loss: bin-count mismatch");
  }
  require_matching(rho_chroma, rho_hat_chroma, "hue_chroma_loss");
  require_matching(rho_hue, rho_hat_hue, "hue_chroma_loss");
  auto c = chroma_gt.dim() == 4 ? chroma_gt.squeeze(1) : chroma_gt;
  auto kl_c = pixel_kl(rho_chroma, rho_hat_chroma);
  auto kl_h = pixel_kl(rho_hue, rho_hat_hue);
  if (c.sizes() != kl_c.sizes()) throw ContractError("hue_chroma_loss: chroma map size mismatch");
  return (kl_c + lambda * c.to(kl_c.dtype()) * kl_h).mean();
}

torch::Tensor nll_loss(const PixelDistribution& rho_hat, const torch::Tensor& target_bins) {
  const auto& p = rho_hat.probs();
  if (target_bins.dim() != 3 || target_bins.size(0) != p.size(0) ||
      target_bins.size(1) != p.size(2) || target_bins.size(2) != p.size(3)) {
    throw ContractError("nll_loss: targets must be B x H x W matching the distribution");
  }
  auto t = target_bins.to(torch::kInt64);
  if ((t < 0).any().item<bool>() || (t >= rho_hat.bins()).any().item<bool>()) {
    throw ContractError("nll_loss: target bin index out of range");
  }
  return -safe_log(p.gather(1, t.unsqueeze(1))).mean();
}

torch::Tensor weighted_cross_entropy(const PixelDistribution& rho,
                                     const PixelDistribution& rho_hat,
                                     const torch::Tensor& bin_weights) {
  require_matching(rho, rho_hat, "weighted_cross_entropy");
  if (bin_weights.numel() != rho.bins()) {
    throw ContractError("weighted_cross_entropy: one weight per bin required");
  }
  auto target = rho.probs().argmax(1);
  auto w = bin_weights.to(rho_hat.probs().dtype()).index({target});
  auto per_pixel = -(rho.probs() * safe_log(rho_hat.probs())).sum(1);
  return (w * per_pixel).mean();
}

ImageBatch expectation_decode(const PixelDistribution& rho_hat, const ColorQuantizer& q) {
  if (rho_hat.bins() != q.bins()) throw ContractError("expectation_decode: bin-count mismatch");
  auto centers = q.centers().to(rho_hat.probs().dtype());
  auto ab = torch::einsum("bkhw,kc->bchw", {rho_hat.probs(), centers});
  return ImageBatch(ab, ColorSpace::kAb);
}

torch::Tensor median_decode(const torch::Tensor& marginal, const torch::Tensor& bin_values) {
  if (marginal.dim() != 4 || bin_values.dim() != 1 || marginal.size(1) != bin_values.size(0)) {
    throw ContractError("median_decode: expects B x K x H x W and K bin values");
  }
  auto m = marginal.to(torch::kFloat64);
  if ((m.sum(1) <= 0).any().item<bool>()) throw ContractError("median_decode: all-zero histogram");
  auto reached = (m.cumsum(1) >= 0.5).to(torch::kInt32);
  auto first = reached.argmax(1);
  return bin_values.to(torch::kFloat64).index({first});
}

}  // namespace colorloss
