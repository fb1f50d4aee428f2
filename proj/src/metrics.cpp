#include "colorloss/metrics.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "colorloss/error.hpp"

namespace colorloss {
namespace {

void require_pair(const torch::Tensor& u, const torch::Tensor& v, std::string_view op) {
  if (u.dim() != 4 || u.sizes() != v.sizes()) {
    std::ostringstream msg;
    msg << op << ": expects matching B x C x H x W tensors, got " << u.sizes() << " and "
        << v.sizes();
    throw ContractError(msg.str());
  }
}

std::string format_double(double v) {
  std::ostringstream out;
  out << std::setprecision(10) << v;
  return out.str();
}

torch::Tensor window_kernel(int size, double sigma, int64_t channels) {
  auto taps = gaussian_window(size, sigma);
  auto g = torch::tensor(taps, torch::TensorOptions().dtype(torch::kFloat64));
  auto k2 = torch::outer(g, g);
  return k2.expand({channels, 1, size, size}).contiguous();
}

double windowed_ssim(const torch::Tensor& u, const torch::Tensor& v, const SsimConfig& cfg) {
  // u, v: 1 x C x H x W float64
  const int64_t c = u.size(1);
  auto kernel = window_kernel(cfg.window, cfg.sigma, c);
  auto filter = [&](const torch::Tensor& x) { return torch::conv2d(x, kernel, torch::Tensor(), at::IntArrayRef{1}, at::IntArrayRef{0}, at::IntArrayRef{1}, c); };
  auto mu_u = filter(u);
  auto mu_v = filter(v);
  auto var_u = filter(u * u) - mu_u * mu_u;
  auto var_v = filter(v * v) - mu_v * mu_v;
  auto cov = filter(u * v) - mu_u * mu_v;
  const double c1 = cfg.c1(), c2 = cfg.c2();
  auto ssim_map = ((2 * mu_u * mu_v + c1) * (2 * cov + c2)) /
             ((mu_u * mu_u + mu_v * mu_v + c1) * (var_u + var_v + c2));
  return ssim_map.mean().item<double>();
}

double global_ssim(const torch::Tensor& u, const torch::Tensor& v, const SsimConfig& cfg) {
  const double c1 = cfg.c1(), c2 = cfg.c2(), c3 = cfg.c3();
  double total = 0.0;
  const int64_t channels = u.size(1);
  for (int64_t ch = 0; ch < channels; ++ch) {
    auto x = u.select(1, ch).flatten();
    auto y = v.select(1, ch).flatten();
    const double mx = x.mean().item<double>();
    const double my = y.mean().item<double>();
    const double vx = (x - mx).pow(2).mean().item<double>();
    const double vy = (y - my).pow(2).mean().item<double>();
    const double cov = ((x - mx) * (y - my)).mean().item<double>();
    const double sx = std::sqrt(vx), sy = std::sqrt(vy);
    const double l = (2 * mx * my + c1) / (mx * mx + my * my + c1);
    const double con = (2 * sx * sy + c2) / (vx + vy + c2);
    const double s = (cov + c3) / (sx * sy + c3);
    total += l * con * s;
  }
  return total / static_cast<double>(channels);
}

torch::Tensor symmetric_sqrt(const torch::Tensor& m) {
  auto sym = 0.5 * (m + m.transpose(0, 1));
  auto [evals, evecs] = torch::linalg_eigh(sym);
  auto root = torch::sqrt(torch::clamp_min(evals, 0.0));
  return evecs.matmul(torch::diag(root)).matmul(evecs.transpose(0, 1));
}

void require_psd(const torch::Tensor& sigma, std::string_view which) {
  auto sym = 0.5 * (sigma + sigma.transpose(0, 1));
  auto evals = torch::linalg_eigvalsh(sym);
  if (evals.numel() > 0 && evals.min().item<double>() < -1e-6) {
    throw ContractError(std::string("fid: ") + std::string(which) +
                        " covariance is not positive semidefinite");
  }
}

double mean_of(const std::vector<ImageMetrics>& images, double ImageMetrics::*field) {
  if (images.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& m : images) sum += m.*field;
  return sum / static_cast<double>(images.size());
}

}  // namespace

// ---- PSNR -------------------------------------------------------------------

std::vector<PsnrResult> psnr(const torch::Tensor& truth, const torch::Tensor& test,
                             const PsnrOptions& options) {
  require_pair(truth, test, "psnr");
  auto u = truth.detach().to(torch::kFloat64);
  auto v = test.detach().to(torch::kFloat64);
  auto mse = (u - v).pow(2).flatten(1).mean(1);
  auto peak = u.flatten(1).amax(1);
  std::vector<PsnrResult> out;
  for (int64_t i = 0; i < u.size(0); ++i) {
    const double m = mse[i].item<double>();
    if (m < 1e-10) {
      out.push_back({options.cap_db, true});
      continue;
    }
    const double p = options.fixed_peak ? 1.0 : peak[i].item<double>();
    out.push_back({20.0 * std::log10(p) - 10.0 * std::log10(m), false});
  }
  return out;
}

std::vector<PsnrResult> psnr(const ImageBatch& truth, const ImageBatch& test,
                             const PsnrOptions& options) {
  if (truth.space() != ColorSpace::kRgb || test.space() != ColorSpace::kRgb) {
    throw ContractError("psnr: metrics are computed on RGB images");
  }
  return psnr(truth.values(), test.values(), options);
}

// ---- SSIM -------------------------------------------------------------------

std::vector<double> gaussian_window(int size, double sigma) {
  if (size < 1 || !(sigma > 0.0)) throw ContractError("gaussian_window: invalid size or sigma");
  std::vector<double> taps(static_cast<size_t>(size));
  const double center = (size - 1) / 2.0;
  for (int i = 0; i < size; ++i) {
    const double d = i - center;
    taps[static_cast<size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
  }
  const double total = std::accumulate(taps.begin(), taps.end(), 0.0);
  for (auto& t : taps) t /= total;
  return taps;
}

std::vector<double> ssim(const torch::Tensor& u, const torch::Tensor& v, const SsimConfig& cfg) {
  require_pair(u, v, "ssim");
  if (cfg.mode == SsimMode::kWindowed && (u.size(2) < cfg.window || u.size(3) < cfg.window)) {
    throw ContractError("ssim: window larger than image");
  }
  torch::NoGradGuard no_grad;
  auto a = u.detach().to(torch::kFloat64);
  auto b = v.detach().to(torch::kFloat64);
  std::vector<double> out;
  for (int64_t i = 0; i < a.size(0); ++i) {
    auto x = a.narrow(0, i, 1);
    auto y = b.narrow(0, i, 1);
    out.push_back(cfg.mode == SsimMode::kWindowed ? windowed_ssim(x, y, cfg)
                                                  : global_ssim(x, y, cfg));
  }
  return out;
}

std::vector<double> ssim(const ImageBatch& u, const ImageBatch& v, const SsimConfig& cfg) {
  if (u.space() != ColorSpace::kRgb || v.space() != ColorSpace::kRgb) {
    throw ContractError("ssim: metrics are computed on RGB images");
  }
  return ssim(u.values(), v.values(), cfg);
}

// ---- FID --------------------------------------------------------------------

void EmbeddingAccumulator::add(const torch::Tensor& embeddings) {
  if (embeddings.dim() != 2) throw ContractError("EmbeddingAccumulator: expects N x D");
  auto x = embeddings.detach().to(torch::kFloat64);
  if (n_ == 0) {
    mean_ = torch::zeros({x.size(1)}, x.options());
    m2_ = torch::zeros({x.size(1), x.size(1)}, x.options());
  } else if (x.size(1) != mean_.size(0)) {
    throw ContractError("EmbeddingAccumulator: embedding dimension changed");
  }
  for (int64_t i = 0; i < x.size(0); ++i) {
    auto row = x[i];
    ++n_;
    auto delta = row - mean_;
    mean_ = mean_ + delta / static_cast<double>(n_);
    m2_ = m2_ + torch::outer(delta, row - mean_);
  }
}

void EmbeddingAccumulator::merge(const EmbeddingAccumulator& other) {
  if (other.n_ == 0) return;
  if (n_ == 0) {
    *this = other;
    return;
  }
  if (other.mean_.size(0) != mean_.size(0)) {
    throw ContractError("EmbeddingAccumulator: embedding dimension mismatch");
  }
  const double na = static_cast<double>(n_), nb = static_cast<double>(other.n_);
  const double n = na + nb;
  auto delta = other.mean_ - mean_;
  mean_ = mean_ + delta * (nb / n);
  m2_ = m2_ + other.m2_ + torch::outer(delta, delta) * (na * nb / n);
  n_ += other.n_;
}

EmbeddingStats EmbeddingAccumulator::stats() const {
  if (n_ < 2) throw ContractError("embedding statistics need at least 2 images");
  auto sigma = m2_ / static_cast<double>(n_ - 1);
  return {mean_.clone(), 0.5 * (sigma + sigma.transpose(0, 1)), n_};
}

EmbeddingStats embed_statistics(const std::vector<torch::Tensor>& images, const Embedder& embedder) {
  if (images.size() < 2) throw ContractError("embed_statistics: needs at least 2 images");
  torch::NoGradGuard no_grad;
  EmbeddingAccumulator acc;
  for (const auto& image : images) acc.add(embedder(image.dim() == 3 ? image.unsqueeze(0) : image));
  return acc.stats();
}

double fid(const EmbeddingStats& real, const EmbeddingStats& generated) {
  if (real.mu.numel() != generated.mu.numel() || real.sigma.sizes() != generated.sigma.sizes()) {
    throw ContractError("fid: embedding dimension mismatch");
  }
  torch::NoGradGuard no_grad;
  auto mu_r = real.mu.to(torch::kFloat64), mu_g = generated.mu.to(torch::kFloat64);
  auto s_r = real.sigma.to(torch::kFloat64), s_g = generated.sigma.to(torch::kFloat64);
  require_psd(s_r, "real");
  require_psd(s_g, "generated");
  auto root_r = symmetric_sqrt(s_r);
  auto inner = root_r.matmul(s_g).matmul(root_r);
  inner = 0.5 * (inner + inner.transpose(0, 1));
  auto evals = torch::linalg_eigvalsh(inner);
  if (!torch::isfinite(evals).all().item<bool>()) throw NumericError("fid: square root failed");
  const double trace_root = torch::sqrt(torch::clamp_min(evals, 0.0)).sum().item<double>();
  const double mean_term = (mu_r - mu_g).pow(2).sum().item<double>();
  return mean_term + s_r.trace().item<double>() + s_g.trace().item<double>() - 2.0 * trace_root;
}

// ---- AuC ----------------------------------------------------------------------

void AucAccumulator::add(const torch::Tensor& pred_ab, const torch::Tensor& truth_ab) {
  require_pair(pred_ab, truth_ab, "auc_raw_accuracy");
  if (pred_ab.size(1) != 2) throw ContractError("auc_raw_accuracy: expects ab tensors");
  auto diff = (pred_ab.detach().to(torch::kFloat64) - truth_ab.detach().to(torch::kFloat64)) *
              kChromaScale;
  auto dist = diff.pow(2).sum(1).sqrt().flatten();
  // distances within 1e-6 of an integer threshold count as on it
  for (int tau = 0; tau < kAucThresholds; ++tau) {
    within_[static_cast<size_t>(tau)] += (dist <= tau + 1e-6).sum().item<int64_t>();
  }
  pixels_ += dist.numel();
}

AucResult AucAccumulator::result() const {
  AucResult r;
  if (pixels_ == 0) return r;
  double total = 0.0;
  for (size_t t = 0; t < r.curve.size(); ++t) {
    r.curve[t] = static_cast<double>(within_[t]) / static_cast<double>(pixels_);
    total += r.curve[t];
  }
  r.auc = total / static_cast<double>(kAucThresholds);
  return r;
}

AucResult auc_raw_accuracy(const ImageBatch& pred_ab, const ImageBatch& truth_ab) {
  if (pred_ab.space() != ColorSpace::kAb || truth_ab.space() != ColorSpace::kAb) {
    throw ContractError("auc_raw_accuracy: expects AB batches");
  }
  AucAccumulator acc;
  acc.add(pred_ab.values(), truth_ab.values());
  return acc.result();
}

// ---- set evaluation --------------------------------------------------------------

std::string MetricReport::per_image_csv() const {
  std::ostringstream out;
  out << "image,mae,mse,psnr,psnr_capped,ssim,lpips\n";
  for (const auto& m : images) {
    out << m.name << ',' << format_double(m.mae) << ',' << format_double(m.mse) << ','
        << format_double(m.psnr) << ',' << (m.psnr_capped ? 1 : 0) << ','
        << format_double(m.ssim) << ',' << format_double(m.lpips) << '\n';
  }
  return out.str();
}

std::string MetricReport::summary_csv() const {
  std::ostringstream out;
  out << "# metric_version " << metric_version << '\n';
  out << "# images " << images.size() << '\n';
  out << "MAE,MSE,PSNR,SSIM,LPIPS,FID,AuC\n";
  out << format_double(summary.mae) << ',' << format_double(summary.mse) << ','
      << format_double(summary.psnr) << ',' << format_double(summary.ssim) << ','
      << format_double(summary.lpips) << ','
      << (summary.fid ? format_double(*summary.fid) : std::string("nan")) << ','
      << format_double(summary.auc) << '\n';
  return out.str();
}

void MetricReport::write(const std::filesystem::path& directory) const {
  std::filesystem::create_directories(directory);
  auto write_file = [&](const std::string& name, const std::string& text) {
    std::ofstream out(directory / name, std::ios::trunc);
    if (!out) throw IoError("cannot write " + (directory / name).string());
    out << text;
  };
  write_file("metrics.csv", per_image_csv());
  write_file("summary.csv", summary_csv());
  std::ostringstream curve;
  curve << "threshold,fraction\n";
  for (size_t t = 0; t < auc.curve.size(); ++t) curve << t << ',' << format_double(auc.curve[t]) << '\n';
  write_file("auc_curve.csv", curve.str());
}

MetricReport MetricReport::read_summary(const std::filesystem::path& directory) {
  std::ifstream in(directory / "summary.csv");
  if (!in) throw IoError("no summary.csv in " + directory.string());
  MetricReport report;
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.rfind("# metric_version ", 0) == 0) {
      report.metric_version = line.substr(17);
      continue;
    }
    if (line[0] == '#') continue;
    if (!header_seen) {
      header_seen = true;
      continue;
    }
    std::istringstream fields(line);
    std::string cell;
    std::vector<double> values;
    while (std::getline(fields, cell, ',')) values.push_back(std::stod(cell));
    if (values.size() < 7) throw IoError("malformed summary.csv in " + directory.string());
    report.summary.mae = values[0];
    report.summary.mse = values[1];
    report.summary.psnr = values[2];
    report.summary.ssim = values[3];
    report.summary.lpips = values[4];
    if (std::isfinite(values[5])) report.summary.fid = values[5];
    report.summary.auc = values[6];
    report.auc.auc = values[6];
  }
  if (!header_seen) throw IoError("empty summary.csv in " + directory.string());
  return report;
}

EvaluationContext make_evaluation_context(ExtractorPtr extractor) {
  auto cfg = LpipsConfig::uniform(*extractor);
  return make_evaluation_context(std::move(extractor), std::move(cfg));
}

EvaluationContext make_evaluation_context(ExtractorPtr extractor, LpipsConfig lpips) {
  EvaluationContext ctx;
  ctx.metric_version = "lpips=" + extractor->version() + ";fid=" + extractor->version() + "-pool";
  ctx.embedder = [extractor](const torch::Tensor& rgb) { return pooled_embedding(*extractor, rgb); };
  ctx.lpips_extractor = std::move(extractor);
  ctx.lpips_config = std::move(lpips);
  return ctx;
}

SetEvaluator::SetEvaluator(EvaluationContext context) : context_(std::move(context)) {}

void SetEvaluator::add(const std::string& name, const torch::Tensor& prediction,
                       const torch::Tensor& truth) {
  require_pair(prediction, truth, "evaluate_set");
  if (prediction.size(0) != 1 || prediction.size(1) != 3) {
    throw ContractError("evaluate_set: expects one 3-channel RGB image per pair");
  }
  torch::NoGradGuard no_grad;
  auto pred = prediction.detach().to(torch::kFloat32);
  auto gt = truth.detach().to(torch::kFloat32);
  ImageMetrics m;
  m.name = name;
  m.mae = colorloss::mae_loss(gt.to(torch::kFloat64), pred.to(torch::kFloat64)).item<double>();
  m.mse = colorloss::mse_loss(gt.to(torch::kFloat64), pred.to(torch::kFloat64)).item<double>();
  const auto p = psnr(gt, pred, context_.psnr).front();
  m.psnr = p.value;
  m.psnr_capped = p.capped;
  m.ssim = ssim(gt, pred, context_.ssim).front();
  m.lpips = lpips_distance(gt, pred, *context_.lpips_extractor, context_.lpips_config)
                .to(torch::kFloat64)
                .item<double>();
  images_.push_back(m);
  real_.add(context_.embedder(gt));
  generated_.add(context_.embedder(pred));
  auto lab_pred = rgb_to_lab(ImageBatch(pred, ColorSpace::kRgb));
  auto lab_gt = rgb_to_lab(ImageBatch(gt, ColorSpace::kRgb));
  auc_.add(lab_pred.values().narrow(1, 1, 2), lab_gt.values().narrow(1, 1, 2));
}

MetricReport SetEvaluator::finish() const {
  MetricReport report;
  report.images = images_;
  report.metric_version = context_.metric_version;
  report.summary.mae = mean_of(images_, &ImageMetrics::mae);
  report.summary.mse = mean_of(images_, &ImageMetrics::mse);
  report.summary.psnr = mean_of(images_, &ImageMetrics::psnr);
  report.summary.ssim = mean_of(images_, &ImageMetrics::ssim);
  report.summary.lpips = mean_of(images_, &ImageMetrics::lpips);
  if (real_.count() >= 2) report.summary.fid = fid(real_.stats(), generated_.stats());
  report.auc = auc_.result();
  report.summary.auc = report.auc.auc;
  return report;
}

MetricReport evaluate_set(const std::vector<std::string>& names,
                          const std::vector<torch::Tensor>& predictions,
                          const std::vector<torch::Tensor>& truths,
                          const EvaluationContext& context) {
  if (predictions.size() != truths.size() || names.size() != truths.size()) {
    throw ContractError("evaluate_set: misaligned pair count (" +
                        std::to_string(predictions.size()) + " predictions, " +
                        std::to_string(truths.size()) + " ground truths)");
  }
  SetEvaluator evaluator(context);
  for (size_t i = 0; i < truths.size(); ++i) evaluator.add(names[i], predictions[i], truths[i]);
  return evaluator.finish();
}

}  // namespace colorloss
