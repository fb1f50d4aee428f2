#pragma once

#include <torch/torch.h>

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "colorloss/colorspace.hpp"
#include "colorloss/losses.hpp"

namespace colorloss {

// ---- PSNR -------------------------------------------------------------------

struct PsnrResult {
  double value = 0.0;  // dB
  bool capped = false;  // MSE below 1e-10, value set to the cap
};

struct PsnrOptions {
  // When false the peak is max(ground truth) per image, otherwise 1.0.
  bool fixed_peak = false;
  double cap_db = 100.0;
};

// Per image of B x C x H x W batches; `truth` supplies the peak.
std::vector<PsnrResult> psnr(const torch::Tensor& truth, const torch::Tensor& test,
                             const PsnrOptions& options = {});
std::vector<PsnrResult> psnr(const ImageBatch& truth, const ImageBatch& test,
                             const PsnrOptions& options = {});

// ---- SSIM -------------------------------------------------------------------

enum class SsimMode {
  kWindowed,  // Gaussian local windows, averaged over positions and channels
  kGlobal,    // one window covering the whole channel
};

struct SsimConfig {
  double dynamic_range = 1.0;
  double k1 = 0.01;
  double k2 = 0.03;
  int window = 11;
  double sigma = 1.5;
  SsimMode mode = SsimMode::kWindowed;

  double c1() const { return (k1 * dynamic_range) * (k1 * dynamic_range); }
  double c2() const { return (k2 * dynamic_range) * (k2 * dynamic_range); }
  double c3() const { return c2() / 2.0; }
};

// Per-image SSIM in [-1, 1].
std::vector<double> ssim(const torch::Tensor& u, const torch::Tensor& v, const SsimConfig& cfg = {});
std::vector<double> ssim(const ImageBatch& u, const ImageBatch& v, const SsimConfig& cfg = {});

// Normalized 1-D Gaussian taps used by the windowed mode.
std::vector<double> gaussian_window(int size, double sigma);

// ---- FID --------------------------------------------------------------------

struct EmbeddingStats {
  torch::Tensor mu;     // D, float64
  torch::Tensor sigma;  // D x D, float64, unbiased
  int64_t n = 0;
};

// Streaming mean/covariance (Welford / Chan). Merges are exact and ordered.
class EmbeddingAccumulator {
 public:
  void add(const torch::Tensor& embeddings);  // N x D
  void merge(const EmbeddingAccumulator& other);
  int64_t count() const { return n_; }
  EmbeddingStats stats() const;

 private:
  int64_t n_ = 0;
  torch::Tensor mean_;
  torch::Tensor m2_;
};

using Embedder = std::function<torch::Tensor(const torch::Tensor& rgb)>;  // B x 3 x H x W -> B x D

EmbeddingStats embed_statistics(const std::vector<torch::Tensor>& images, const Embedder& embedder);

// ||mu_r - mu_g||^2 + Tr(S_r + S_g - 2 (S_r S_g)^{1/2}). The trace of the
// square root is computed from the symmetric form S_r^{1/2} S_g S_r^{1/2},
// with negative eigenvalues clipped to zero.
double fid(const EmbeddingStats& real, const EmbeddingStats& generated);

// ---- AuC raw accuracy --------------------------------------------------------

inline constexpr int kAucThresholds = 151;

struct AucResult {
  std::array<double, kAucThresholds> curve{};
  double auc = 0.0;
};

// Counts of pixels within each integer ab threshold 0..150; mergeable.
class AucAccumulator {
 public:
  // pred / truth are normalized AB tensors (B x 2 x H x W).
  void add(const torch::Tensor& pred_ab, const torch::Tensor& truth_ab);
  AucResult result() const;
  int64_t pixels() const { return pixels_; }

 private:
  std::array<int64_t, kAucThresholds> within_{};
  int64_t pixels_ = 0;
};

AucResult auc_raw_accuracy(const ImageBatch& pred_ab, const ImageBatch& truth_ab);

// ---- set evaluation ------------------------------------------------------------

struct ImageMetrics {
  std::string name;
  double mae = 0.0;
  double mse = 0.0;
  double psnr = 0.0;
  bool psnr_capped = false;
  double ssim = 0.0;
  double lpips = 0.0;
};

struct MetricSummary {
  double mae = 0.0;
  double mse = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
  double lpips = 0.0;
  std::optional<double> fid;  // needs >= 2 images
  double auc = 0.0;
};

struct MetricReport {
  std::vector<ImageMetrics> images;
  MetricSummary summary;
  AucResult auc;
  std::string metric_version;

  // Per-image CSV: name,mae,mse,psnr,psnr_capped,ssim,lpips
  std::string per_image_csv() const;
  // Summary CSV with columns MAE,MSE,PSNR,SSIM,LPIPS,FID,AuC.
  std::string summary_csv() const;
  void write(const std::filesystem::path& directory) const;
  static MetricReport read_summary(const std::filesystem::path& directory);
};

struct EvaluationContext {
  ExtractorPtr lpips_extractor;
  LpipsConfig lpips_config;
  Embedder embedder;
  std::string metric_version;
  SsimConfig ssim;
  PsnrOptions psnr;
};

// Default context from a feature extractor: uniform LPIPS weights and pooled
// last-tap embeddings for FID.
EvaluationContext make_evaluation_context(ExtractorPtr extractor);
EvaluationContext make_evaluation_context(ExtractorPtr extractor, LpipsConfig lpips);

// Streams aligned (prediction, ground truth) RGB pairs.
class SetEvaluator {
 public:
  explicit SetEvaluator(EvaluationContext context);
  // Both 1 x 3 x H x W RGB in [0, 1].
  void add(const std::string& name, const torch::Tensor& prediction, const torch::Tensor& truth);
  MetricReport finish() const;

 private:
  EvaluationContext context_;
  std::vector<ImageMetrics> images_;
  EmbeddingAccumulator real_;
  EmbeddingAccumulator generated_;
  AucAccumulator auc_;
};

MetricReport evaluate_set(const std::vector<std::string>& names,
                          const std::vector<torch::Tensor>& predictions,
                          const std::vector<torch::Tensor>& truths,
                          const EvaluationContext& context);

}  // namespace colorloss
