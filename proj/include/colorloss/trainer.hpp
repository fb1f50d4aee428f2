#pragma once

#include <ATen/core/Generator.h>
#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "colorloss/adversarial.hpp"
#include "colorloss/colorspace.hpp"
#include "colorloss/data.hpp"
#include "colorloss/error.hpp"
#include "colorloss/losses.hpp"
#include "colorloss/metrics.hpp"
#include "colorloss/step_report.hpp"
#include "colorloss/unet.hpp"

namespace colorloss {

enum class LossKind { kL1, kL2, kLpips, kWganL2, kWganLpips };

std::string_view to_string(LossKind loss);
// Accepts l1, l2, lpips, wgan_l2, wgan_lpips.
LossKind loss_from_string(std::string_view name);
bool is_adversarial(LossKind loss);
bool uses_lpips(LossKind loss);

struct TrainConfig {
  LossKind loss = LossKind::kL2;
  ColorSpace color_space = ColorSpace::kLab;

  double learning_rate = 2e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  int64_t batch_size = 16;
  int64_t epochs = 10;
  int64_t max_steps = 0;  // > 0 overrides epochs
  uint64_t data_seed = 0;
  uint64_t init_seed = 0;
  int64_t checkpoint_every = 1000;  // 0: final checkpoint only
  int64_t eval_every = 0;           // 0: no validation during training

  int64_t crop_size = 256;
  int64_t base_filters = 64;
  std::string extractor = "toy";      // toy | vgg
  std::string lpips_weights = "auto";  // auto | uniform | calibrated
  std::string weights;                 // archive path; empty: <cache>/vgg16.clwa
  bool pretrained_encoder = false;

  double gp_lambda = 10.0;
  double content_weight = 1.0;
  double adversarial_weight = 0.01;
  int64_t critic_steps = 5;

  std::string train_dir;
  std::string val_dir;
  std::string out_dir = "runs/default";

  int64_t out_channels() const;
  void validate() const;

  // "key = value" lines. Strings are double-quoted on output; quotes are
  // optional on input. Unknown keys raise ContractError.
  std::string to_text() const;
  static TrainConfig from_text(const std::string& text);
  static TrainConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  void set(const std::string& key, const std::string& value);
  static std::vector<std::string> keys();

  // FNV-1a over every key that changes the optimization trajectory. Run
  // length (epochs, max_steps), cadences and paths are excluded so a run can
  // be extended or moved.
  uint64_t hash() const;

  AdversarialSpec adversarial_spec() const;
  NetworkConfig network_config() const;
};

// Resolves the weight archive path of a config.
std::filesystem::path weights_path(const TrainConfig& cfg);
// Feature extractor named by cfg.extractor.
ExtractorPtr make_extractor(const TrainConfig& cfg);
LpipsConfig make_lpips_config(const TrainConfig& cfg, const FeatureExtractor& extractor);

// Content term of a loss. Term names: content_mae, content_mse, content_lpips.
// The LPIPS term assembles the prediction into RGB before the extractor.
ContentObjective make_content_objective(LossKind loss, ColorSpace space, ExtractorPtr extractor,
                                        LpipsConfig lpips_cfg);

// Raised when training stops on a non-finite loss. Holds the last checkpoint
// written before the failure (empty when none exists).
class TrainingHalted : public NumericError {
 public:
  TrainingHalted(const std::string& what, std::filesystem::path last_good)
      : NumericError(what), last_good_(std::move(last_good)) {}
  const std::filesystem::path& last_good() const { return last_good_; }

 private:
  std::filesystem::path last_good_;
};

// Owns the generator, the optional critic and their optimizers for one run
// directory:
//   config.toml     effective configuration
//   steps.log       one StepReport line per step
//   checkpoints/    step_NNNNNNN/ snapshots and best/ (lowest validation LPIPS)
//   reports/        validation metric reports
class Trainer {
 public:
  Trainer(TrainConfig cfg, DatasetManifest train, std::filesystem::path run_dir);

  // Continues from a checkpoint. The checkpoint's config hash must equal
  // cfg.hash(); the step log is truncated to the checkpoint step.
  static std::unique_ptr<Trainer> resume(const std::filesystem::path& checkpoint, TrainConfig cfg,
                                         DatasetManifest train, std::filesystem::path run_dir);

  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  // One optimization step, logged; may checkpoint and validate.
  StepReport step();
  // Steps until total_steps(); writes a final checkpoint.
  std::vector<StepReport> run();
  std::vector<StepReport> run(int64_t steps);

  int64_t total_steps() const;
  int64_t step_count() const { return step_; }
  int64_t batches_per_epoch() const;
  // Batch consumed by step `step` (1-based).
  Batch batch_for_step(int64_t step) const;

  std::filesystem::path save_checkpoint();
  void set_validation(DatasetManifest val);
  std::optional<MetricReport> validate_now();

  const TrainConfig& config() const { return cfg_; }
  const std::filesystem::path& run_dir() const { return run_dir_; }
  UNet& generator() { return generator_; }
  Critic& critic() { return critic_; }
  const ExtractorPtr& extractor() const { return extractor_; }
  std::optional<double> best_lpips() const { return best_lpips_; }
  const std::filesystem::path& last_checkpoint() const { return last_checkpoint_; }

 private:
  Trainer(TrainConfig cfg, DatasetManifest train, std::filesystem::path run_dir, bool fresh);
  void write_checkpoint(const std::filesystem::path& dir) const;
  void load_state(const std::filesystem::path& checkpoint);
  void append_log(const std::string& line);

  TrainConfig cfg_;
  DatasetManifest train_;
  std::optional<DatasetManifest> val_;
  std::filesystem::path run_dir_;
  UNet generator_{nullptr};
  Critic critic_{nullptr};
  std::unique_ptr<torch::optim::Adam> gen_opt_;
  std::unique_ptr<torch::optim::Adam> critic_opt_;
  at::Generator gp_rng_;
  ExtractorPtr extractor_;
  ContentObjective content_;
  int64_t step_ = 0;
  std::optional<double> best_lpips_;
  std::filesystem::path last_checkpoint_;
};

// Trainer configuration and generator restored from a checkpoint directory.
struct LoadedModel {
  TrainConfig config;
  UNet generator{nullptr};
  int64_t step = 0;
};
LoadedModel load_checkpoint(const std::filesystem::path& checkpoint);

// Colorizes one 1 x 3 x H x W RGB (or replicated gray) image at its own
// resolution: grayscale conversion, reflect padding to a multiple of 16,
// forward in eval mode, crop back, RGB assembly. Lab outputs keep the input
// lightness (chroma is pulled into gamut instead of clamping RGB).
torch::Tensor colorize_image(UNet& generator, ColorSpace space, const torch::Tensor& rgb);

// Runs colorize_image over the usable entries and scores them in RGB.
// Predictions are written as PNG when `predictions_dir` is non-empty.
MetricReport evaluate(UNet& generator, ColorSpace space, const DatasetManifest& manifest,
                      const EvaluationContext& context,
                      const std::filesystem::path& predictions_dir = {});

}  // namespace colorloss
