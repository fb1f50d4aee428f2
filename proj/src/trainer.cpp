#include "colorloss/trainer.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>

#include "colorloss/log.hpp"
#include "colorloss/weights.hpp"

namespace colorloss {
namespace fs = std::filesystem;

namespace {

// ---- config fields --------------------------------------------------------

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string quote(const std::string& s) { return "\"" + s + "\""; }

double parse_double(const std::string& key, const std::string& value) {
  size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != value.size()) {
    throw ContractError("config: " + key + " expects a number, got '" + value + "'");
  }
  return v;
}

int64_t parse_int(const std::string& key, const std::string& value) {
  size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != value.size()) {
    throw ContractError("config: " + key + " expects an integer, got '" + value + "'");
  }
  return v;
}

uint64_t parse_uint(const std::string& key, const std::string& value) {
  const int64_t v = parse_int(key, value);
  if (v < 0) throw ContractError("config: " + key + " must be non-negative");
  return static_cast<uint64_t>(v);
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ContractError("config: " + key + " expects true or false, got '" + value + "'");
}

struct Field {
  const char* key;
  bool hashed;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&, const std::string&)> put;
};

#define CL_DOUBLE(name, hashed)                                                         \
  Field{#name, hashed, [](const TrainConfig& c) { return fmt_double(c.name); },         \
        [](TrainConfig& c, const std::string& k, const std::string& v) {                \
          c.name = parse_double(k, v);                                                  \
        }}
#define CL_INT(name, hashed)                                                            \
  Field{#name, hashed, [](const TrainConfig& c) { return std::to_string(c.name); },     \
        [](TrainConfig& c, const std::string& k, const std::string& v) {                \
          c.name = parse_int(k, v);                                                     \
        }}
#define CL_UINT(name, hashed)                                                           \
  Field{#name, hashed, [](const TrainConfig& c) { return std::to_string(c.name); },     \
        [](TrainConfig& c, const std::string& k, const std::string& v) {                \
          c.name = parse_uint(k, v);                                                    \
        }}
#define CL_STRING(name, hashed)                                                         \
  Field{#name, hashed, [](const TrainConfig& c) { return quote(c.name); },              \
        [](TrainConfig& c, const std::string&, const std::string& v) { c.name = v; }}
#define CL_BOOL(name, hashed)                                                           \
  Field{#name, hashed,                                                                  \
        [](const TrainConfig& c) { return std::string(c.name ? "true" : "false"); },    \
        [](TrainConfig& c, const std::string& k, const std::string& v) {                \
          c.name = parse_bool(k, v);                                                    \
        }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      Field{"loss", true, [](const TrainConfig& c) { return quote(std::string(to_string(c.loss))); },
            [](TrainConfig& c, const std::string&, const std::string& v) {
              c.loss = loss_from_string(v);
            }},
      Field{"color_space", true,
            [](const TrainConfig& c) { return quote(std::string(to_string(c.color_space))); },
            [](TrainConfig& c, const std::string&, const std::string& v) {
              c.color_space = color_space_from_string(v);
            }},
      CL_DOUBLE(learning_rate, true),
      CL_DOUBLE(beta1, true),
      CL_DOUBLE(beta2, true),
      CL_DOUBLE(adam_epsilon, true),
      CL_INT(batch_size, true),
      CL_INT(epochs, false),
      CL_INT(max_steps, false),
      CL_UINT(data_seed, true),
      CL_UINT(init_seed, true),
      CL_INT(checkpoint_every, false),
      CL_INT(eval_every, false),
      CL_INT(crop_size, true),
      CL_INT(base_filters, true),
      CL_STRING(extractor, true),
      CL_STRING(lpips_weights, true),
      CL_STRING(weights, false),
      CL_BOOL(pretrained_encoder, true),
      CL_DOUBLE(gp_lambda, true),
      CL_DOUBLE(content_weight, true),
      CL_DOUBLE(adversarial_weight, true),
      CL_INT(critic_steps, true),
      CL_STRING(train_dir, false),
      CL_STRING(val_dir, false),
      CL_STRING(out_dir, false),
  };
  return table;
}

#undef CL_DOUBLE
#undef CL_INT
#undef CL_UINT
#undef CL_STRING
#undef CL_BOOL

std::string read_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  out.flush();
  if (!out) throw IoError("write failed: " + path.string());
}

std::string step_dir_name(int64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "step_%07lld", static_cast<long long>(step));
  return buf;
}

struct CheckpointState {
  int64_t step = 0;
  uint64_t config_hash = 0;
  std::optional<double> best_lpips;
};

CheckpointState read_state(const fs::path& dir) {
  std::istringstream in(read_file(dir / "state.txt"));
  CheckpointState state;
  std::string key;
  bool has_step = false, has_hash = false;
  while (in >> key) {
    if (key == "step") {
      in >> state.step;
      has_step = true;
    } else if (key == "config_hash") {
      in >> state.config_hash;
      has_hash = true;
    } else if (key == "best_lpips") {
      double v = 0.0;
      in >> v;
      state.best_lpips = v;
    } else {
      std::string rest;
      std::getline(in, rest);
    }
  }
  if (!has_step || !has_hash) throw IoError("malformed state.txt in " + dir.string());
  return state;
}

torch::Tensor nan_rgb_like(const torch::Tensor& prediction) {
  return torch::full({prediction.size(0), 3, prediction.size(2), prediction.size(3)},
                     std::numeric_limits<double>::quiet_NaN(), prediction.options());
}

}  // namespace

// ---- loss kinds -------------------------------------------------------------

std::string_view to_string(LossKind loss) {
  switch (loss) {
    case LossKind::kL1: return "l1";
    case LossKind::kL2: return "l2";
    case LossKind::kLpips: return "lpips";
    case LossKind::kWganL2: return "wgan_l2";
    case LossKind::kWganLpips: return "wgan_lpips";
  }
  return "?";
}

LossKind loss_from_string(std::string_view name) {
  for (auto kind : {LossKind::kL1, LossKind::kL2, LossKind::kLpips, LossKind::kWganL2,
                    LossKind::kWganLpips}) {
    if (name == to_string(kind)) return kind;
  }
  throw ContractError("unknown loss '" + std::string(name) +
                      "' (expected l1, l2, lpips, wgan_l2 or wgan_lpips)");
}

bool is_adversarial(LossKind loss) {
  return loss == LossKind::kWganL2 || loss == LossKind::kWganLpips;
}

bool uses_lpips(LossKind loss) { return loss == LossKind::kLpips || loss == LossKind::kWganLpips; }

// ---- TrainConfig ----------------------------------------------------------------

int64_t TrainConfig::out_channels() const { return network_config().out_channels(); }

void TrainConfig::validate() const {
  if (color_space != ColorSpace::kLab && color_space != ColorSpace::kRgb) {
    throw ContractError("config: color_space must be lab or rgb");
  }
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ContractError("config: learning_rate must be > 0");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ContractError("config: beta1 and beta2 must lie in [0, 1)");
  }
  if (!(adam_epsilon > 0.0)) throw ContractError("config: adam_epsilon must be > 0");
  if (batch_size < 1) throw ContractError("config: batch_size must be >= 1");
  if (epochs < 0 || max_steps < 0) throw ContractError("config: epochs and max_steps must be >= 0");
  if (epochs == 0 && max_steps == 0) throw ContractError("config: set epochs or max_steps");
  if (checkpoint_every < 0 || eval_every < 0) {
    throw ContractError("config: checkpoint_every and eval_every must be >= 0");
  }
  if (crop_size < 16 || crop_size % 16 != 0) {
    throw ContractError("config: crop_size must be a positive multiple of 16");
  }
  if (extractor != "toy" && extractor != "vgg") {
    throw ContractError("config: extractor must be toy or vgg, got '" + extractor + "'");
  }
  if (lpips_weights != "auto" && lpips_weights != "uniform" && lpips_weights != "calibrated") {
    throw ContractError("config: lpips_weights must be auto, uniform or calibrated");
  }
  if (lpips_weights == "calibrated" && extractor != "vgg") {
    throw ContractError("config: calibrated lpips weights require the vgg extractor");
  }
  network_config().validate();
  adversarial_spec().validate();
}

std::string TrainConfig::to_text() const {
  std::ostringstream out;
  for (const auto& f : fields()) out << f.key << " = " << f.get(*this) << '\n';
  return out.str();
}

TrainConfig TrainConfig::from_text(const std::string& text) {
  TrainConfig cfg;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#' || line[0] == '[') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ContractError("config: expected 'key = value', got '" + line + "'");
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

TrainConfig TrainConfig::load(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("config file not found: " + path.string());
  return from_text(read_file(path));
}

void TrainConfig::save(const fs::path& path) const { write_file(path, to_text()); }

void TrainConfig::set(const std::string& key, const std::string& raw) {
  std::string value = trim(raw);
  if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
    value = value.substr(1, value.size() - 2);
  }
  for (const auto& f : fields()) {
    if (key == f.key) {
      f.put(*this, key, value);
      return;
    }
  }
  throw ContractError("config: unknown key '" + key + "'");
}

std::vector<std::string> TrainConfig::keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.emplace_back(f.key);
  return out;
}

uint64_t TrainConfig::hash() const {
  uint64_t h = 14695981039346656037ull;
  auto mix = [&h](const std::string& s) {
    for (unsigned char ch : s) {
      h ^= ch;
      h *= 1099511628211ull;
    }
  };
  for (const auto& f : fields()) {
    if (!f.hashed) continue;
    mix(f.key);
    mix("=");
    mix(f.get(*this));
    mix("\n");
  }
  return h;
}

AdversarialSpec TrainConfig::adversarial_spec() const {
  AdversarialSpec spec;
  spec.kind = AdversarialKind::kWganGp;
  spec.gp_lambda = gp_lambda;
  spec.content_weight = content_weight;
  spec.adversarial_weight = adversarial_weight;
  spec.critic_steps_per_gen_step = static_cast<int>(critic_steps);
  return spec;
}

NetworkConfig TrainConfig::network_config() const {
  NetworkConfig net;
  net.base_filters = base_filters;
  net.target_space = color_space;
  net.head = OutputHead::kBounded;
  net.use_pretrained_encoder = pretrained_encoder;
  return net;
}

fs::path weights_path(const TrainConfig& cfg) {
  if (!cfg.weights.empty()) return cfg.weights;
  return weight_cache_dir() / "vgg16.clwa";
}

ExtractorPtr make_extractor(const TrainConfig& cfg) {
  if (cfg.extractor == "toy") return make_toy_extractor();
  if (cfg.extractor == "vgg") return make_vgg16_extractor(WeightArchive::load(weights_path(cfg)));
  throw ContractError("unknown extractor '" + cfg.extractor + "'");
}

LpipsConfig make_lpips_config(const TrainConfig& cfg, const FeatureExtractor& extractor) {
  const bool calibrated =
      cfg.lpips_weights == "calibrated" || (cfg.lpips_weights == "auto" && cfg.extractor == "vgg");
  if (!calibrated) return LpipsConfig::uniform(extractor);
  return LpipsConfig::calibrated(extractor, WeightArchive::load(weights_path(cfg)));
}

ContentObjective make_content_objective(LossKind loss, ColorSpace space, ExtractorPtr extractor,
                                        LpipsConfig lpips_cfg) {
  const ColorSpace prediction_space = space == ColorSpace::kLab ? ColorSpace::kAb : ColorSpace::kRgb;
  ContentObjective objective;
  objective.to_rgb = [space, prediction_space](const torch::Tensor& prediction, const Batch& batch) {
    if (!torch::isfinite(prediction.detach()).all().item<bool>()) return nan_rgb_like(prediction);
    return assemble_output(ImageBatch(batch.gray, ColorSpace::kGray),
                           ImageBatch(prediction, prediction_space), space)
        .values();
  };
  switch (loss) {
    case LossKind::kL1:
      objective.name = "content_mae";
      objective.loss = [](const torch::Tensor& prediction, const Batch& batch) {
        return colorloss::mae_loss(prediction, batch.target);
      };
      break;
    case LossKind::kL2:
    case LossKind::kWganL2:
      objective.name = "content_mse";
      objective.loss = [](const torch::Tensor& prediction, const Batch& batch) {
        return colorloss::mse_loss(prediction, batch.target);
      };
      break;
    case LossKind::kLpips:
    case LossKind::kWganLpips: {
      if (!extractor) throw ContractError("LPIPS objective needs a feature extractor");
      auto to_rgb = objective.to_rgb;
      objective.name = "content_lpips";
      objective.loss = [to_rgb, extractor, lpips_cfg](const torch::Tensor& prediction,
                                                      const Batch& batch) {
        return colorloss::lpips(to_rgb(prediction, batch), batch.rgb, *extractor, lpips_cfg);
      };
      break;
    }
  }
  return objective;
}

// ---- Trainer ----------------------------------------------------------------------

Trainer::Trainer(TrainConfig cfg, DatasetManifest train, fs::path run_dir)
    : Trainer(std::move(cfg), std::move(train), std::move(run_dir), true) {}

Trainer::Trainer(TrainConfig cfg, DatasetManifest train, fs::path run_dir, bool fresh)
    : cfg_(std::move(cfg)), train_(std::move(train)), run_dir_(std::move(run_dir)) {
  cfg_.validate();
  if (train_.size() == 0) throw ContractError("train: the training manifest has no usable images");
  // Batch normalization at the bottleneck needs two values per channel in
  // every batch, including the short last batch of an epoch.
  const auto images = static_cast<int64_t>(train_.size());
  const int64_t remainder = images % cfg_.batch_size;
  const int64_t smallest = std::min(images, remainder == 0 ? cfg_.batch_size : remainder);
  const int64_t bottleneck = (cfg_.crop_size / 16) * (cfg_.crop_size / 16);
  if (smallest * bottleneck < 2) {
    throw ContractError("train: a batch of " + std::to_string(smallest) + " image(s) at crop " +
                        std::to_string(cfg_.crop_size) +
                        " leaves one value per channel at the bottleneck; use a larger crop or "
                        "a batch size that divides the " + std::to_string(images) + " images");
  }

  fs::create_directories(run_dir_ / "checkpoints");
  fs::create_directories(run_dir_ / "reports");
  cfg_.save(run_dir_ / "config.toml");
  if (fresh) write_file(run_dir_ / "steps.log", "");

  generator_ = build_unet(cfg_.network_config(), cfg_.init_seed);
  if (cfg_.pretrained_encoder) {
    load_pretrained_encoder(generator_, WeightArchive::load(weights_path(cfg_)));
  }
  auto adam = [this] {
    return torch::optim::AdamOptions(cfg_.learning_rate)
        .betas({cfg_.beta1, cfg_.beta2})
        .eps(cfg_.adam_epsilon);
  };
  gen_opt_ = std::make_unique<torch::optim::Adam>(generator_->parameters(), adam());
  if (is_adversarial(cfg_.loss)) {
    critic_ = build_critic(CriticConfig{}, cfg_.init_seed + 1);
    critic_opt_ = std::make_unique<torch::optim::Adam>(critic_->parameters(), adam());
  }
  gp_rng_ = at::make_generator<at::CPUGeneratorImpl>(cfg_.init_seed + 2);
  if (uses_lpips(cfg_.loss)) {
    extractor_ = make_extractor(cfg_);
    content_ = make_content_objective(cfg_.loss, cfg_.color_space, extractor_,
                                      make_lpips_config(cfg_, *extractor_));
  } else {
    content_ = make_content_objective(cfg_.loss, cfg_.color_space, nullptr, {});
  }
}

std::unique_ptr<Trainer> Trainer::resume(const fs::path& checkpoint, TrainConfig cfg,
                                         DatasetManifest train, fs::path run_dir) {
  const auto state = read_state(checkpoint);
  if (state.config_hash != cfg.hash()) {
    std::ostringstream msg;
    msg << "resume: config hash mismatch (checkpoint " << state.config_hash << ", config "
        << cfg.hash() << "); trajectory-relevant settings differ from "
        << (checkpoint / "config.toml").string();
    throw ContractError(msg.str());
  }
  std::unique_ptr<Trainer> trainer(
      new Trainer(std::move(cfg), std::move(train), std::move(run_dir), false));
  trainer->load_state(checkpoint);

  // Drop log lines written after the checkpoint.
  const auto log_path = trainer->run_dir_ / "steps.log";
  std::string kept;
  if (fs::exists(log_path)) {
    std::istringstream in(read_file(log_path));
    std::string line;
    while (std::getline(in, line)) {
      if (line.rfind("step=", 0) != 0) continue;
      if (StepReport::from_line(line).step <= trainer->step_) kept += line + "\n";
    }
  }
  write_file(log_path, kept);
  return trainer;
}

void Trainer::load_state(const fs::path& checkpoint) {
  const auto state = read_state(checkpoint);
  torch::load(generator_, (checkpoint / "generator.pt").string());
  torch::load(*gen_opt_, (checkpoint / "generator_optimizer.pt").string());
  if (critic_) {
    torch::load(critic_, (checkpoint / "critic.pt").string());
    torch::load(*critic_opt_, (checkpoint / "critic_optimizer.pt").string());
  }
  torch::Tensor rng_state;
  torch::load(rng_state, (checkpoint / "rng.pt").string());
  gp_rng_.set_state(rng_state);
  step_ = state.step;
  best_lpips_ = state.best_lpips;
  last_checkpoint_ = checkpoint;
}

int64_t Trainer::batches_per_epoch() const {
  const auto n = static_cast<int64_t>(train_.size());
  return (n + cfg_.batch_size - 1) / cfg_.batch_size;
}

int64_t Trainer::total_steps() const {
  return cfg_.max_steps > 0 ? cfg_.max_steps : cfg_.epochs * batches_per_epoch();
}

Batch Trainer::batch_for_step(int64_t step) const {
  if (step < 1) throw ContractError("batch_for_step: steps are 1-based");
  const int64_t index = step - 1;
  const int64_t epoch = index / batches_per_epoch();
  const auto position = static_cast<size_t>(index % batches_per_epoch());
  const auto order = batch_order(train_.size(), cfg_.batch_size, cfg_.data_seed, epoch);
  PreprocessOptions options{cfg_.crop_size, cfg_.color_space};
  return load_batch(train_, order[position], cfg_.data_seed, epoch, options);
}

void Trainer::append_log(const std::string& line) {
  std::ofstream out(run_dir_ / "steps.log", std::ios::app);
  out << line << '\n';
  out.flush();
  if (!out) throw IoError("cannot append to " + (run_dir_ / "steps.log").string());
}

StepReport Trainer::step() {
  const auto batch = batch_for_step(step_ + 1);
  StepReport report;
  try {
    if (is_adversarial(cfg_.loss)) {
      report = adversarial_train_step(generator_, critic_, batch, content_, cfg_.adversarial_spec(),
                                      *gen_opt_, *critic_opt_, gp_rng_);
    } else {
      report = content_train_step(generator_, batch, content_, *gen_opt_);
    }
  } catch (const NonFiniteLoss& e) {
    auto failed = e.report();
    failed.step = step_ + 1;
    append_log("halted " + failed.to_line());
    const std::string last =
        last_checkpoint_.empty() ? std::string("none") : last_checkpoint_.string();
    log::error("training halted at step " + std::to_string(step_ + 1) + ": " + e.what() +
               "; last good checkpoint: " + last);
    throw TrainingHalted("training halted at step " + std::to_string(step_ + 1) + ": " +
                             e.what() + "; last good checkpoint: " + last,
                         last_checkpoint_);
  }
  ++step_;
  report.step = step_;
  append_log(report.to_line());
  if (cfg_.checkpoint_every > 0 && step_ % cfg_.checkpoint_every == 0) save_checkpoint();
  if (cfg_.eval_every > 0 && val_ && step_ % cfg_.eval_every == 0) validate_now();
  return report;
}

std::vector<StepReport> Trainer::run(int64_t steps) {
  std::vector<StepReport> reports;
  reports.reserve(static_cast<size_t>(std::max<int64_t>(steps, 0)));
  for (int64_t i = 0; i < steps; ++i) reports.push_back(step());
  if (last_checkpoint_.empty() || last_checkpoint_.filename() != step_dir_name(step_)) {
    save_checkpoint();
  }
  return reports;
}

std::vector<StepReport> Trainer::run() { return run(std::max<int64_t>(total_steps() - step_, 0)); }

void Trainer::write_checkpoint(const fs::path& dir) const {
  const auto tmp = dir.parent_path() / ("." + dir.filename().string() + ".tmp");
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  torch::save(generator_, (tmp / "generator.pt").string());
  torch::save(*gen_opt_, (tmp / "generator_optimizer.pt").string());
  if (critic_) {
    torch::save(critic_, (tmp / "critic.pt").string());
    torch::save(*critic_opt_, (tmp / "critic_optimizer.pt").string());
  }
  torch::save(gp_rng_.get_state(), (tmp / "rng.pt").string());
  std::ostringstream state;
  state << "step " << step_ << "\nconfig_hash " << cfg_.hash() << '\n';
  if (best_lpips_) state << "best_lpips " << fmt_double(*best_lpips_) << '\n';
  write_file(tmp / "state.txt", state.str());
  cfg_.save(tmp / "config.toml");
  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

fs::path Trainer::save_checkpoint() {
  const auto dir = run_dir_ / "checkpoints" / step_dir_name(step_);
  write_checkpoint(dir);
  last_checkpoint_ = dir;
  return dir;
}

void Trainer::set_validation(DatasetManifest val) { val_ = std::move(val); }

std::optional<MetricReport> Trainer::validate_now() {
  if (!val_ || val_->size() == 0) return std::nullopt;
  if (!extractor_) extractor_ = make_extractor(cfg_);
  auto context = make_evaluation_context(extractor_, make_lpips_config(cfg_, *extractor_));
  auto report = evaluate(generator_, cfg_.color_space, *val_, context);
  report.write(run_dir_ / "reports" / step_dir_name(step_));
  if (!best_lpips_ || report.summary.lpips < *best_lpips_) {
    best_lpips_ = report.summary.lpips;
    write_checkpoint(run_dir_ / "checkpoints" / "best");
    log::info("step " + std::to_string(step_) + ": new best validation LPIPS " +
              fmt_double(report.summary.lpips));
  }
  return report;
}

// ---- inference -----------------------------------------------------------------

LoadedModel load_checkpoint(const fs::path& checkpoint) {
  if (!fs::exists(checkpoint / "generator.pt")) {
    throw IoError("not a checkpoint directory (no generator.pt): " + checkpoint.string());
  }
  LoadedModel model;
  model.config = TrainConfig::load(checkpoint / "config.toml");
  model.step = read_state(checkpoint).step;
  auto net = model.config.network_config();
  net.use_pretrained_encoder = false;
  model.generator = build_unet(net, model.config.init_seed);
  torch::load(model.generator, (checkpoint / "generator.pt").string());
  model.generator->eval();
  return model;
}

torch::Tensor colorize_image(UNet& generator, ColorSpace space, const torch::Tensor& rgb) {
  if (rgb.dim() != 4 || rgb.size(0) != 1 || rgb.size(1) != 3) {
    throw ContractError("colorize_image: expects a 1 x 3 x H x W RGB image");
  }
  if (space != generator->config().target_space) {
    throw ContractError("colorize_image: model predicts " +
                        std::string(to_string(generator->config().target_space)) +
                        ", requested " + std::string(to_string(space)));
  }
  torch::NoGradGuard no_grad;
  const bool was_training = generator->is_training();
  generator->eval();
  const int64_t h = rgb.size(2), w = rgb.size(3);
  auto gray = rgb_to_gray(ImageBatch(rgb.to(torch::kFloat32), ColorSpace::kRgb));
  auto padded = pad_to_multiple(gray.values(), 16);
  auto prediction = generator(padded.expand({-1, 3, -1, -1}).contiguous());
  prediction = prediction.narrow(2, 0, h).narrow(3, 0, w).contiguous();
  if (was_training) generator->train();

  if (space == ColorSpace::kLab) {
    ImageBatch lab(torch::cat({gray.values(), prediction}, 1), ColorSpace::kLab);
    return lab_to_rgb(fit_chroma_to_gamut(lab)).values().to(torch::kFloat32);
  }
  return assemble_output(gray, ImageBatch(prediction, ColorSpace::kRgb), space).values();
}

MetricReport evaluate(UNet& generator, ColorSpace space, const DatasetManifest& manifest,
                      const EvaluationContext& context, const fs::path& predictions_dir) {
  if (manifest.size() == 0) throw ContractError("evaluate: the manifest has no usable images");
  if (!predictions_dir.empty()) fs::create_directories(predictions_dir);
  SetEvaluator evaluator(context);
  for (const auto& entry : manifest.usable()) {
    auto truth = read_rgb(entry.path);
    auto prediction = colorize_image(generator, space, truth);
    const auto name = fs::path(entry.path).filename();
    if (!predictions_dir.empty()) {
      write_rgb((predictions_dir / name).replace_extension(".png"), prediction);
    }
    evaluator.add(name.string(), prediction, truth);
  }
  return evaluator.finish();
}

}  // namespace colorloss
