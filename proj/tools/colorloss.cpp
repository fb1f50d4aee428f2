// Command-line entry points: train, evaluate, colorize, report.
#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "colorloss/data.hpp"
#include "colorloss/log.hpp"
#include "colorloss/metrics.hpp"
#include "colorloss/report.hpp"
#include "colorloss/trainer.hpp"

namespace fs = std::filesystem;
using namespace colorloss;

namespace {

std::string run_label(const TrainConfig& cfg) {
  return std::string(to_string(cfg.color_space)) + "-" + std::string(to_string(cfg.loss));
}

std::string config_summary(const TrainConfig& cfg) {
  std::ostringstream out;
  out << "loss=" << to_string(cfg.loss) << " space=" << to_string(cfg.color_space)
      << " lr=" << cfg.learning_rate << " batch=" << cfg.batch_size
      << " crop=" << cfg.crop_size << " filters=" << cfg.base_filters
      << " extractor=" << cfg.extractor;
  return out.str();
}

// <run>/checkpoints/<step> -> <run>
std::string run_id_of(const fs::path& checkpoint) {
  auto dir = checkpoint.lexically_normal();
  if (!dir.has_filename()) dir = dir.parent_path();
  const auto run = dir.parent_path().parent_path().filename().string();
  return run.empty() ? dir.filename().string() : run;
}

std::vector<fs::path> list_images(const fs::path& root) {
  std::vector<fs::path> files;
  if (fs::is_regular_file(root)) return {root};
  if (!fs::is_directory(root)) throw IoError("no such file or directory: " + root.string());
  for (const auto& item : fs::recursive_directory_iterator(root)) {
    if (item.is_regular_file() && is_image_file(item.path())) files.push_back(item.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

struct TrainArgs {
  std::string config;
  std::string loss;
  std::string space;
  std::optional<uint64_t> seed;
  std::string out;
  std::string checkpoint;
  std::optional<int64_t> max_steps;
  std::vector<std::string> overrides;
};

int cmd_train(const TrainArgs& args) {
  auto cfg = TrainConfig::load(args.config);
  for (const auto& kv : args.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ContractError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!args.loss.empty()) cfg.loss = loss_from_string(args.loss);
  if (!args.space.empty()) cfg.color_space = color_space_from_string(args.space);
  if (args.seed) {
    cfg.data_seed = *args.seed;
    cfg.init_seed = *args.seed;
  }
  if (args.max_steps) cfg.max_steps = *args.max_steps;
  if (!args.out.empty()) cfg.out_dir = args.out;
  cfg.validate();
  if (cfg.train_dir.empty()) throw ContractError("config: train_dir is not set");

  auto scanned = scan(cfg.train_dir, Split::kTrain, cfg.data_seed);
  const fs::path run_dir = cfg.out_dir;
  fs::create_directories(run_dir);
  scanned.manifest.save(run_dir / "train_manifest.txt");
  log::info("train: " + std::to_string(scanned.manifest.size()) + " usable images, " +
            std::to_string(scanned.manifest.filtered_count()) + " grayscale filtered");

  std::unique_ptr<Trainer> trainer;
  if (!args.checkpoint.empty()) {
    trainer = Trainer::resume(args.checkpoint, cfg, scanned.manifest, run_dir);
  } else {
    trainer = std::make_unique<Trainer>(cfg, scanned.manifest, run_dir);
  }
  if (!cfg.val_dir.empty()) {
    trainer->set_validation(scan(cfg.val_dir, Split::kVal, cfg.data_seed).manifest);
  }
  const auto total = trainer->total_steps();
  while (trainer->step_count() < total) {
    const auto report = trainer->step();
    if (report.step % 50 == 0 || report.step == total) log::info(report.to_line());
  }
  const auto last = trainer->save_checkpoint();
  std::cout << "run directory: " << run_dir.string() << "\nfinal checkpoint: " << last.string()
            << '\n';
  return 0;
}

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string pred;
  std::string gt;
  std::string out;
  std::string extractor = "toy";
  std::string weights;
};

EvaluationContext context_for(const TrainConfig& cfg) {
  auto extractor = make_extractor(cfg);
  return make_evaluation_context(extractor, make_lpips_config(cfg, *extractor));
}

int cmd_evaluate(const EvalArgs& args) {
  const fs::path out = args.out;
  if (!args.checkpoint.empty()) {
    if (args.data.empty()) throw ContractError("evaluate: --checkpoint needs --data");
    auto model = load_checkpoint(args.checkpoint);
    auto scanned = scan(args.data, Split::kTest, model.config.data_seed);
    auto report = evaluate(model.generator, model.config.color_space, scanned.manifest,
                           context_for(model.config), out / "predictions");
    report.write(out);
    RunDescriptor run;
    run.id = run_id_of(args.checkpoint);
    run.label = run_label(model.config);
    run.config_summary = config_summary(model.config);
    run.checkpoint = args.checkpoint;
    write_run_info(out, run);
    std::cout << report.summary_csv();
    return 0;
  }
  if (args.pred.empty() || args.gt.empty()) {
    throw ContractError("evaluate: give --checkpoint and --data, or --pred and --gt");
  }
  // Pair files by stem; any unmatched name is an error.
  std::map<std::string, fs::path> preds, gts;
  for (const auto& p : list_images(args.pred)) preds[p.stem().string()] = p;
  for (const auto& p : list_images(args.gt)) gts[p.stem().string()] = p;
  std::vector<std::string> extra_pred, extra_gt;
  for (const auto& [k, _] : preds) if (!gts.count(k)) extra_pred.push_back(k);
  for (const auto& [k, _] : gts) if (!preds.count(k)) extra_gt.push_back(k);
  if (!extra_pred.empty() || !extra_gt.empty()) {
    std::ostringstream msg;
    msg << "evaluate: " << preds.size() << " predictions vs " << gts.size() << " ground truths;";
    if (!extra_pred.empty()) {
      msg << " only in predictions:";
      for (const auto& k : extra_pred) msg << ' ' << k;
    }
    if (!extra_gt.empty()) {
      msg << " only in ground truth:";
      for (const auto& k : extra_gt) msg << ' ' << k;
    }
    throw ContractError(msg.str());
  }
  TrainConfig cfg;
  cfg.extractor = args.extractor;
  cfg.weights = args.weights;
  SetEvaluator evaluator(context_for(cfg));
  for (const auto& [stem, pred_path] : preds) {
    evaluator.add(pred_path.filename().string(), read_rgb(pred_path), read_rgb(gts.at(stem)));
  }
  auto report = evaluator.finish();
  report.write(out);
  RunDescriptor run;
  auto pred_dir = fs::path(args.pred).lexically_normal();
  if (!pred_dir.has_filename()) pred_dir = pred_dir.parent_path();
  run.id = pred_dir.filename().string();
  run.label = run.id;
  run.predictions_dir = fs::absolute(pred_dir);
  write_run_info(out, run);
  std::cout << report.summary_csv();
  return 0;
}

int cmd_colorize(const std::string& checkpoint, const std::string& input, const std::string& out,
                 const std::string& space) {
  auto model = load_checkpoint(checkpoint);
  if (!space.empty() && color_space_from_string(space) != model.config.color_space) {
    throw ContractError("colorize: checkpoint predicts " +
                        std::string(to_string(model.config.color_space)) + ", --space " + space +
                        " requested");
  }
  fs::create_directories(out);
  const auto files = list_images(input);
  if (files.empty()) throw IoError("colorize: no images under " + input);
  for (const auto& file : files) {
    auto rgb = read_rgb(file);
    auto result = colorize_image(model.generator, model.config.color_space, rgb);
    const auto target = (fs::path(out) / file.filename()).replace_extension(".png");
    write_rgb(target, result);
    std::cout << file.string() << " -> " << target.string() << '\n';
  }
  return 0;
}

int cmd_report(const std::vector<std::string>& runs, const std::string& out, const std::string& gt) {
  std::vector<RunDescriptor> descriptors;
  for (const auto& dir : runs) descriptors.push_back(load_run(dir));
  const auto grids = write_report(descriptors, out, gt);
  std::cout << markdown_table(descriptors) << "grids written: " << grids << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Grayscale image colorization: training, evaluation, colorization, reports"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train a colorization network");
  train_cmd->add_option("--config", train.config, "Config file (key = value)")
      ->required()
      ->check(CLI::ExistingFile);
  train_cmd->add_option("--loss", train.loss, "l1, l2, lpips, wgan_l2 or wgan_lpips")
      ->check(CLI::IsMember({"l1", "l2", "lpips", "wgan_l2", "wgan_lpips"}));
  train_cmd->add_option("--space", train.space, "lab or rgb")->check(CLI::IsMember({"lab", "rgb"}));
  train_cmd->add_option("--seed", train.seed, "Seed for data order and initialization");
  train_cmd->add_option("--out", train.out, "Run directory");
  train_cmd->add_option("--checkpoint", train.checkpoint, "Resume from this checkpoint");
  train_cmd->add_option("--max-steps", train.max_steps, "Stop after this many steps");
  train_cmd->add_option("--set", train.overrides, "Extra key=value config overrides");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("evaluate", "Score predictions against ground truth in RGB");
  eval_cmd->add_option("--checkpoint", eval.checkpoint, "Checkpoint directory");
  eval_cmd->add_option("--data", eval.data, "Test image directory (with --checkpoint)");
  eval_cmd->add_option("--pred", eval.pred, "Prediction directory");
  eval_cmd->add_option("--gt", eval.gt, "Ground-truth directory (with --pred)");
  eval_cmd->add_option("--out", eval.out, "Output directory")->required();
  eval_cmd->add_option("--extractor", eval.extractor, "toy or vgg (with --pred)")
      ->check(CLI::IsMember({"toy", "vgg"}));
  eval_cmd->add_option("--weights", eval.weights, "Weight archive for the vgg extractor");

  std::string color_checkpoint, color_input, color_out, color_space;
  auto* color_cmd = app.add_subcommand("colorize", "Colorize grayscale or color photographs");
  color_cmd->add_option("--checkpoint", color_checkpoint, "Checkpoint directory")->required();
  color_cmd->add_option("--input", color_input, "Image file or directory")->required();
  color_cmd->add_option("--out", color_out, "Output directory")->required();
  color_cmd->add_option("--space", color_space, "Expected model space (lab or rgb)")
      ->check(CLI::IsMember({"lab", "rgb"}));

  std::vector<std::string> report_runs;
  std::string report_out, report_gt;
  auto* report_cmd = app.add_subcommand("report", "Comparison table and figure grids");
  report_cmd->add_option("--run", report_runs, "Evaluation directory (repeatable)")->required();
  report_cmd->add_option("--out", report_out, "Output directory")->required();
  report_cmd->add_option("--gt", report_gt, "Ground-truth directory for the grid frames");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) return cmd_train(train);
    if (*eval_cmd) return cmd_evaluate(eval);
    if (*color_cmd) return cmd_colorize(color_checkpoint, color_input, color_out, color_space);
    if (*report_cmd) return cmd_report(report_runs, report_out, report_gt);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
