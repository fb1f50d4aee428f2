#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "colorloss/metrics.hpp"

namespace colorloss {

// One evaluated run as seen by the report. `label` is "<space>-<loss>".
struct RunDescriptor {
  std::string id;
  std::string label;
  std::string config_summary;
  std::filesystem::path checkpoint;
  std::filesystem::path predictions_dir;  // optional, used for figure grids
  MetricReport report;
};

// Reads an evaluation directory (summary.csv plus the run.txt written by the
// evaluate command). Missing run.txt falls back to the directory name.
RunDescriptor load_run(const std::filesystem::path& evaluation_dir);
// run.txt: "key = value" lines for id, label, config, checkpoint and, when
// set, predictions. Without a predictions entry, <dir>/predictions is used.
void write_run_info(const std::filesystem::path& evaluation_dir, const RunDescriptor& run);

enum class Mark { kNone, kBest, kSecond };
enum class Direction { kLower, kHigher };

struct ReportColumn {
  std::string header;  // e.g. "MAE↓"
  Direction direction;
  int precision;       // printed decimals; ranking compares printed values
};

// MAE↓ MSE↓ PSNR↑ SSIM↑ LPIPS↓ FID↓
const std::vector<ReportColumn>& report_columns();

// Dense ranking of one column: values equal at `precision` decimals share a
// rank; rank 1 is best, rank 2 second. Missing values get no mark.
std::vector<Mark> rank_marks(const std::vector<std::optional<double>>& values, Direction direction,
                             int precision);

// Markdown table with best values in **bold** and second best <u>underlined</u>.
// Runs with different metric_version tags are rejected.
std::string markdown_table(const std::vector<RunDescriptor>& runs);

// Writes report.md, index.md and one composite grids/<image>.png per test
// image: one labeled column per run, framed by the grayscale input and the
// ground truth when `ground_truth_dir` is given. Images missing from any run
// are skipped. Returns the number of grids written.
size_t write_report(const std::vector<RunDescriptor>& runs, const std::filesystem::path& out_dir,
                    const std::filesystem::path& ground_truth_dir = {});

}  // namespace colorloss
