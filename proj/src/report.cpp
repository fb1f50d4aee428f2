#include "colorloss/report.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "colorloss/error.hpp"
#include "colorloss/log.hpp"

namespace colorloss {
namespace fs = std::filesystem;

namespace {

constexpr int kLabelBand = 24;

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::string format_fixed(double v, int precision) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(precision);
  out << v;
  return out.str();
}

std::vector<std::optional<double>> column_values(const std::vector<RunDescriptor>& runs,
                                                 size_t column) {
  std::vector<std::optional<double>> values;
  for (const auto& run : runs) {
    const auto& s = run.report.summary;
    switch (column) {
      case 0: values.emplace_back(s.mae); break;
      case 1: values.emplace_back(s.mse); break;
      case 2: values.emplace_back(s.psnr); break;
      case 3: values.emplace_back(s.ssim); break;
      case 4: values.emplace_back(s.lpips); break;
      default: values.push_back(s.fid); break;
    }
  }
  return values;
}

cv::Mat labeled(const cv::Mat& image, const std::string& label, cv::Size size) {
  cv::Mat body;
  cv::resize(image, body, size, 0, 0, cv::INTER_AREA);
  cv::Mat tile(size.height + kLabelBand, size.width, CV_8UC3, cv::Scalar(255, 255, 255));
  body.copyTo(tile(cv::Rect(0, kLabelBand, size.width, size.height)));
  const double scale = 0.45;
  int baseline = 0;
  const auto text = cv::getTextSize(label, cv::FONT_HERSHEY_SIMPLEX, scale, 1, &baseline);
  const int x = std::max(2, (size.width - text.width) / 2);
  cv::putText(tile, label, cv::Point(x, kLabelBand - 7), cv::FONT_HERSHEY_SIMPLEX, scale,
              cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
  return tile;
}

}  // namespace

RunDescriptor load_run(const fs::path& evaluation_dir) {
  RunDescriptor run;
  run.report = MetricReport::read_summary(evaluation_dir);
  run.id = evaluation_dir.filename().string();
  if (run.id.empty()) run.id = evaluation_dir.parent_path().filename().string();
  run.label = run.id;
  std::ifstream in(evaluation_dir / "run.txt");
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (key == "id") run.id = value;
    else if (key == "label") run.label = value;
    else if (key == "config") run.config_summary = value;
    else if (key == "checkpoint") run.checkpoint = value;
    else if (key == "predictions") run.predictions_dir = value;
  }
  if (run.predictions_dir.empty() && fs::is_directory(evaluation_dir / "predictions")) {
    run.predictions_dir = evaluation_dir / "predictions";
  }
  return run;
}

void write_run_info(const fs::path& evaluation_dir, const RunDescriptor& run) {
  fs::create_directories(evaluation_dir);
  std::ofstream out(evaluation_dir / "run.txt", std::ios::trunc);
  if (!out) throw IoError("cannot write " + (evaluation_dir / "run.txt").string());
  out << "id = " << run.id << "\nlabel = " << run.label << "\nconfig = " << run.config_summary
      << "\ncheckpoint = " << run.checkpoint.string() << '\n';
  if (!run.predictions_dir.empty()) out << "predictions = " << run.predictions_dir.string() << '\n';
}

const std::vector<ReportColumn>& report_columns() {
  static const std::vector<ReportColumn> columns = {
      {"MAE↓", Direction::kLower, 4},  {"MSE↓", Direction::kLower, 4},
      {"PSNR↑", Direction::kHigher, 4}, {"SSIM↑", Direction::kHigher, 4},
      {"LPIPS↓", Direction::kLower, 4}, {"FID↓", Direction::kLower, 4},
  };
  return columns;
}

std::vector<Mark> rank_marks(const std::vector<std::optional<double>>& values, Direction direction,
                             int precision) {
  const double scale = std::pow(10.0, precision);
  std::vector<std::optional<long long>> keys;
  std::set<long long> distinct;
  for (const auto& v : values) {
    if (v && std::isfinite(*v)) {
      const long long k = std::llround(*v * scale);
      keys.emplace_back(k);
      distinct.insert(k);
    } else {
      keys.emplace_back(std::nullopt);
    }
  }
  std::vector<long long> order(distinct.begin(), distinct.end());
  if (direction == Direction::kHigher) std::reverse(order.begin(), order.end());
  std::vector<Mark> marks(values.size(), Mark::kNone);
  for (size_t i = 0; i < keys.size(); ++i) {
    if (!keys[i]) continue;
    if (!order.empty() && *keys[i] == order[0]) marks[i] = Mark::kBest;
    else if (order.size() > 1 && *keys[i] == order[1]) marks[i] = Mark::kSecond;
  }
  return marks;
}

std::string markdown_table(const std::vector<RunDescriptor>& runs) {
  if (runs.empty()) throw ContractError("report: needs at least one run");
  for (const auto& run : runs) {
    if (run.report.metric_version != runs.front().report.metric_version) {
      throw ContractError("report: conflicting metric versions '" +
                          runs.front().report.metric_version + "' (" + runs.front().id +
                          ") and '" + run.report.metric_version + "' (" + run.id + ")");
    }
  }
  const auto& columns = report_columns();
  std::vector<std::vector<Mark>> marks;
  for (size_t c = 0; c < columns.size(); ++c) {
    marks.push_back(rank_marks(column_values(runs, c), columns[c].direction, columns[c].precision));
  }

  std::ostringstream out;
  out << "| Run |";
  for (const auto& col : columns) out << ' ' << col.header << " |";
  out << "\n|---|";
  for (size_t c = 0; c < columns.size(); ++c) out << "---|";
  out << '\n';
  for (size_t r = 0; r < runs.size(); ++r) {
    out << "| " << runs[r].label << " |";
    for (size_t c = 0; c < columns.size(); ++c) {
      const auto value = column_values(runs, c)[r];
      std::string cell = value && std::isfinite(*value)
                             ? format_fixed(*value, columns[c].precision)
                             : std::string("n/a");
      if (marks[c][r] == Mark::kBest) cell = "**" + cell + "**";
      else if (marks[c][r] == Mark::kSecond) cell = "<u>" + cell + "</u>";
      out << ' ' << cell << " |";
    }
    out << '\n';
  }
  return out.str();
}

size_t write_report(const std::vector<RunDescriptor>& runs, const fs::path& out_dir,
                    const fs::path& ground_truth_dir) {
  const auto table = markdown_table(runs);
  fs::create_directories(out_dir);
  {
    std::ofstream md(out_dir / "report.md", std::ios::trunc);
    if (!md) throw IoError("cannot write " + (out_dir / "report.md").string());
    md << "# Comparison\n\nmetric_version: `" << runs.front().report.metric_version << "`\n\n"
       << table << "\nBest per column in bold, second best underlined.\n\n";
    for (const auto& run : runs) {
      md << "- " << run.label << ": " << (run.config_summary.empty() ? run.id : run.config_summary)
         << '\n';
    }
  }

  // Images present in every run's prediction directory.
  std::map<std::string, size_t> seen;
  for (const auto& run : runs) {
    if (run.predictions_dir.empty() || !fs::is_directory(run.predictions_dir)) return 0;
    for (const auto& item : fs::directory_iterator(run.predictions_dir)) {
      if (item.is_regular_file()) ++seen[item.path().filename().string()];
    }
  }
  std::vector<std::string> names;
  for (const auto& [name, count] : seen) {
    if (count == runs.size()) names.push_back(name);
    else log::warn("report: " + name + " is missing from some runs, skipped");
  }

  fs::create_directories(out_dir / "grids");
  std::ofstream index(out_dir / "index.md", std::ios::trunc);
  index << "# Figure grids\n\n";
  size_t written = 0;
  for (const auto& name : names) {
    std::vector<cv::Mat> tiles;
    cv::Mat first = cv::imread((runs.front().predictions_dir / name).string(), cv::IMREAD_COLOR);
    if (first.empty()) continue;
    const int width = std::max(first.cols, 96);
    const cv::Size size(width, std::max(1, first.rows * width / first.cols));
    cv::Mat truth;
    if (!ground_truth_dir.empty()) {
      for (const auto& ext : {"", ".png", ".jpg", ".jpeg"}) {
        auto candidate = ground_truth_dir / name;
        if (*ext) candidate.replace_extension(ext);
        if (fs::exists(candidate)) {
          truth = cv::imread(candidate.string(), cv::IMREAD_COLOR);
          break;
        }
      }
    }
    if (!truth.empty()) {
      cv::Mat gray, gray3;
      cv::cvtColor(truth, gray, cv::COLOR_BGR2GRAY);
      cv::cvtColor(gray, gray3, cv::COLOR_GRAY2BGR);
      tiles.push_back(labeled(gray3, "input", size));
    }
    for (const auto& run : runs) {
      cv::Mat image = cv::imread((run.predictions_dir / name).string(), cv::IMREAD_COLOR);
      if (image.empty()) throw IoError("cannot read " + (run.predictions_dir / name).string());
      tiles.push_back(labeled(image, run.label, size));
    }
    if (!truth.empty()) tiles.push_back(labeled(truth, "ground truth", size));
    cv::Mat grid;
    cv::hconcat(tiles, grid);
    const auto grid_path = (out_dir / "grids" / name).replace_extension(".png");
    if (!cv::imwrite(grid_path.string(), grid)) throw IoError("cannot write " + grid_path.string());
    index << "## " << name << "\n\n![" << name << "](grids/" << grid_path.filename().string()
          << ")\n\n";
    ++written;
  }
  return written;
}

}  // namespace colorloss
