#include "colorloss/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "colorloss/error.hpp"
#include "colorloss/log.hpp"

namespace colorloss {
namespace fs = std::filesystem;
namespace F = torch::nn::functional;

namespace {

std::mt19937_64 keyed_engine(std::initializer_list<uint64_t> key) {
  std::vector<uint32_t> words;
  for (uint64_t k : key) {
    words.push_back(static_cast<uint32_t>(k & 0xffffffffu));
    words.push_back(static_cast<uint32_t>(k >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

}  // namespace

// ---- image files ----------------------------------------------------------

torch::Tensor read_rgb(const fs::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw IoError("cannot decode image " + path.string());
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  auto t = torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kUInt8).clone();
  return t.permute({2, 0, 1}).unsqueeze(0).to(torch::kFloat32).div(255.0).contiguous();
}

torch::Tensor quantize_8bit(const torch::Tensor& rgb) {
  return torch::round(torch::clamp(rgb, 0.0, 1.0) * 255.0) / 255.0;
}

void write_rgb(const fs::path& path, const torch::Tensor& rgb) {
  auto t = rgb.dim() == 4 ? rgb.squeeze(0) : rgb;
  if (t.dim() != 3 || t.size(0) != 3) throw ContractError("write_rgb: expects 3 x H x W");
  auto bytes = torch::round(torch::clamp(t.detach().to(torch::kFloat64), 0.0, 1.0) * 255.0)
                   .to(torch::kUInt8)
                   .permute({1, 2, 0})
                   .contiguous();
  cv::Mat rgb_mat(static_cast<int>(bytes.size(0)), static_cast<int>(bytes.size(1)), CV_8UC3,
                  bytes.data_ptr<uint8_t>());
  cv::Mat bgr;
  cv::cvtColor(rgb_mat, bgr, cv::COLOR_RGB2BGR);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), bgr)) throw IoError("cannot write image " + path.string());
}

bool is_image_file(const fs::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

bool is_grayscale(const torch::Tensor& rgb) {
  auto t = rgb.dim() == 4 ? rgb : rgb.unsqueeze(0);
  auto r = t.select(1, 0), g = t.select(1, 1), b = t.select(1, 2);
  auto spread = torch::maximum((r - g).abs(), (g - b).abs()).max().item<double>();
  return spread <= 2.0 / 255.0 + 1e-6;
}

// ---- manifests ------------------------------------------------------------

std::string_view to_string(Split split) {
  switch (split) {
    case Split::kTrain:
      return "train";
    case Split::kVal:
      return "val";
    case Split::kTest:
      return "test";
  }
  return "?";
}

Split split_from_string(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw ContractError("unknown split '" + std::string(name) + "'");
}

DatasetManifest::DatasetManifest(Split split, uint64_t seed, std::vector<ManifestEntry> entries)
    : split_(split), seed_(seed), entries_(std::move(entries)) {
  std::set<std::string> seen;
  for (const auto& e : entries_) {
    if (!seen.insert(e.path).second) throw ContractError("manifest: duplicate path " + e.path);
    if (!e.grayscale) usable_.push_back(e);
  }
}

std::string DatasetManifest::to_text() const {
  std::ostringstream out;
  out << "# split " << to_string(split_) << " seed " << seed_ << '\n';
  for (const auto& e : entries_) {
    out << e.path << '\t' << e.width << '\t' << e.height << '\t' << (e.grayscale ? 1 : 0) << '\n';
  }
  return out.str();
}

DatasetManifest DatasetManifest::from_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  Split split = Split::kTrain;
  uint64_t seed = 0;
  std::vector<ManifestEntry> entries;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream header(line.substr(1));
      std::string key, value;
      while (header >> key >> value) {
        if (key == "split") split = split_from_string(value);
        if (key == "seed") seed = std::stoull(value);
      }
      continue;
    }
    std::istringstream fields(line);
    ManifestEntry e;
    int gray = 0;
    if (!std::getline(fields, e.path, '\t') || !(fields >> e.width >> e.height >> gray)) {
      throw IoError("malformed manifest line: '" + line + "'");
    }
    e.grayscale = gray != 0;
    entries.push_back(std::move(e));
  }
  return DatasetManifest(split, seed, std::move(entries));
}

void DatasetManifest::save(const fs::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << to_text();
}

DatasetManifest DatasetManifest::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read manifest " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return from_text(buffer.str());
}

ScanResult scan(const fs::path& root, Split split, uint64_t seed) {
  if (!fs::is_directory(root)) throw IoError("not a directory: " + root.string());
  std::vector<fs::path> files;
  for (const auto& item : fs::recursive_directory_iterator(root)) {
    if (item.is_regular_file() && is_image_file(item.path())) files.push_back(item.path());
  }
  std::sort(files.begin(), files.end());
  ScanResult result;
  std::vector<ManifestEntry> entries;
  for (const auto& file : files) {
    try {
      auto rgb = read_rgb(file);
      entries.push_back({file.string(), rgb.size(3), rgb.size(2), is_grayscale(rgb)});
    } catch (const IoError& e) {
      log::warn(std::string("skipping unreadable file: ") + e.what());
      ++result.unreadable;
    }
  }
  result.manifest = DatasetManifest(split, seed, std::move(entries));
  if (result.unreadable > 0) {
    log::warn("scan: skipped " + std::to_string(result.unreadable) + " unreadable files");
  }
  return result;
}

// ---- preprocessing --------------------------------------------------------

std::pair<int64_t, int64_t> resized_dims(int64_t height, int64_t width, int64_t size) {
  if (height <= 0 || width <= 0 || size <= 0) throw ContractError("resized_dims: empty image");
  const int64_t smallest = std::min(height, width);
  auto scale = [&](int64_t side) {
    return side == smallest
               ? size
               : static_cast<int64_t>(std::llround(static_cast<double>(side) * size / smallest));
  };
  return {scale(height), scale(width)};
}

torch::Tensor resize_smallest_side(const torch::Tensor& rgb, int64_t size) {
  auto [h, w] = resized_dims(rgb.size(2), rgb.size(3), size);
  if (h == rgb.size(2) && w == rgb.size(3)) return rgb;
  return F::interpolate(rgb, F::InterpolateFuncOptions()
                                 .size(std::vector<int64_t>{h, w})
                                 .mode(torch::kBilinear)
                                 .align_corners(false)
                                 .antialias(true));
}

std::pair<int64_t, int64_t> crop_offset(uint64_t seed, int64_t index, int64_t epoch,
                                        int64_t max_y, int64_t max_x) {
  auto engine = keyed_engine({seed, static_cast<uint64_t>(index), static_cast<uint64_t>(epoch)});
  std::uniform_int_distribution<int64_t> dy(0, max_y);
  std::uniform_int_distribution<int64_t> dx(0, max_x);
  const int64_t y = dy(engine);
  const int64_t x = dx(engine);
  return {y, x};
}

Batch make_batch(const torch::Tensor& rgb, ColorSpace target_space) {
  torch::NoGradGuard no_grad;
  ImageBatch rgb_batch(rgb.to(torch::kFloat32), ColorSpace::kRgb);
  auto lab = rgb_to_lab(rgb_batch);
  Batch batch;
  batch.rgb = rgb_batch.values();
  batch.gray = lab.values().narrow(1, 0, 1).contiguous();
  batch.gray3 = batch.gray.expand({-1, 3, -1, -1}).contiguous();
  batch.target_space = target_space;
  if (target_space == ColorSpace::kLab) {
    batch.target = lab.values().narrow(1, 1, 2).contiguous();
  } else if (target_space == ColorSpace::kRgb) {
    batch.target = batch.rgb;
  } else {
    throw ContractError("make_batch: target space must be lab or rgb");
  }
  for (int64_t i = 0; i < rgb.size(0); ++i) batch.indices.push_back(i);
  return batch;
}

Batch preprocess_train(const torch::Tensor& rgb, int64_t index, uint64_t seed, int64_t epoch,
                       const PreprocessOptions& options) {
  const int64_t s = options.crop_size;
  auto resized = resize_smallest_side(rgb, s);
  const int64_t max_y = resized.size(2) - s;
  const int64_t max_x = resized.size(3) - s;
  auto [y, x] = crop_offset(seed, index, epoch, max_y, max_x);
  auto crop = resized.narrow(2, y, s).narrow(3, x, s).clamp(0.0, 1.0).contiguous();
  auto batch = make_batch(crop, options.target_space);
  batch.indices = {index};
  return batch;
}

Batch preprocess_train(const ManifestEntry& entry, int64_t index, uint64_t seed, int64_t epoch,
                       const PreprocessOptions& options) {
  return preprocess_train(read_rgb(entry.path), index, seed, epoch, options);
}

std::vector<std::vector<int64_t>> batch_order(size_t dataset_size, int64_t batch_size,
                                              uint64_t seed, int64_t epoch) {
  if (batch_size < 1) throw ContractError("batch_order: batch size must be >= 1");
  if (dataset_size == 0) throw ContractError("batch_order: empty manifest");
  std::vector<int64_t> perm(dataset_size);
  for (size_t i = 0; i < dataset_size; ++i) perm[i] = static_cast<int64_t>(i);
  auto engine = keyed_engine({seed, 0x5348554646ull, static_cast<uint64_t>(epoch)});
  std::shuffle(perm.begin(), perm.end(), engine);
  std::vector<std::vector<int64_t>> batches;
  for (size_t start = 0; start < dataset_size; start += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(dataset_size, start + static_cast<size_t>(batch_size));
    batches.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start),
                         perm.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

Batch load_batch(const DatasetManifest& manifest, const std::vector<int64_t>& indices,
                 uint64_t seed, int64_t epoch, const PreprocessOptions& options) {
  std::vector<Batch> parts;
  parts.reserve(indices.size());
  for (auto index : indices) {
    parts.push_back(preprocess_train(manifest.usable().at(static_cast<size_t>(index)), index, seed,
                                     epoch, options));
  }
  Batch batch;
  std::vector<torch::Tensor> gray3, gray, target, rgb;
  for (auto& p : parts) {
    gray3.push_back(p.gray3);
    gray.push_back(p.gray);
    target.push_back(p.target);
    rgb.push_back(p.rgb);
  }
  batch.gray3 = torch::cat(gray3);
  batch.gray = torch::cat(gray);
  batch.target = torch::cat(target);
  batch.rgb = torch::cat(rgb);
  batch.target_space = options.target_space;
  batch.indices = indices;
  return batch;
}

BatchIterator::BatchIterator(const DatasetManifest& manifest, int64_t batch_size, uint64_t seed,
                             int64_t epoch, PreprocessOptions options)
    : manifest_(&manifest),
      seed_(seed),
      epoch_(epoch),
      options_(options),
      order_(batch_order(manifest.size(), batch_size, seed, epoch)) {}

Batch BatchIterator::next() {
  if (done()) throw ContractError("BatchIterator: epoch exhausted");
  return load_batch(*manifest_, order_[position_++], seed_, epoch_, options_);
}

torch::Tensor pad_to_multiple(const torch::Tensor& x, int64_t multiple) {
  const int64_t h = x.size(2), w = x.size(3);
  const int64_t ph = (multiple - h % multiple) % multiple;
  const int64_t pw = (multiple - w % multiple) % multiple;
  if (ph == 0 && pw == 0) return x;
  std::vector<int64_t> pad = {0, pw, 0, ph};
  if (ph < h && pw < w) return F::pad(x, F::PadFuncOptions(pad).mode(torch::kReflect));
  return F::pad(x, F::PadFuncOptions(pad).mode(torch::kReplicate));
}

}  // namespace colorloss
