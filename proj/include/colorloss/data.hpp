#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "colorloss/colorspace.hpp"

namespace colorloss {

// ---- image files ----------------------------------------------------------

// Decodes PNG/JPEG into a 1 x 3 x H x W float32 RGB tensor in [0, 1].
// Single-channel files are replicated to three channels.
torch::Tensor read_rgb(const std::filesystem::path& path);
// Writes a 1 x 3 x H x W (or 3 x H x W) RGB tensor in [0, 1] as 8-bit.
void write_rgb(const std::filesystem::path& path, const torch::Tensor& rgb);
// Round-trips values through 8-bit storage (round half up, clamp).
torch::Tensor quantize_8bit(const torch::Tensor& rgb);

bool is_image_file(const std::filesystem::path& path);

// Monochrome test on an 8-bit-valued RGB tensor: max over pixels of
// max(|R-G|, |G-B|) <= 2/255.
bool is_grayscale(const torch::Tensor& rgb);

// ---- manifests ------------------------------------------------------------

enum class Split { kTrain, kVal, kTest };
std::string_view to_string(Split split);
Split split_from_string(std::string_view name);

struct ManifestEntry {
  std::string path;
  int64_t width = 0;
  int64_t height = 0;
  bool grayscale = false;

  bool operator==(const ManifestEntry&) const = default;
};

class DatasetManifest {
 public:
  DatasetManifest() = default;
  DatasetManifest(Split split, uint64_t seed, std::vector<ManifestEntry> entries);

  Split split() const { return split_; }
  uint64_t seed() const { return seed_; }
  // Every scanned file, grayscale ones included.
  const std::vector<ManifestEntry>& entries() const { return entries_; }
  // Entries used for iteration (grayscale ones excluded), in path order.
  const std::vector<ManifestEntry>& usable() const { return usable_; }
  size_t size() const { return usable_.size(); }
  size_t filtered_count() const { return entries_.size() - usable_.size(); }

  // Text form: a "# split <name> seed <n>" header then one
  // "path<TAB>width<TAB>height<TAB>gray" line per entry.
  std::string to_text() const;
  static DatasetManifest from_text(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static DatasetManifest load(const std::filesystem::path& path);

 private:
  Split split_ = Split::kTrain;
  uint64_t seed_ = 0;
  std::vector<ManifestEntry> entries_;
  std::vector<ManifestEntry> usable_;
};

struct ScanResult {
  DatasetManifest manifest;
  size_t unreadable = 0;
};

// Lists decodable images under `root` (recursively, lexicographic order) and
// flags monochrome ones. Unreadable files are logged and counted.
ScanResult scan(const std::filesystem::path& root, Split split, uint64_t seed = 0);

// ---- preprocessing --------------------------------------------------------

struct PreprocessOptions {
  int64_t crop_size = 256;
  ColorSpace target_space = ColorSpace::kLab;
};

// Network-ready tensors for one or more images.
struct Batch {
  torch::Tensor gray3;   // B x 3 x S x S, replicated grayscale (L / 100)
  torch::Tensor gray;    // B x 1 x S x S
  torch::Tensor target;  // B x 2 (ab) or B x 3 (rgb)
  torch::Tensor rgb;     // B x 3 ground truth RGB
  ColorSpace target_space = ColorSpace::kLab;
  std::vector<int64_t> indices;  // positions in DatasetManifest::usable()
};

// Bilinear (antialiased) resize so that the smaller side equals `size`,
// keeping the aspect ratio; the other side is rounded to nearest.
torch::Tensor resize_smallest_side(const torch::Tensor& rgb, int64_t size);
std::pair<int64_t, int64_t> resized_dims(int64_t height, int64_t width, int64_t size);

// Crop offset (y, x) drawn from a generator keyed by (seed, index, epoch).
std::pair<int64_t, int64_t> crop_offset(uint64_t seed, int64_t index, int64_t epoch,
                                        int64_t max_y, int64_t max_x);

// Splits an RGB batch into network input and training target.
Batch make_batch(const torch::Tensor& rgb, ColorSpace target_space);

// Resize + keyed random square crop + conversion for one manifest entry.
Batch preprocess_train(const ManifestEntry& entry, int64_t index, uint64_t seed, int64_t epoch,
                       const PreprocessOptions& options);
Batch preprocess_train(const torch::Tensor& rgb, int64_t index, uint64_t seed, int64_t epoch,
                       const PreprocessOptions& options);

// Entry positions per batch for one epoch: a shuffle keyed by (seed, epoch),
// cut into batches; the last partial batch is kept.
std::vector<std::vector<int64_t>> batch_order(size_t dataset_size, int64_t batch_size,
                                              uint64_t seed, int64_t epoch);

// Loads and concatenates the samples of one batch.
Batch load_batch(const DatasetManifest& manifest, const std::vector<int64_t>& indices,
                 uint64_t seed, int64_t epoch, const PreprocessOptions& options);

// Streams the batches of one epoch in deterministic order.
class BatchIterator {
 public:
  BatchIterator(const DatasetManifest& manifest, int64_t batch_size, uint64_t seed, int64_t epoch,
                PreprocessOptions options);

  bool done() const { return position_ >= order_.size(); }
  Batch next();
  size_t batches() const { return order_.size(); }
  // Jumps to batch `position` (used when resuming mid-epoch).
  void seek(size_t position) { position_ = position; }

 private:
  const DatasetManifest* manifest_;
  uint64_t seed_;
  int64_t epoch_;
  PreprocessOptions options_;
  std::vector<std::vector<int64_t>> order_;
  size_t position_ = 0;
};

// Reflect-pads H and W up to the next multiple of `multiple`; returns the
// padded tensor. Falls back to replicate padding for tiny images.
torch::Tensor pad_to_multiple(const torch::Tensor& x, int64_t multiple = 16);

}  // namespace colorloss
