#pragma once

#include <ATen/CPUGeneratorImpl.h>
#include <torch/torch.h>

#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "colorloss/data.hpp"

namespace fixtures {

// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "colorloss") {
    auto pattern = (std::filesystem::temp_directory_path() / (tag + "-XXXXXX")).string();
    std::vector<char> buf(pattern.begin(), pattern.end());
    buf.push_back('\0');
    if (::mkdtemp(buf.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
    path_ = buf.data();
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Smooth colorful 1 x 3 x H x W image: bilinear blend of four random corner
// colors plus a seeded bump, values in [0.05, 0.95], already 8-bit exact.
inline torch::Tensor color_image(uint64_t seed, int64_t height, int64_t width) {
  torch::Generator gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  auto corners = torch::rand({4, 3}, gen, torch::kFloat32) * 0.8 + 0.1;
  auto ys = torch::linspace(0, 1, height).view({height, 1});
  auto xs = torch::linspace(0, 1, width).view({1, width});
  auto image = torch::zeros({3, height, width});
  for (int c = 0; c < 3; ++c) {
    image[c] = corners[0][c] * (1 - ys) * (1 - xs) + corners[1][c] * (1 - ys) * xs +
               corners[2][c] * ys * (1 - xs) + corners[3][c] * ys * xs;
  }
  auto center = torch::rand({2}, gen, torch::kFloat32);
  auto bump = torch::exp(-((ys - center[0]).pow(2) + (xs - center[1]).pow(2)) * 12.0);
  auto tint = torch::rand({3, 1, 1}, gen, torch::kFloat32) - 0.5;
  image = (image + 0.4 * tint * bump).clamp(0.05, 0.95);
  return colorloss::quantize_8bit(image.unsqueeze(0));
}

// Gray image stored as RGB with identical channels.
inline torch::Tensor gray_image(uint64_t seed, int64_t height, int64_t width) {
  auto rgb = color_image(seed, height, width);
  return rgb.mean(1, true).expand({1, 3, height, width}).contiguous();
}

// Writes `count` color PNGs named img_000.png ... into `dir`.
inline std::vector<std::filesystem::path> write_color_set(const std::filesystem::path& dir, int count,
                                                          int64_t height, int64_t width,
                                                          uint64_t seed = 100) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> paths;
  for (int i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "img_%03d.png", i);
    paths.push_back(dir / name);
    colorloss::write_rgb(paths.back(), color_image(seed + static_cast<uint64_t>(i), height, width));
  }
  return paths;
}

}  // namespace fixtures
