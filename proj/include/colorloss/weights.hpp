#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace colorloss {

// Named float32 tensors. On disk (little-endian):
//   "CLWA" | u32 version=1 | u32 count |
//   count x { u32 name_len | name | u32 ndim | i64 dims[ndim] | f32 data[prod(dims)] }
class WeightArchive {
 public:
  WeightArchive() = default;

  static WeightArchive load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  void put(const std::string& name, const torch::Tensor& tensor);
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  // Throws IoError naming the tensor when absent.
  const torch::Tensor& at(const std::string& name) const;
  std::vector<std::string> names() const;
  size_t size() const { return tensors_.size(); }

 private:
  std::map<std::string, torch::Tensor> tensors_;
};

// Directory holding downloaded/converted archives; COLORLOSS_WEIGHTS_DIR when
// set, otherwise ~/.cache/colorloss.
std::filesystem::path weight_cache_dir();

}  // namespace colorloss
