#include "colorloss/weights.hpp"

#include <array>
#include <bit>
#include <cstdlib>
#include <cstring>
#include <fstream>

#include "colorloss/error.hpp"

namespace colorloss {
namespace {

static_assert(std::endian::native == std::endian::little, "archive IO assumes little-endian");

constexpr std::array<char, 4> kMagic = {'C', 'L', 'W', 'A'};
constexpr uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::filesystem::path& path) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw IoError("truncated weight archive " + path.string());
  return value;
}

}  // namespace

WeightArchive WeightArchive::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open weight archive " + path.string());
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw IoError("not a weight archive: " + path.string());
  const auto version = read_pod<uint32_t>(in, path);
  if (version != kVersion) {
    throw IoError("unsupported weight archive version " + std::to_string(version));
  }
  const auto count = read_pod<uint32_t>(in, path);
  WeightArchive archive;
  for (uint32_t i = 0; i < count; ++i) {
    const auto name_len = read_pod<uint32_t>(in, path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const auto ndim = read_pod<uint32_t>(in, path);
    std::vector<int64_t> dims(ndim);
    for (auto& d : dims) d = read_pod<int64_t>(in, path);
    auto tensor = torch::empty(dims, torch::kFloat32);
    in.read(reinterpret_cast<char*>(tensor.data_ptr<float>()),
            static_cast<std::streamsize>(tensor.numel() * sizeof(float)));
    if (!in) throw IoError("truncated weight archive " + path.string() + " at '" + name + "'");
    archive.tensors_.emplace(std::move(name), std::move(tensor));
  }
  return archive;
}

void WeightArchive::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write weight archive " + path.string());
  out.write(kMagic.data(), kMagic.size());
  write_pod<uint32_t>(out, kVersion);
  write_pod<uint32_t>(out, static_cast<uint32_t>(tensors_.size()));
  for (const auto& [name, tensor] : tensors_) {
    write_pod<uint32_t>(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<uint32_t>(out, static_cast<uint32_t>(tensor.dim()));
    for (auto d : tensor.sizes()) write_pod<int64_t>(out, d);
    out.write(reinterpret_cast<const char*>(tensor.data_ptr<float>()),
              static_cast<std::streamsize>(tensor.numel() * sizeof(float)));
  }
  if (!out) throw IoError("failed writing weight archive " + path.string());
}

void WeightArchive::put(const std::string& name, const torch::Tensor& tensor) {
  tensors_[name] = tensor.detach().to(torch::kFloat32).contiguous().clone();
}

const torch::Tensor& WeightArchive::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw IoError("weight archive has no tensor '" + name + "'");
  return it->second;
}

std::vector<std::string> WeightArchive::names() const {
  std::vector<std::string> out;
  out.reserve(tensors_.size());
  for (const auto& entry : tensors_) out.push_back(entry.first);
  return out;
}

std::filesystem::path weight_cache_dir() {
  if (const char* dir = std::getenv("COLORLOSS_WEIGHTS_DIR"); dir && *dir) return dir;
  if (const char* home = std::getenv("HOME"); home && *home) {
    return std::filesystem::path(home) / ".cache" / "colorloss";
  }
  return std::filesystem::path(".colorloss_weights");
}

}  // namespace colorloss
