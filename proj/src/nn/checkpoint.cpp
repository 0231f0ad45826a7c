#include "agddad/nn/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace agddad::nn {

namespace {
constexpr char kMagic[8] = {'A', 'G', 'D', 'D', 'C', 'K', 'P', '1'};
}

const std::vector<double>& Checkpoint::array(const std::string& name) const {
  for (const auto& [n, a] : arrays) {
    if (n == name) return a;
  }
  throw std::runtime_error("checkpoint: missing array '" + name + "'");
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json meta = ckpt.meta;
  nlohmann::json dir = nlohmann::json::array();
  for (const auto& [name, a] : ckpt.arrays) {
    dir.push_back({{"name", name}, {"count", a.size()}});
  }
  meta["arrays"] = dir;
  const std::string header = meta.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  const uint64_t hlen = header.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& [name, a] : ckpt.arrays) {
    out.write(reinterpret_cast<const char*>(a.data()),
              static_cast<std::streamsize>(a.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("checkpoint: short write to " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot read " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path.string());
  }
  uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string header(hlen, '\0');
  in.read(header.data(), static_cast<std::streamsize>(hlen));
  Checkpoint ckpt;
  ckpt.meta = nlohmann::json::parse(header);
  for (const auto& entry : ckpt.meta.at("arrays")) {
    const std::string name = entry.at("name").get<std::string>();
    const size_t count = entry.at("count").get<size_t>();
    std::vector<double> a(count);
    in.read(reinterpret_cast<char*>(a.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    ckpt.arrays.emplace_back(name, std::move(a));
  }
  if (!in) throw std::runtime_error("checkpoint: truncated file " + path.string());
  return ckpt;
}

}  // namespace agddad::nn
