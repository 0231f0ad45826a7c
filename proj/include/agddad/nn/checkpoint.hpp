#pragma once

#include <filesystem>
#include <json.hpp>
#include <string>
#include <utility>
#include <vector>

namespace agddad::nn {

// Versioned checkpoint container: a JSON header (kind, config echo, schedule
// fingerprint, array directory) followed by raw little-endian float64 blobs.
// Doubles are written verbatim, so save -> load -> predict is bitwise stable.
struct Checkpoint {
  nlohmann::json meta;
  std::vector<std::pair<std::string, std::vector<double>>> arrays;

  const std::vector<double>& array(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace agddad::nn
