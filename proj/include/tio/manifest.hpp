#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tio/config.hpp"

namespace tio {

/// SHA-1 of "blob <size>\0<content>", as git computes object ids.
std::string gitBlobHash(const std::string& content);

/// Blob hash of a file, or for a directory the hash of its sorted
/// "<relative path> <blob hash>" lines. Throws IoError for missing paths.
std::string contentHash(const std::filesystem::path& path);

/// Combined hash over several inputs, in the given order.
std::string contentHash(const std::vector<std::filesystem::path>& paths);

struct RunManifest {
  std::string command;
  Config config;  // resolved settings
  std::vector<std::filesystem::path> inputs;
  std::filesystem::path output;
  std::uint64_t seed = 0;
  std::string input_hash;

  Config toConfig() const;
  /// Writes `run_manifest` into the output directory.
  void write() const;
};

}  // namespace tio
