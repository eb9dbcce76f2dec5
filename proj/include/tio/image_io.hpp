#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "tio/image.hpp"

namespace tio {

/// Raised for unreadable, truncated or malformed files; the message names the path.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Pixel values are rounded to the nearest integer count on write.
void writePgm16(const std::filesystem::path& path, const RadiometricImage& image);
RadiometricImage readPgm16(const std::filesystem::path& path, double timestamp = 0.0);

void writeTiff16(const std::filesystem::path& path, const RadiometricImage& image);
RadiometricImage readTiff16(const std::filesystem::path& path, double timestamp = 0.0);

/// Dispatches on extension (.pgm / .tif / .tiff).
RadiometricImage readImage(const std::filesystem::path& path, double timestamp = 0.0);

struct FrameEntry {
  double timestamp = 0.0;
  std::string filename;
};

/// frames.csv with header `timestamp_s,filename`.
std::vector<FrameEntry> readFrameIndex(const std::filesystem::path& dir);
void writeFrameIndex(const std::filesystem::path& dir, const std::vector<FrameEntry>& frames);

/// Loads every 16-bit PGM in `dir` (sorted by name) as a de-meaned flat-field pattern.
FpnBank loadFpnBank(const std::filesystem::path& dir);

}  // namespace tio
