#pragma once

#include <filesystem>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "tio/image.hpp"
#include "tio/image_io.hpp"
#include "tio/imu.hpp"

namespace tio {

struct StampedPose {
  double t = 0.0;
  Eigen::Vector3d p = Eigen::Vector3d::Zero();
  Eigen::Quaterniond q = Eigen::Quaterniond::Identity();
};

/// `timestamp_s,wx,wy,wz,ax,ay,az`
std::vector<ImuSample> readImuCsv(const std::filesystem::path& path);
void writeImuCsv(const std::filesystem::path& path, const std::vector<ImuSample>& samples);

/// TUM text: `timestamp tx ty tz qx qy qz qw`, `#` comments allowed.
std::vector<StampedPose> readTum(const std::filesystem::path& path);
void writeTum(const std::filesystem::path& path, const std::vector<StampedPose>& poses);

/// A sequence directory: frames.csv + images, imu.csv, optional groundtruth.txt.
struct Dataset {
  std::filesystem::path dir;
  std::vector<FrameEntry> frames;
  std::vector<ImuSample> imu;
  std::vector<StampedPose> groundtruth;

  RadiometricImage frame(std::size_t i) const;
};

/// Throws IoError naming the missing or malformed file.
Dataset loadDataset(const std::filesystem::path& dir);

}  // namespace tio
