#pragma once

#include <optional>
#include <random>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "tio/image.hpp"

namespace tio {

/// Bounds on a random homography built about the image center.
struct HomographyMagnitudes {
  double rotation = 0.0;     // max |angle|, radians
  double scale = 0.0;        // scale drawn from [1 - scale, 1 + scale]
  double perspective = 0.0;  // max |h20|, |h21| in half-size-normalized coordinates
  double translation = 0.0;  // max shift as a fraction of the image size
};

/// Maps a pixel through H; nullopt when the point goes to infinity or behind.
std::optional<Eigen::Vector2d> applyHomography(const Eigen::Matrix3d& H, const Eigen::Vector2d& p);

/// Scale by `s` about the image center.
Eigen::Matrix3d centeredScale(int width, int height, double s);

/// Random homography; identity when all magnitudes are zero. Draws again
/// whenever |det| < 1e-6.
Eigen::Matrix3d sampleHomography(int width, int height, const HomographyMagnitudes& mag, std::mt19937_64& rng);

/// out(x) = src(H^{-1} x) with bilinear resampling; samples outside the source
/// clamp to the nearest border pixel.
RadiometricImage warpImage(const RadiometricImage& src, const Eigen::Matrix3d& H);

/// 1 where H^{-1} x falls inside the source image.
Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> warpValidMask(int width, int height,
                                                                                  const Eigen::Matrix3d& H);

}  // namespace tio
