#pragma once

#include <optional>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "tio/detector.hpp"
#include "tio/image.hpp"

namespace tio {

class TrackingError : public std::runtime_error {
 public:
  enum class Kind { kOutOfBounds, kDegenerate, kUntrackable };
  TrackingError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Reference template. Pixel centers sit on integer coordinates.
struct Patch {
  Eigen::Vector2d center = Eigen::Vector2d::Zero();
  int half_size = 5;
  ImageArray values;  // (2h+1)^2 raw counts, row-major over (dy, dx)
  double mean = 0.0;
  // gradients of values / mean, same layout
  ImageArray grad_x;
  ImageArray grad_y;

  int side() const { return 2 * half_size + 1; }
};

/// Extracts a patch (and its normalized gradient) by bilinear sampling.
/// Throws TrackingError: kOutOfBounds when the support plus a one-pixel
/// gradient border leaves the image, kDegenerate when the mean is not positive.
Patch extractPatch(const RadiometricImage& image, const Eigen::Vector2d& center, int half_size);

/// x' = R(angle) (x - c) + c + translation for support points around the patch center c.
struct WarpSE2 {
  double angle = 0.0;
  Eigen::Vector2d translation = Eigen::Vector2d::Zero();

  Eigen::Vector2d apply(const Eigen::Vector2d& offset) const;
};

enum class WarpModel { kTranslation, kSE2 };

struct TrackerConfig {
  int half_size = 5;
  int levels = 3;
  int max_iterations = 30;
  double convergence = 0.01;  // pixels
  double cull_threshold = 0.0025;
  int grid_cell = 20;
  int max_features = 160;
  WarpModel model = WarpModel::kTranslation;
  double min_eigenvalue = 1e-6;  // spawn threshold on the normalized Hessian
  double detection_threshold = 0.015;
  int nms_radius = 8;
  bool remove_column_offsets = false;  // align on residuals with per-column means removed (column FPN)

  void validate() const;
};

struct ResidualResult {
  Eigen::VectorXd residual;
  double target_mean = 0.0;
};

/// r_i = I_t+1(W x_i) / mean_t+1 - I_t(x_i) / mean_t.
/// Throws TrackingError (kOutOfBounds, kDegenerate).
ResidualResult radiometricResidual(const Patch& patch, const RadiometricImage& target, const WarpSE2& warp);

struct AlignResult {
  WarpSE2 warp;
  double dissimilarity = 0.0;  // mean squared normalized residual
  bool converged = false;
  int iterations = 0;
  bool blocked = false;  // stopped because every candidate step left the image
};

/// Inverse-compositional Gauss-Newton with step-halving. Throws TrackingError
/// (kUntrackable on a singular normal matrix, kOutOfBounds when the initial
/// warp leaves the image).
AlignResult alignPatch(const Patch& patch, const RadiometricImage& target, const WarpSE2& initial,
                       const TrackerConfig& cfg, int max_iterations = -1);

struct SeedResult {
  Eigen::Vector2d point;
  bool fallback = false;  // prediction behind the camera; zero-motion seed used
};

/// Rotation-only prediction x' = K R_cam K^-1 x. delta_body rotates body frame
/// t+1 into body frame t; R_bc is the camera-to-body rotation.
SeedResult imuSeed(const Eigen::Quaterniond& delta_body, const Eigen::Matrix3d& R_bc, const Eigen::Matrix3d& K,
                   const Eigen::Vector2d& point);

enum class TrackStatus { kAlive, kCulled };

struct Observation {
  int frame = 0;
  Eigen::Vector2d position = Eigen::Vector2d::Zero();
};

struct FeatureTrack {
  int id = 0;
  std::vector<Observation> observations;
  TrackStatus status = TrackStatus::kAlive;

  int length() const { return static_cast<int>(observations.size()); }
  const Eigen::Vector2d& position() const { return observations.back().position; }
};

/// A track together with its spawn-time reference patches.
struct TrackedFeature {
  FeatureTrack track;
  std::vector<std::optional<Patch>> reference;  // per pyramid level; empty where the support does not fit
  std::optional<Patch> wide;                      // double half-size at the coarsest usable level
  int wide_level = -1;
  double angle = 0.0;
};

/// Level-0 pixel coordinates to level k (2x2 box pyramid).
inline Eigen::Vector2d toLevel(const Eigen::Vector2d& p, int level) {
  const double s = static_cast<double>(1 << level);
  return (p.array() + 0.5) / s - 0.5;
}
inline Eigen::Vector2d fromLevel(const Eigen::Vector2d& p, int level) {
  const double s = static_cast<double>(1 << level);
  return (p.array() + 0.5) * s - 0.5;
}

struct RotationPrior {
  Eigen::Quaterniond delta_body = Eigen::Quaterniond::Identity();
  Eigen::Matrix3d R_bc = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
};

struct TrackFrameStats {
  int tracked = 0;
  int culled = 0;
};

/// Aligns every live track into `next`; failures are culled. With `nuc_gap`
/// the coarsest level uses the double-size patch and twice the iterations.
TrackFrameStats trackFrame(std::vector<TrackedFeature>& tracks, const ImagePyramid& next, int frame,
                           const std::optional<RotationPrior>& prior, const TrackerConfig& cfg, bool nuc_gap = false);

/// Spawns tracks from heatmap keypoints in grid cells without a live track.
int replenishFeatures(std::vector<TrackedFeature>& tracks, const ImagePyramid& pyramid, const ConfidenceHeatmap& heatmap,
                      int frame, int& next_id, const TrackerConfig& cfg);

/// Spawns tracks at explicit positions (no grid or budget checks); returns the number accepted.
int spawnTracks(std::vector<TrackedFeature>& tracks, const ImagePyramid& pyramid, const std::vector<Eigen::Vector2d>& points,
                int frame, int& next_id, const TrackerConfig& cfg);

/// Drops culled tracks.
void pruneCulled(std::vector<TrackedFeature>& tracks);

int liveTrackCount(const std::vector<TrackedFeature>& tracks);

}  // namespace tio
