#pragma once

#include <functional>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "tio/camera.hpp"
#include "tio/dataset.hpp"
#include "tio/detector.hpp"
#include "tio/estimator.hpp"
#include "tio/eval.hpp"
#include "tio/imu.hpp"
#include "tio/net.hpp"
#include "tio/tracker.hpp"

namespace tio {

struct OdometryConfig {
  CameraModel camera;
  ImuNoiseParams imu;
  TrackerConfig tracker;
  SolverConfig solver;
  SalientPointConfig salient;  // replenishment heatmap when no network is given
  double init_window = 0.5;    // s of stationary IMU at the start
  double outlier_threshold = 4.5;      // px, after each solve
  double max_keyframe_interval = 0.5;  // s
  double replenish_ratio = 0.9;        // of the feature budget
  // initial state prior; position and yaw are gauge-fixed
  double prior_velocity = 0.01;   // m/s
  double prior_tilt = 0.02;       // rad
  double prior_accel_bias = 0.1;  // m/s^2
  double prior_gyro_bias = 0.01;  // rad/s

  void validate() const;
};

/// Tracker output for one frame, handed to the back-end unchanged.
struct FramePacket {
  int frame = 0;
  double t = 0.0;
  std::vector<std::pair<int, Eigen::Vector2d>> features;  // (track id, pixel)
  bool after_gap = false;
  double detect_seconds = -1.0;  // negative when detection did not run
  double track_seconds = 0.0;
};

/// Feature front-end: pyramid KLT with gyro-seeded predictions, replenished
/// from the salient heatmap or a detector network.
class Frontend {
 public:
  Frontend(const OdometryConfig& cfg, const std::vector<ImuSample>& imu, const Eigen::Vector3d& gyro_bias,
           const NetworkWeights* weights = nullptr);
  FramePacket process(const RadiometricImage& image, int frame);

 private:
  ConfidenceHeatmap heatmap(const RadiometricImage& image) const;

  OdometryConfig cfg_;
  const std::vector<ImuSample>& imu_;
  Eigen::Vector3d gyro_bias_;
  const NetworkWeights* weights_;
  std::vector<TrackedFeature> tracks_;
  int next_id_ = 0;
  std::optional<double> last_t_;
  double nominal_dt_ = 0.0;
};

struct KeyframeRecord {
  int frame = 0;
  FrameState state;  // latest estimate, final once marginalized
  int observations = 0;
  bool imu_only = false;
  SolveReport report;
};

/// Sliding-window back-end consuming frame packets.
class OdometryBackend {
 public:
  OdometryBackend(const OdometryConfig& cfg, const std::vector<ImuSample>& imu, const FrameState& initial,
                  const Eigen::Vector3d& gravity_w);
  void process(const FramePacket& packet);

  const std::vector<KeyframeRecord>& keyframes() const { return keyframes_; }
  std::vector<StampedPose> trajectory() const;
  const SlidingWindow& window() const { return window_; }
  int diverged_solves() const { return diverged_; }
  bool finite() const;
  TimingLog& timing() { return timing_; }

 private:
  bool isKeyframe(const FramePacket& packet) const;
  void addKeyframe(const FramePacket& packet);

  OdometryConfig cfg_;
  const std::vector<ImuSample>& imu_;
  SlidingWindow window_;
  std::vector<KeyframeRecord> keyframes_;
  std::map<int, Eigen::Vector2d> last_keyframe_features_;
  double last_keyframe_t_ = 0.0;
  int diverged_ = 0;
  TimingLog timing_;
};

struct OdometryResult {
  std::vector<KeyframeRecord> keyframes;
  std::vector<StampedPose> trajectory;
  TimingLog timing;
  int frames = 0;
  int diverged_solves = 0;
  bool finite = true;
  int tracked_after_gap = -1;  // features in the first frame after the first NUC gap
};

/// Static initialization, then the front-end and back-end as a two-stage
/// pipeline. `frames(i)` yields the i-th image of `count`.
OdometryResult runOdometry(const OdometryConfig& cfg, const std::vector<ImuSample>& imu, int count,
                           const std::function<RadiometricImage(int)>& frames, const NetworkWeights* weights = nullptr);

OdometryResult runOdometry(const OdometryConfig& cfg, const Dataset& dataset, const NetworkWeights* weights = nullptr);

}  // namespace tio
