#pragma once

#include <map>
#include <optional>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "tio/camera.hpp"
#include "tio/imu.hpp"
#include "tio/marginalization.hpp"

namespace tio {

struct SolverConfig {
  int window_size = 10;
  int max_iterations = 10;
  double lambda_init = 1e-4;
  double lambda_scale = 10.0;
  double reprojection_sigma = 1.5;  // pixels
  double huber_threshold = 3.75;    // pixels, 2.5 sigma
  double cost_tolerance = 1e-9;     // relative decrease that ends the iterations
  double absolute_cost_floor = 1e-12;
  double min_parallax_deg = 1.0;
  double keyframe_parallax = 10.0;     // pixels
  double keyframe_track_ratio = 0.6;   // of the feature budget
  double prior_eigen_floor = 1e-8;
  bool use_schur = true;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

// State perturbation layout inside a 15-block: dp, dtheta (world frame, q = Exp(dtheta) q), dv, dba, dbg.
inline constexpr int kStateDim = 15;
inline constexpr int kDp = 0;
inline constexpr int kDtheta = 3;
inline constexpr int kDv = 6;
inline constexpr int kDba = 9;
inline constexpr int kDbg = 12;

enum class LandmarkStatus { kPending, kTriangulated };

struct LandmarkObservation {
  int frame = 0;  // keyframe id
  Eigen::Vector2d pixel = Eigen::Vector2d::Zero();
};

struct Landmark {
  int id = 0;
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  LandmarkStatus status = LandmarkStatus::kPending;
  std::vector<LandmarkObservation> observations;
};

struct ReprojectionResult {
  Eigen::Vector2d residual = Eigen::Vector2d::Zero();
  Eigen::Matrix<double, 2, 6> d_pose = Eigen::Matrix<double, 2, 6>::Zero();  // (dp, dtheta)
  Eigen::Matrix<double, 2, 3> d_landmark = Eigen::Matrix<double, 2, 3>::Zero();
  bool valid = false;  // false on a cheirality violation
};

/// Observed pixel minus the projection of l_w through world -> body -> camera.
ReprojectionResult reprojectionResidual(const FrameState& state, const Eigen::Vector3d& l_w, const Eigen::Vector2d& obs,
                                        const CameraModel& cam);

/// Linear prior on a set of keyframes, expressed about their linearization states.
struct MarginalizationPrior {
  std::vector<int> frames;
  std::vector<FrameState> linearization;
  LinearPrior factor;

  bool empty() const { return frames.empty() || factor.empty(); }
};

/// Local difference x [-] x_lin in the perturbation layout.
Vector15d stateDifference(const FrameState& x, const FrameState& x_lin);

/// Diagonal prior on one state; non-positive sigmas leave that direction free.
MarginalizationPrior makeStatePrior(int frame, const FrameState& state, const Vector15d& sigmas);

struct SlidingWindow {
  CameraModel camera;
  Eigen::Vector3d gravity = Eigen::Vector3d(0.0, 0.0, -9.81);
  std::vector<int> frame_ids;
  std::vector<FrameState> states;
  std::vector<PreintegratedDelta> deltas;  // deltas[k] joins states[k] and states[k + 1]
  std::map<int, Landmark> landmarks;
  MarginalizationPrior prior;

  int size() const { return static_cast<int>(states.size()); }
  int indexOf(int frame_id) const;

  /// Appends a keyframe; `delta` must join the current newest state to it (ignored for the first).
  void addKeyframe(int frame_id, const FrameState& state, const PreintegratedDelta& delta);

  void addObservation(int landmark_id, int frame_id, const Eigen::Vector2d& pixel);
};

/// Linear DLT over all views, accepted when the ray parallax reaches the
/// threshold, every view has positive depth and reprojects within 3 sigma.
std::optional<Eigen::Vector3d> triangulate(const std::vector<LandmarkObservation>& observations,
                                           const SlidingWindow& window, const SolverConfig& cfg);

/// Tries every pending landmark with at least two observations; returns how many succeeded.
int triangulatePending(SlidingWindow& window, const SolverConfig& cfg);

struct CostBreakdown {
  double reprojection = 0.0;
  double imu = 0.0;
  double prior = 0.0;
  double total() const { return reprojection + imu + prior; }
};

CostBreakdown windowCost(const SlidingWindow& window, const SolverConfig& cfg);

struct SolveReport {
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
  bool converged = false;
  bool diverged = false;  // non-finite cost; the window was rolled back
};

/// Levenberg-Marquardt over all states and triangulated landmarks. The first
/// window frame keeps its position and yaw.
SolveReport solveWindow(SlidingWindow& window, const SolverConfig& cfg);

/// Re-integrates deltas whose linearization biases drifted from the estimates.
int repropagateDeltas(SlidingWindow& window, double max_dba = 0.05, double max_dbg = 0.005);

/// Removes the oldest keyframe: its IMU factor, prior and exclusive landmarks are
/// folded into a new prior on the remaining states.
void marginalizeOldest(SlidingWindow& window, const SolverConfig& cfg);

/// Drops observations whose reprojection error exceeds `threshold` pixels; landmarks
/// left with fewer than two observations return to pending. Returns observations removed.
int rejectOutliers(SlidingWindow& window, double threshold);

bool selectKeyframe(double mean_parallax, int tracked, int budget, const SolverConfig& cfg);

}  // namespace tio
